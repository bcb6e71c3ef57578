"""Per-branch and per-position accuracy on every three-phase branch of the 34-node feeder.

The acceptance campaigns fault only the long trunk branches; this table shows
how resolution drops on short ones.

    python demos/branch_accuracy.py [fault_type] [impedance_ohm] [trials]
"""
import sys

from pmufault.harness import Campaign, bundled_feeder, run_campaign
from pmufault.locator import calibrate_threshold
from pmufault.measurements import NoiseProfile

fault_type = sys.argv[1] if len(sys.argv) > 1 else "LG"
zf = float(sys.argv[2]) if len(sys.argv) > 2 else 50.0
trials = int(sys.argv[3]) if len(sys.argv) > 3 else 10

model = bundled_feeder("feeder34")
branches = tuple(b for b in sorted(model.branches, key=lambda b: model.order.index(model.branches[b].to_node))
                 if model.branches[b].phases == "abc")
eps = calibrate_threshold(model, NoiseProfile(), 500, seed=101).threshold
camp = Campaign("feeder34", (fault_type,), (zf,), branches, (0.25, 0.5, 0.75), trials, seed=11, record_timing=False)
rep = run_campaign(camp, threshold=eps)

print(f"{fault_type} {zf:g} ohm, {trials} trials per cell, eps = {eps:.1f}")
print(f"{'branch':>9} {'km':>6} {'alpha':>6} {'a+b':>6} {'max':>4}   alpha at d = 0.25 / 0.50 / 0.75")
for b in branches:
    t = rep.tally(branch=b)
    by_d = " / ".join(f"{rep.tally(branch=b, position=d).alpha:.2f}" for d in camp.positions)
    print(f"{b:>9} {model.branches[b].length_m / 1e3:6.2f} {t.alpha:6.2f} {t.alpha + t.beta:6.2f} "
          f"{t.max_error_hops:>4}   {by_d}")
t = rep.overall
print(f"{'all':>9} {'':>6} {t.alpha:6.2f} {t.alpha + t.beta:6.2f} {t.max_error_hops:>4}")
