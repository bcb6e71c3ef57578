"""Two-step faulted-line search.

Step one estimates every subgraph without a fault model and picks the one
with the largest weighted measurement residual (WMR).  Step two walks the
nested path chain of that subgraph.  The WMR of path P_s is the smallest
residual the subgraph can reach when a single fault injection is allowed
anywhere *outside* P_s: it stays at noise level while the fault lies
downstream of the path and jumps once the path swallows the faulted
branch.  The faulted line is the boundary increment of the first path whose
WMR exceeds the threshold.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .dsse import UnobservableError, WlsConfig, assemble, estimate, scan_fault_hypotheses, subgraph_scope
from .feeder import PHASES, FeederModel, SubgraphPartition, enumerate_paths, partition
from .measurements import DegenerateVoltageError, MeasurementSet, NoiseProfile, synthesize
from .powerflow import measure_true, run_powerflow

ESTIMATION_ERRORS = (UnobservableError, DegenerateVoltageError, np.linalg.LinAlgError, ValueError)


class LocatorError(RuntimeError):
    def __init__(self, message, failed=()):
        super().__init__(message)
        self.failed = tuple(failed)


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class LocatorConfig:
    threshold: float = 500.0
    refine_laterals: bool = True
    threshold_mode: str = "fixed"  # or "calibrated"
    quantile: float = 0.999
    safety_factor: float = 2.0
    direct_sigma: float = 5.0
    no_fault_guard: bool = True
    wls: WlsConfig = WlsConfig()

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if self.threshold_mode not in ("fixed", "calibrated"):
            raise ValueError(f"unknown threshold mode {self.threshold_mode!r}")
        if not 0 < self.quantile < 1 or self.safety_factor <= 0:
            raise ValueError("calibration quantile must lie in (0, 1) and the safety factor be positive")

    def with_threshold(self, eps: float) -> "LocatorConfig":
        return LocatorConfig(eps, self.refine_laterals, self.threshold_mode, self.quantile,
                             self.safety_factor, self.direct_sigma, self.no_fault_guard, self.wls)


@dataclass
class LocationVerdict:
    status: str  # located | first_branch | direct | no_fault | not_found
    branch: str | None
    subgraph: int | None = None
    subgraph_wmr: tuple = ()
    tie: bool = False
    path_wmr: tuple = ()
    crossing: int | None = None
    refinement: tuple = ()  # (edge, wmr) in the order edges were added
    position: float | None = None
    timing_ms: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["subgraph_wmr"] = [float(v) for v in self.subgraph_wmr]
        d["path_wmr"] = [float(v) for v in self.path_wmr]
        d["refinement"] = [[e, float(v)] for e, v in self.refinement]
        return d


# ---------------------------------------------------------------------------
# Branches with micro-PMUs at both ends
# ---------------------------------------------------------------------------

def check_direct_branches(part: SubgraphPartition, measurements: MeasurementSet, n_sigma: float = 5.0):
    """Return the first two-PMU branch whose line equation is violated, else None.

    The voltage-drop residual V_u - V_v - Z I and, when both ends report the
    current, the current mismatch are compared with ``n_sigma`` times their
    propagated standard deviation.
    """
    model = part.model
    for bid in part.direct_branches:
        b = model.branches[bid]
        u, v = b.from_node, b.to_node
        vu, var_u, fu = measurements.voltage(u)
        vv, var_v, fv = measurements.voltage(v)
        ends = [n for n in (u, v) if bid in model.pmus[n].measured_branches]
        if not ends:
            continue
        cur, var_i, fi = measurements.current(bid, ends[0])
        z = model.z_pu(bid)
        idx = [PHASES.index(p) for p in b.phases]
        if not (fu[idx].all() and fv[idx].all() and fi[idx].all()):
            continue
        res = vu - vv - z @ cur
        for a in idx:
            var_r = var_u[a, 0] + var_v[a, 0] + sum(z[a, c].real ** 2 * var_i[c, 0] + z[a, c].imag ** 2 * var_i[c, 1]
                                                    for c in idx)
            var_x = var_u[a, 1] + var_v[a, 1] + sum(z[a, c].imag ** 2 * var_i[c, 0] + z[a, c].real ** 2 * var_i[c, 1]
                                                    for c in idx)
            if abs(res[a].real) > n_sigma * np.sqrt(var_r) or abs(res[a].imag) > n_sigma * np.sqrt(var_x):
                return bid
        if len(ends) == 2:
            cur2, var_i2, f2 = measurements.current(bid, ends[1])
            for a in idx:
                if f2[a] and (abs((cur[a] - cur2[a]).real) > n_sigma * np.sqrt(var_i[a, 0] + var_i2[a, 0])
                              or abs((cur[a] - cur2[a]).imag) > n_sigma * np.sqrt(var_i[a, 1] + var_i2[a, 1])):
                    return bid
    return None


# ---------------------------------------------------------------------------
# Step one
# ---------------------------------------------------------------------------

@dataclass
class SubgraphScores:
    best: int
    wmr: tuple
    tie: bool
    models: dict  # k -> LinearModel
    results: dict  # k -> WlsResult


def identify_faulted_subgraph(part: SubgraphPartition, measurements: MeasurementSet,
                              config: WlsConfig = WlsConfig(), cache: dict | None = None) -> SubgraphScores:
    """Estimate every subgraph and return K* = argmax J_K (lowest K on ties).

    ``cache`` maps K to a previously assembled model whose structure is
    reused when the same measurements are available.
    """
    models, results, failed = {}, {}, []
    for sg in part.subgraphs:
        try:
            if cache is not None and sg.index in cache:
                lm = cache[sg.index].rebind(measurements)
            else:
                lm = assemble(subgraph_scope(part, sg.index), measurements)
                if cache is not None:
                    cache[sg.index] = lm
            models[sg.index], results[sg.index] = lm, estimate(lm, config=config)
        except ESTIMATION_ERRORS as exc:
            failed.append((sg.index, str(exc)))
    if failed:
        raise LocatorError("subgraph estimation failed for " + ", ".join(f"G{k} ({m})" for k, m in failed),
                           [k for k, _ in failed])
    wmr = tuple(results[k].wmr for k in sorted(results))
    best = int(np.argmax(wmr)) + 1
    tie = sum(1 for j in wmr if j == wmr[best - 1]) > 1
    return SubgraphScores(best, wmr, tie, models, results)


# ---------------------------------------------------------------------------
# Step two
# ---------------------------------------------------------------------------

def path_wmr_trace(part: SubgraphPartition, k: int, scores: SubgraphScores, config: WlsConfig = WlsConfig()):
    """Path chain, WMR_1..WMR_S of subgraph ``k`` and the hypothesis scan behind it."""
    chain = enumerate_paths(part, k)
    lm = scores.models[k]
    scan = scan_fault_hypotheses(lm, config=config, start_voltages=scores.results[k].voltages)
    all_edges = set(part[k].edges)
    trace = []
    for path in chain.paths:
        rest = all_edges - path
        trace.append(scan.min_over(rest) if rest else scores.results[k].wmr)
    return chain, trace, scan


def locate_faulted_line(part: SubgraphPartition, k: int, scores: SubgraphScores,
                        config: LocatorConfig = LocatorConfig()) -> LocationVerdict:
    """Threshold-crossing search along the path chain of subgraph ``k``."""
    eps = config.threshold
    chain, trace, scan = path_wmr_trace(part, k, scores, config.wls)
    verdict = LocationVerdict("not_found", None, k, scores.wmr, scores.tie, tuple(trace))
    if trace[0] > eps:
        verdict.status, verdict.crossing = "first_branch", 1
        verdict.branch = chain.increments[0].trunk_edge
    else:
        for s in range(2, len(trace) + 1):
            if trace[s - 2] <= eps < trace[s - 1]:
                verdict.status, verdict.crossing = "located", s
                inc = chain.increments[s - 1]
                verdict.branch = inc.trunk_edge
                if len(inc.edges) > 1 and config.refine_laterals:
                    base = set(chain.paths[s - 2])
                    all_edges = set(part[k].edges)
                    steps = []
                    for e in inc.edges:
                        base.add(e)
                        rest = all_edges - base
                        j = scan.min_over(rest) if rest else scores.results[k].wmr
                        steps.append((e, j))
                        if j > eps:
                            verdict.branch = e
                            break
                    verdict.refinement = tuple(steps)
                break
    if verdict.branch is not None:
        verdict.position = scan.position.get(verdict.branch)
    return verdict


def locate(model: FeederModel, measurements: MeasurementSet, config: LocatorConfig = LocatorConfig(),
           part: SubgraphPartition | None = None, cache: dict | None = None) -> LocationVerdict:
    """Run both steps and record the wall time of each in milliseconds."""
    part = part or partition(model)
    t0 = time.perf_counter()
    direct = check_direct_branches(part, measurements, config.direct_sigma)
    if direct is not None:
        return LocationVerdict("direct", direct, timing_ms={"step1": 1e3 * (time.perf_counter() - t0), "step2": 0.0})
    scores = identify_faulted_subgraph(part, measurements, config.wls, cache)
    t1 = time.perf_counter()
    if config.no_fault_guard and max(scores.wmr) <= config.threshold:
        verdict = LocationVerdict("no_fault", None, None, scores.wmr, scores.tie)
    else:
        verdict = locate_faulted_line(part, scores.best, scores, config)
    t2 = time.perf_counter()
    verdict.timing_ms = {"step1": 1e3 * (t1 - t0), "step2": 1e3 * (t2 - t1)}
    return verdict


# ---------------------------------------------------------------------------
# Threshold calibration
# ---------------------------------------------------------------------------

@dataclass
class Calibration:
    threshold: float
    quantile_value: float
    samples: np.ndarray  # max path WMR per accepted trial
    subgraph_samples: np.ndarray  # trials x subgraphs
    excluded: int


def calibrate_threshold(model: FeederModel, profile: NoiseProfile, trials: int, seed: int = 0,
                        config: LocatorConfig = LocatorConfig(), part: SubgraphPartition | None = None) -> Calibration:
    """No-fault Monte Carlo: threshold = safety factor x quantile of the largest path WMR.

    Without a fault, every path WMR is the subgraph residual minimised over
    extra fault freedom, so the largest one over a chain is the plain
    subgraph WMR; the maximum over subgraphs is therefore what is sampled.
    """
    if trials < 100:
        raise CalibrationError("calibration needs at least 100 trials")
    part = part or partition(model)
    state = run_powerflow(model)
    exact = measure_true(state, model)
    rng = np.random.default_rng(seed)
    rows, excluded, cache = [], 0, {}
    for _ in range(trials):
        ms = synthesize(exact, profile, rng=rng)
        try:
            scores = identify_faulted_subgraph(part, ms, config.wls, cache)
        except LocatorError:
            excluded += 1
            continue
        if not all(r.converged for r in scores.results.values()):
            excluded += 1
            continue
        rows.append(scores.wmr)
    if excluded > 0.05 * trials:
        raise CalibrationError(f"{excluded} of {trials} calibration trials failed")
    per_sg = np.array(rows)
    samples = per_sg.max(axis=1)
    q = float(np.quantile(samples, config.quantile))
    return Calibration(config.safety_factor * max(q, 1.0), q, samples, per_sg, excluded)
