"""Command line entry point: simulate, locate, calibrate, campaign."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .feeder import FeederError, partition
from .harness import CampaignError, load_campaign, report_csv, report_json, resolve_feeder, run_campaign, summary_rows
from .locator import CalibrationError, LocatorConfig, LocatorError, calibrate_threshold, locate
from .measurements import MeasurementSet, NoiseProfile, synthesize
from .powerflow import FaultScenario, PowerflowError, measure_true, run_powerflow


class UsageError(Exception):
    pass


def _parser():
    p = argparse.ArgumentParser(prog="pmufault", description="Micro-PMU based faulted line location")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a (faulted) power flow and dump phasors and measurements")
    s.add_argument("--feeder", required=True, help="feeder JSON file or bundled name (feeder34, feeder123)")
    s.add_argument("--scenario", help="fault scenario JSON file; omit for a no-fault case")
    s.add_argument("--seed", type=int, help="noise seed; omit for exact measurements")
    s.add_argument("--out", required=True, help="output prefix; writes <out>_phasors.csv and <out>_measurements.csv")

    s = sub.add_parser("locate", help="locate the faulted line from a measurement dump")
    s.add_argument("--feeder", required=True)
    s.add_argument("--measurements", required=True, help="measurement CSV written by 'simulate'")
    s.add_argument("--threshold", type=float, default=LocatorConfig().threshold)
    s.add_argument("--out", help="write the verdict JSON here instead of stdout")

    s = sub.add_parser("calibrate", help="no-fault Monte Carlo threshold calibration")
    s.add_argument("--feeder", required=True)
    s.add_argument("--trials", type=int, default=500)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="write the calibration JSON here as well")

    s = sub.add_parser("campaign", help="run a Monte Carlo campaign file")
    s.add_argument("--campaign", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--threshold", type=float, help="fixed threshold overriding the campaign file")
    s.add_argument("--trials", type=int, help="trials per cell overriding the campaign file")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    return p


def _scenario(path):
    try:
        return FaultScenario.from_dict(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: malformed JSON ({exc.msg})")
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{path}: bad scenario ({exc})")


def cmd_simulate(a):
    model = resolve_feeder(a.feeder)
    scenario = _scenario(a.scenario) if a.scenario else None
    if scenario is not None and scenario.branch not in model.branches:
        raise UsageError(f"scenario branch {scenario.branch!r} is not in the feeder")
    state = run_powerflow(model, scenario)
    exact = measure_true(state, model)
    # without a seed the exact values are kept but still carry the usual variances
    ms = synthesize(exact, NoiseProfile(), seed=a.seed, noise=a.seed is not None)
    state.to_csv(f"{a.out}_phasors.csv")
    ms.to_csv(f"{a.out}_measurements.csv")
    print(f"wrote {a.out}_phasors.csv and {a.out}_measurements.csv ({len(ms)} measurements)")


def cmd_locate(a):
    model = resolve_feeder(a.feeder)
    try:
        ms = MeasurementSet.from_csv(a.measurements)
    except (KeyError, ValueError) as exc:
        raise UsageError(f"{a.measurements}: malformed measurement file ({exc})")
    verdict = locate(model, ms, LocatorConfig(threshold=a.threshold), partition(model))
    text = json.dumps(verdict.to_dict(), indent=1)
    if a.out:
        Path(a.out).write_text(text + "\n")
    print(text)


def cmd_calibrate(a):
    model = resolve_feeder(a.feeder)
    cal = calibrate_threshold(model, NoiseProfile(), a.trials, seed=a.seed)
    doc = {"threshold": cal.threshold, "quantile_value": cal.quantile_value, "trials": a.trials,
           "excluded": cal.excluded, "seed": a.seed}
    if a.out:
        Path(a.out).write_text(json.dumps(doc, indent=1) + "\n")
    print(f"{cal.threshold:.6g}")


def cmd_campaign(a):
    campaign = load_campaign(a.campaign)
    if a.seed is not None:
        campaign.seed = a.seed
    if a.trials is not None:
        if a.trials < 1:
            raise UsageError("--trials must be at least 1")
        campaign.trials = a.trials
    report = run_campaign(campaign, workers=a.workers, threshold=a.threshold)
    text = report_csv(report, campaign.record_timing) if a.format == "csv" else report_json(report, campaign.record_timing)
    Path(a.out).write_text(text)
    print(f"threshold {report.threshold:.6g}")
    print(f"{'type':>6} {'alpha':>8} {'beta':>8} {'1-a-b':>8} {'max err':>8}")
    for row in summary_rows(report):
        err = "-" if row["max_error_hops"] is None else f"{row['max_error_hops']} br"
        print(f"{row['fault_type']:>6} {100 * row['alpha']:7.2f}% {100 * row['beta']:7.2f}% "
              f"{100 * row['other']:7.2f}% {err:>8}")


COMMANDS = {"simulate": cmd_simulate, "locate": cmd_locate, "calibrate": cmd_calibrate, "campaign": cmd_campaign}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        COMMANDS[args.command](args)
    except (UsageError, FeederError, CampaignError, CalibrationError, LocatorError, PowerflowError,
            FileNotFoundError) as exc:
        print(f"pmufault {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
