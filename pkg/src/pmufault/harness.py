"""Monte Carlo campaigns: simulate faults, add noise, locate, score.

Every trial draws its random numbers from a generator seeded with
``(seed, cell index, trial index)``, so results do not depend on the order
or the number of workers.
"""
from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .feeder import FeederModel, load_feeder, partition, tree_hops
from .locator import LocatorConfig, LocatorError, calibrate_threshold, locate
from .measurements import NoiseProfile, synthesize
from .powerflow import DEFAULT_PHASES, FAULT_TYPES, FaultScenario, PowerflowError, measure_true, run_powerflow

BUNDLED = ("feeder34", "feeder123")
CSV_COLUMNS = ["cell_id", "fault_type", "impedance_ohm", "branch", "position", "n_t", "n0", "n1", "n_other",
               "n_unlocated", "n_failed", "alpha", "beta", "other", "max_error_hops", "mean_ms", "p95_ms"]


class CampaignError(ValueError):
    def __init__(self, message, element=None):
        super().__init__(f"{element}: {message}" if element else message)
        self.element = element


def bundled_feeder(name: str) -> FeederModel:
    ref = resources.files("pmufault") / "data" / f"{name}.json"
    return load_feeder(ref.read_text())


def resolve_feeder(ref: str, base_dir: Path | None = None) -> FeederModel:
    if ref in BUNDLED:
        return bundled_feeder(ref)
    path = Path(ref)
    if not path.is_absolute() and base_dir is not None:
        path = base_dir / path
    return load_feeder(path)


# ---------------------------------------------------------------------------
# Campaign description
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Cell:
    index: int
    fault_type: str
    impedance_ohm: float
    branch: str
    position: float
    phases: str


@dataclass
class Campaign:
    feeder: str
    fault_types: tuple
    impedances_ohm: tuple
    branches: tuple
    positions: tuple
    trials: int
    seed: int = 0
    noise: NoiseProfile = NoiseProfile()
    perturbation: float = 0.0
    locator: LocatorConfig = LocatorConfig()
    calibration_trials: int = 500
    record_timing: bool = True
    phases: dict = field(default_factory=dict)
    name: str = "campaign"
    base_dir: Path | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise CampaignError("must be at least 1", "trials")
        if not (self.fault_types and self.impedances_ohm and self.branches and self.positions):
            raise CampaignError("scenario grid is empty", "grid")
        for ft in self.fault_types:
            if ft not in FAULT_TYPES:
                raise CampaignError(f"unknown fault type {ft!r}", "grid.fault_types")
        if not 0 <= self.perturbation < 1:
            raise CampaignError("must lie in [0, 1)", "perturbation.max_fraction")

    def cells(self) -> list:
        out = []
        for ft in self.fault_types:
            for z in self.impedances_ohm:
                for b in self.branches:
                    for d in self.positions:
                        out.append(Cell(len(out), ft, float(z), b, float(d), self.phases.get(ft, DEFAULT_PHASES[ft])))
        return out

    def model(self) -> FeederModel:
        return resolve_feeder(self.feeder, self.base_dir)


_TOP = {"name", "feeder", "grid", "noise", "perturbation", "trials", "seed", "locator", "record_timing"}
_GRID = {"fault_types", "impedances_ohm", "branches", "positions", "phases"}
_LOC = {"threshold", "threshold_mode", "refine_laterals", "quantile", "safety_factor", "calibration_trials",
        "direct_sigma", "no_fault_guard"}
_NOISE = {"pmu_mag_max_err", "pmu_ang_max_err", "pseudo_max_err", "dg_meter_max_err", "sigma_rule"}


def _keys(obj, allowed, where, required=()):
    if not isinstance(obj, dict):
        raise CampaignError("expected an object", where)
    extra = set(obj) - set(allowed)
    if extra:
        raise CampaignError(f"unknown field(s) {sorted(extra)}", where)
    missing = set(required) - set(obj)
    if missing:
        raise CampaignError(f"missing field(s) {sorted(missing)}", where)


def campaign_from_dict(doc: dict, base_dir: Path | None = None) -> Campaign:
    _keys(doc, _TOP, "campaign", ("feeder", "grid", "trials"))
    grid = doc["grid"]
    _keys(grid, _GRID, "grid", ("fault_types", "impedances_ohm", "branches", "positions"))
    noise = doc.get("noise", {})
    _keys(noise, _NOISE, "noise")
    pert = doc.get("perturbation", {})
    _keys(pert, {"max_fraction"}, "perturbation")
    loc = doc.get("locator", {})
    _keys(loc, _LOC, "locator")
    loc_kw = {k: v for k, v in loc.items() if k != "calibration_trials"}
    try:
        config = LocatorConfig(**loc_kw)
        profile = NoiseProfile(**noise)
    except (TypeError, ValueError) as exc:
        raise CampaignError(str(exc), "locator" if "threshold" in str(exc) or "quantile" in str(exc) else "noise")
    return Campaign(
        feeder=str(doc["feeder"]), fault_types=tuple(grid["fault_types"]),
        impedances_ohm=tuple(float(z) for z in grid["impedances_ohm"]), branches=tuple(grid["branches"]),
        positions=tuple(float(d) for d in grid["positions"]), trials=int(doc["trials"]),
        seed=int(doc.get("seed", 0)), noise=profile, perturbation=float(pert.get("max_fraction", 0.0)),
        locator=config, calibration_trials=int(loc.get("calibration_trials", 500)),
        record_timing=bool(doc.get("record_timing", True)), phases=dict(grid.get("phases", {})),
        name=str(doc.get("name", "campaign")), base_dir=base_dir,
    )


def load_campaign(path) -> Campaign:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CampaignError(f"malformed JSON ({exc.msg} at line {exc.lineno})", str(path))
    return campaign_from_dict(doc, path.parent)


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

def classify_verdict(true_branch: str, verdict_branch: str | None, model: FeederModel):
    """("exact", 0), ("adjacent", 1), ("other", hops) or ("unlocated", None)."""
    if verdict_branch is None:
        return "unlocated", None
    for b in (true_branch, verdict_branch):
        if b not in model.branches:
            raise KeyError(f"unknown branch {b}")
    h = tree_hops(model, true_branch, verdict_branch)
    return ("exact" if h == 0 else "adjacent" if h == 1 else "other"), h


@dataclass
class CellResult:
    cell: Cell
    n_t: int = 0
    n0: int = 0
    n1: int = 0
    n_other: int = 0  # includes unlocated trials
    n_unlocated: int = 0
    n_failed: int = 0
    max_error_hops: int | None = None
    times_ms: list = field(default_factory=list)
    verdicts: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def add(self, kind, hops, ms=None, branch=None):
        self.n_t += 1
        if kind == "exact":
            self.n0 += 1
        elif kind == "adjacent":
            self.n1 += 1
        elif kind == "failed":
            self.n_failed += 1
        else:
            self.n_other += 1
            if kind == "unlocated":
                self.n_unlocated += 1
        if hops is not None:
            self.max_error_hops = hops if self.max_error_hops is None else max(self.max_error_hops, hops)
        if ms is not None:
            self.times_ms.append(ms)
        self.verdicts.append(branch)


@dataclass
class Tally:
    n_t: int = 0
    n0: int = 0
    n1: int = 0
    n_other: int = 0
    n_unlocated: int = 0
    n_failed: int = 0
    max_error_hops: int | None = None
    times_ms: list = field(default_factory=list)

    def merge(self, c):
        self.n_t += c.n_t
        self.n0 += c.n0
        self.n1 += c.n1
        self.n_other += c.n_other
        self.n_unlocated += c.n_unlocated
        self.n_failed += c.n_failed
        if c.max_error_hops is not None:
            self.max_error_hops = c.max_error_hops if self.max_error_hops is None else max(self.max_error_hops,
                                                                                           c.max_error_hops)
        self.times_ms.extend(c.times_ms)
        return self

    @property
    def alpha(self):
        return self.n0 / self.n_t if self.n_t else 0.0

    @property
    def beta(self):
        return self.n1 / self.n_t if self.n_t else 0.0

    @property
    def other(self):
        return 1.0 - self.alpha - self.beta if self.n_t else 0.0

    @property
    def classified(self):
        return self.n_t - self.n_unlocated - self.n_failed

    @property
    def mean_ms(self):
        return float(np.mean(self.times_ms)) if self.times_ms else None

    @property
    def p95_ms(self):
        return float(np.percentile(self.times_ms, 95)) if self.times_ms else None


@dataclass
class AccuracyReport:
    campaign: str
    seed: int
    threshold: float
    cells: list

    def tally(self, **match) -> Tally:
        t = Tally()
        for c in self.cells:
            if all(getattr(c.cell, k) == v for k, v in match.items()):
                t.merge(c)
        return t

    @property
    def overall(self) -> Tally:
        return self.tally()

    def by(self, attr: str) -> dict:
        keys = []
        for c in self.cells:
            v = getattr(c.cell, attr)
            if v not in keys:
                keys.append(v)
        return {k: self.tally(**{attr: k}) for k in keys}


def _fmt(v, spec=".6f"):
    return "" if v is None else format(v, spec)


def _tally_row(t: Tally, timing: bool):
    return [t.n_t, t.n0, t.n1, t.n_other, t.n_unlocated, t.n_failed, _fmt(t.alpha), _fmt(t.beta), _fmt(t.other),
            "" if t.max_error_hops is None else t.max_error_hops,
            _fmt(t.mean_ms, ".3f") if timing else "", _fmt(t.p95_ms, ".3f") if timing else ""]


def report_csv(report: AccuracyReport, timing: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for c in report.cells:
        t = Tally().merge(c)
        w.writerow([c.cell.index, c.cell.fault_type, _fmt(c.cell.impedance_ohm, "g"), c.cell.branch,
                    _fmt(c.cell.position, "g")] + _tally_row(t, timing))
    return buf.getvalue()


def summary_rows(report: AccuracyReport, attr: str = "fault_type", timing: bool = True) -> list:
    """Rows in the layout of an accuracy table: key, alpha, beta, 1-alpha-beta, max error."""
    rows = []
    for key, t in report.by(attr).items():
        rows.append({attr: key, "n_t": t.n_t, "alpha": t.alpha, "beta": t.beta, "other": t.other,
                     "max_error_hops": t.max_error_hops, "n_failed": t.n_failed,
                     "mean_ms": t.mean_ms if timing else None})
    return rows


def report_json(report: AccuracyReport, timing: bool = True) -> str:
    def tally(t):
        return {"n_t": t.n_t, "n0": t.n0, "n1": t.n1, "n_other": t.n_other, "n_unlocated": t.n_unlocated,
                "n_failed": t.n_failed, "alpha": round(t.alpha, 12), "beta": round(t.beta, 12),
                "other": round(t.other, 12), "max_error_hops": t.max_error_hops,
                "mean_ms": round(t.mean_ms, 3) if timing and t.mean_ms is not None else None,
                "p95_ms": round(t.p95_ms, 3) if timing and t.p95_ms is not None else None}
    doc = {
        "campaign": report.campaign, "seed": report.seed, "threshold": round(report.threshold, 9),
        "overall": tally(report.overall),
        "by_fault_type": {k: tally(t) for k, t in report.by("fault_type").items()},
        "by_impedance_ohm": {format(k, "g"): tally(t) for k, t in report.by("impedance_ohm").items()},
        "cells": [dict(cell_id=c.cell.index, fault_type=c.cell.fault_type, impedance_ohm=c.cell.impedance_ohm,
                       branch=c.cell.branch, position=c.cell.position, verdicts=c.verdicts, failures=c.failures,
                       **tally(Tally().merge(c))) for c in report.cells],
    }
    return json.dumps(doc, indent=1, sort_keys=False) + "\n"


def write_report(report: AccuracyReport, path, fmt: str = "csv", timing: bool = True) -> None:
    text = report_csv(report, timing) if fmt == "csv" else report_json(report, timing)
    Path(path).write_text(text)


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------

def perturbed_model(model: FeederModel, max_fraction: float, rng) -> FeederModel:
    """Estimator's copy with R and X scaled by clipped zero-mean Gaussian factors."""
    if max_fraction <= 0:
        return model
    scale = {}
    for bid in model.branches:
        fr, fx = np.clip(rng.normal(0.0, max_fraction / 3.0, 2), -max_fraction, max_fraction)
        scale[bid] = (1.0 + fr, 1.0 + fx)
    return model.with_impedance_scale(scale)


def trial_rng(seed: int, cell: int, trial: int):
    return np.random.default_rng([seed, cell, trial])


def _run_cell(args):
    campaign, cell, model, part, config = args
    res = CellResult(cell)
    try:
        state = run_powerflow(model, FaultScenario(cell.branch, cell.position, cell.fault_type, cell.phases,
                                                   cell.impedance_ohm))
        exact = measure_true(state, model)
    except (PowerflowError, ValueError) as exc:
        for _ in range(campaign.trials):
            res.add("failed", None)
        res.failures.append(str(exc))
        return res
    cache = {}
    for t in range(campaign.trials):
        rng = trial_rng(campaign.seed, cell.index, t)
        ms = synthesize(exact, campaign.noise, rng=rng)
        est_model, est_part, est_cache = model, part, cache
        if campaign.perturbation > 0:
            est_model = perturbed_model(model, campaign.perturbation, rng)
            est_part, est_cache = partition(est_model), None
        try:
            t0 = time.perf_counter()
            verdict = locate(est_model, ms, config, est_part, est_cache)
            ms_elapsed = 1e3 * (time.perf_counter() - t0)
        except (LocatorError, ValueError, np.linalg.LinAlgError) as exc:
            res.add("failed", None)
            res.failures.append(f"trial {t}: {exc}")
            continue
        kind, hops = classify_verdict(cell.branch, verdict.branch, model)
        res.add(kind, hops, ms_elapsed, verdict.branch)
    return res


def campaign_threshold(campaign: Campaign, model: FeederModel | None = None, part=None) -> float:
    if campaign.locator.threshold_mode == "fixed":
        return campaign.locator.threshold
    model = model or campaign.model()
    cal = calibrate_threshold(model, campaign.noise, campaign.calibration_trials, seed=campaign.seed,
                              config=campaign.locator, part=part)
    return cal.threshold


def run_campaign(campaign: Campaign, workers: int = 1, threshold: float | None = None) -> AccuracyReport:
    """Run every cell of the grid for ``campaign.trials`` trials.

    Per-trial failures are recorded and never abort the run.
    """
    model = campaign.model()
    for b in campaign.branches:
        if b not in model.branches:
            raise CampaignError(f"unknown branch {b!r}", "grid.branches")
    part = partition(model)
    eps = threshold if threshold is not None else campaign_threshold(campaign, model, part)
    config = campaign.locator.with_threshold(eps)
    jobs = [(campaign, cell, model, part, config) for cell in campaign.cells()]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            cells = list(pool.map(_run_cell, jobs))
    else:
        cells = [_run_cell(j) for j in jobs]
    if not campaign.record_timing:
        for c in cells:
            c.times_ms = []
    return AccuracyReport(campaign.name, campaign.seed, eps, cells)
