import json
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import pmufault.harness as harness
from pmufault.feeder import feeders_equal, load_feeder
from pmufault.harness import (CSV_COLUMNS, Campaign, CampaignError, CellResult, campaign_from_dict,
                              classify_verdict, load_campaign, perturbed_model, report_csv, report_json,
                              run_campaign)
from pmufault.locator import LocatorConfig
from pmufault.measurements import NoiseProfile

from conftest import small_document

TRUNK = ("806-808", "808-812", "812-814", "828-830", "854-832")


def _line_graph_hops(model, a, b):
    """BFS over branches, two branches adjacent when they share a node."""
    touch = {}
    for bid, br in model.branches.items():
        for n in (br.from_node, br.to_node):
            touch.setdefault(n, []).append(bid)
    seen, queue = {a: 0}, deque([a])
    while queue:
        e = queue.popleft()
        br = model.branches[e]
        for n in (br.from_node, br.to_node):
            for f in touch[n]:
                if f not in seen:
                    seen[f] = seen[e] + 1
                    queue.append(f)
    return seen[b]


def _doc(**over):
    doc = {"name": "t", "feeder": "feeder34",
           "grid": {"fault_types": ["LG"], "impedances_ohm": [10], "branches": ["808-812"], "positions": [0.5]},
           "trials": 2, "seed": 3, "locator": {"threshold": 100.0}, "record_timing": False}
    doc.update(over)
    return doc


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

def test_classify_examples(small_feeder):
    assert classify_verdict("2-3", "2-3", small_feeder) == ("exact", 0)
    assert classify_verdict("2-3", "3-5", small_feeder) == ("adjacent", 1)
    assert classify_verdict("3-4", "3-5", small_feeder) == ("adjacent", 1)
    assert classify_verdict("1-2", "5-6", small_feeder) == ("other", 3)
    assert classify_verdict("1-2", None, small_feeder) == ("unlocated", None)
    with pytest.raises(KeyError):
        classify_verdict("1-2", "9-9", small_feeder)


def test_classify_matches_line_graph_bfs(feeder34):
    ids = sorted(feeder34.branches)
    for a in ids[::3]:
        for b in ids:
            kind, hops = classify_verdict(a, b, feeder34)
            assert hops == _line_graph_hops(feeder34, a, b)
            assert kind == ("exact" if hops == 0 else "adjacent" if hops == 1 else "other")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from(["exact", "adjacent", "other", "unlocated", "failed"]), min_size=1, max_size=40))
def test_accounting_invariant(kinds):
    res = CellResult(None)
    for k in kinds:
        res.add(k, {"exact": 0, "adjacent": 1, "other": 4}.get(k))
    assert res.n_t == len(kinds)
    assert res.n0 + res.n1 + res.n_other + res.n_failed == res.n_t
    assert res.n_unlocated <= res.n_other
    t = harness.Tally().merge(res)
    assert t.alpha + t.beta + t.other == pytest.approx(1.0)
    assert 0 <= t.alpha <= 1 and 0 <= t.beta <= 1


# ---------------------------------------------------------------------------
# Campaign description
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("over,element", [
    ({"trials": 0}, "trials"),
    ({"grid": {"fault_types": ["LX"], "impedances_ohm": [0], "branches": ["808-812"], "positions": [0.5]}},
     "grid.fault_types"),
    ({"grid": {"fault_types": ["LG"], "impedances_ohm": [0], "branches": [], "positions": [0.5]}}, "grid"),
    ({"perturbation": {"max_fraction": 1.5}}, "perturbation.max_fraction"),
    ({"perturbation": {"fraction": 0.1}}, "perturbation"),
    ({"colour": "red"}, "campaign"),
    ({"noise": {"pmu_mag_max_err": -1}}, "noise"),
    ({"locator": {"threshold": -5}}, "locator"),
])
def test_campaign_validation_names_element(over, element):
    with pytest.raises(CampaignError) as err:
        campaign_from_dict(_doc(**over))
    assert err.value.element == element


def test_unknown_branch_is_rejected_before_running():
    c = campaign_from_dict(_doc(grid={"fault_types": ["LG"], "impedances_ohm": [0], "branches": ["x-y"],
                                      "positions": [0.5]}))
    with pytest.raises(CampaignError) as err:
        run_campaign(c)
    assert err.value.element == "grid.branches"


def test_malformed_campaign_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{\"feeder\": ")
    with pytest.raises(CampaignError) as err:
        load_campaign(p)
    assert err.value.element == str(p)


def test_bundled_campaign_loads():
    from importlib import resources
    ref = resources.files("pmufault") / "data" / "campaigns" / "feeder34_lg50.json"
    c = campaign_from_dict(json.loads(ref.read_text()))
    assert c.locator.threshold_mode == "calibrated" and len(c.cells()) == 15


def test_cells_enumerate_full_grid():
    c = campaign_from_dict(_doc(grid={"fault_types": ["LG", "LL"], "impedances_ohm": [0, 50],
                                      "branches": ["808-812", "812-814"], "positions": [0.25, 0.75],
                                      "phases": {"LG": "b"}}))
    cells = c.cells()
    assert len(cells) == 16 and [x.index for x in cells] == list(range(16))
    assert {x.phases for x in cells if x.fault_type == "LG"} == {"b"}
    assert {x.phases for x in cells if x.fault_type == "LL"} == {"bc"}


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------

def test_single_trial_cell():
    c = campaign_from_dict(_doc(trials=1))
    rep = run_campaign(c)
    assert len(rep.cells) == 1 and rep.cells[0].n_t == 1 and rep.threshold == 100.0


def test_zero_noise_bolted_line_to_line_is_exact():
    c = Campaign("feeder34", ("LL",), (0.0,), TRUNK, (0.25, 0.5, 0.75), 1, noise=NoiseProfile.zero(),
                 locator=LocatorConfig(threshold=100.0))
    rep = run_campaign(c)
    assert rep.overall.alpha == 1.0 and rep.overall.max_error_hops == 0


def test_byte_identical_reports(tmp_path):
    c = campaign_from_dict(_doc(trials=3, grid={"fault_types": ["LG", "LLL"], "impedances_ohm": [20],
                                                "branches": ["808-812", "828-830"], "positions": [0.5]}))
    a, b = run_campaign(c), run_campaign(c, workers=2)
    assert report_csv(a, timing=False) == report_csv(b, timing=False)
    assert report_json(a, timing=False) == report_json(b, timing=False)


def test_csv_layout():
    rep = run_campaign(campaign_from_dict(_doc()))
    lines = report_csv(rep, timing=False).splitlines()
    assert lines[0].split(",") == CSV_COLUMNS
    row = dict(zip(CSV_COLUMNS, lines[1].split(",")))
    assert row["branch"] == "808-812" and row["n_t"] == "2" and row["mean_ms"] == ""
    timed = report_csv(run_campaign(campaign_from_dict(_doc(record_timing=True)))).splitlines()
    assert float(dict(zip(CSV_COLUMNS, timed[1].split(",")))["mean_ms"]) > 0


def test_json_report_structure():
    rep = run_campaign(campaign_from_dict(_doc()))
    doc = json.loads(report_json(rep, timing=False))
    assert doc["overall"]["n_t"] == 2 and set(doc["by_fault_type"]) == {"LG"}
    assert len(doc["cells"][0]["verdicts"]) == 2 and doc["threshold"] == 100.0


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 0.5), st.integers(0, 10 ** 6))
def test_perturbation_stays_within_bounds(frac, seed):
    model = load_feeder(small_document())
    pert = perturbed_model(model, frac, np.random.default_rng(seed))
    for bid, br in model.branches.items():
        nz = br.r_ohm != 0
        for a, b in ((br.r_ohm, pert.branches[bid].r_ohm), (br.x_ohm, pert.branches[bid].x_ohm)):
            ratio = b[nz] / a[nz]
            assert np.all(np.abs(ratio - 1) <= frac + 1e-12)
            assert np.allclose(ratio, ratio[0])


def test_perturbation_reaches_the_estimator_only(monkeypatch):
    seen = {"pf": [], "loc": []}
    real_pf, real_loc = harness.run_powerflow, harness.locate

    def pf(model, *a, **k):
        seen["pf"].append(model)
        return real_pf(model, *a, **k)

    def loc(model, *a, **k):
        seen["loc"].append(model)
        return real_loc(model, *a, **k)

    monkeypatch.setattr(harness, "run_powerflow", pf)
    monkeypatch.setattr(harness, "locate", loc)
    c = campaign_from_dict(_doc(perturbation={"max_fraction": 0.1}))
    truth = c.model()
    run_campaign(c)
    assert all(feeders_equal(m, truth) for m in seen["pf"])
    assert len(seen["loc"]) == 2 and not any(feeders_equal(m, truth) for m in seen["loc"])
