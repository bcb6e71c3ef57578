import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pmufault.dsse import (VROOT, FaultHypothesis, Scope, UnobservableError, assemble, estimate,
                           fit_fault_hypothesis, forward_sweep_voltages, path_scope, scan_fault_hypotheses,
                           solve_normal_equations, subgraph_scope)
from pmufault.feeder import PHASES, enumerate_paths, load_feeder, partition
from pmufault.measurements import MeasurementSet, NoiseProfile, synthesize
from pmufault.powerflow import FaultScenario, measure_true, run_powerflow

from conftest import line, single_phase_document, small_document


def _measurements(model, scenario=None, profile=NoiseProfile(), seed=None, noise=False):
    state = run_powerflow(model, scenario)
    exact = measure_true(state, model)
    return state, synthesize(exact, profile, seed, noise=noise)


def _h(lm, x):
    """Measurement function built from scope physics, independent of ``lm.Hd``."""
    scope, model = lm.scope, lm.scope.model
    sv = lm.state_vector(x)
    volts = forward_sweep_voltages(sv, scope)
    out = []
    for r in range(0, lm.m, 2):
        kind, where, p = lm.meta[r][:3]
        i = PHASES.index(p)
        if kind == "V":
            val = volts[where][i]
        elif kind == "I":
            val = sv.current(where)[i]
        else:
            val = sv.current(scope.parent_edge[where])[i]
            val -= sum(sv.current(c)[i] for c in scope.children[where])
        out += [val.real, val.imag]
    return np.array(out)


# ---------------------------------------------------------------------------
# Jacobian structure
# ---------------------------------------------------------------------------

def test_two_node_jacobian_matches_hand_assembly():
    model = load_feeder(single_phase_document(pmu_at_receiving=False, load_w=50e3, load_var=10e3))
    _, ms = _measurements(model)
    lm = assemble(Scope(model, "s", ("s-r",), ()), ms)
    # states: Vs_r, Vs_x, I_r, I_x; rows: V at s, I on s-r, S at r
    expected = np.array([[1, 0, 0, 0], [0, 1, 0, 0],
                         [0, 0, 1, 0], [0, 0, 0, 1],
                         [0, 0, 1, 0], [0, 0, 0, 1]], float)
    assert np.array_equal(lm.Hd, expected)
    assert lm.H.shape == (6, 4) and lm.H.nnz == 6


def test_two_node_voltage_row_carries_minus_impedance():
    z = 0.013 + 0.037j
    model = load_feeder(single_phase_document(z_pu=z, load_w=50e3))
    _, ms = _measurements(model)
    lm = assemble(Scope(model, "s", ("s-r",), ()), ms)
    rows = [r for r in range(lm.m) if lm.meta[r][:2] == ("V", "r")]
    np.testing.assert_allclose(lm.Hd[rows], [[1, 0, -z.real, z.imag], [0, 1, -z.imag, -z.real]], atol=1e-15)


def test_voltage_rows_cover_exactly_the_root_path():
    doc = {
        "name": "path", "base": {"kv_ll": 12.47, "mva": 3.0}, "slack": "1",
        "nodes": [{"id": str(i), "phases": "abc"} for i in range(1, 5)],
        "branches": [line("1-2", "1", "2", 1.0), line("2-3", "2", "3", 2.0), line("2-4", "2", "4", 0.5)],
        "loads": [{"node": n, "p_w": [50e3] * 3, "q_var": [1e4] * 3} for n in "234"],
        "pmus": [{"node": "1", "branches": ["1-2"]}, {"node": "3", "branches": []}],
    }
    model = load_feeder(doc)
    part = partition(model)
    _, ms = _measurements(model)
    lm = assemble(subgraph_scope(part, 1), ms)
    for r in range(lm.m):
        kind, where, p, part_ = lm.meta[r][:4]
        if kind != "V" or where != "3":
            continue
        a = PHASES.index(p)
        for e in ("1-2", "2-3"):
            z = model.z_pu(e)
            for c, q in enumerate(PHASES):
                k = lm.index[(e, q)]
                if part_ == "r":
                    assert lm.Hd[r, k] == pytest.approx(-z[a, c].real) and lm.Hd[r, k + 1] == pytest.approx(z[a, c].imag)
                else:
                    assert lm.Hd[r, k] == pytest.approx(-z[a, c].imag) and lm.Hd[r, k + 1] == pytest.approx(-z[a, c].real)
        for q in PHASES:
            k = lm.index[("2-4", q)]
            assert lm.Hd[r, k] == 0 and lm.Hd[r, k + 1] == 0


def test_current_and_injection_rows_are_signed_selectors(small_feeder):
    part = partition(small_feeder)
    _, ms = _measurements(small_feeder)
    lm = assemble(subgraph_scope(part, 1), ms)
    for r in range(lm.m):
        if lm.meta[r][0] in ("I", "S"):
            assert set(np.unique(lm.Hd[r])) <= {-1.0, 0.0, 1.0}
    # KCL row of node 3 phase b real part: +I(2-3) - I(3-4) - I(3-5)
    r = next(r for r in range(lm.m) if lm.meta[r] == ("S", "3", "b", "r"))
    nz = {lm.states[k // 2][0]: lm.Hd[r, k] for k in np.flatnonzero(lm.Hd[r])}
    assert nz == {"2-3": 1.0, "3-4": -1.0, "3-5": -1.0}


def _row_labels(lm):
    out = set()
    for r in range(0, lm.m, 2):
        kind, where, p = lm.meta[r][:3]
        out.add(f"{kind}{where}({lm.meta[r][4]})" if kind == "I" else f"{kind}{where}")
    return out


def test_path_rows_follow_the_example_table(table_feeder):
    part = partition(table_feeder)
    chain = enumerate_paths(part, 1)
    assert len(chain.paths) == 3
    _, ms = _measurements(table_feeder)
    rows = [_row_labels(assemble(path_scope(part, chain, s), ms)) for s in (1, 2, 3)]
    assert rows[0] == {"V1", "I1-2(1)", "S2"}
    assert rows[1] == {"V1", "I1-2(1)", "S2", "S3", "S4"}
    assert rows[2] == {"V1", "V5", "I1-2(1)", "I5-6(5)", "S2", "S3", "S4", "S5"}


def test_jacobian_is_state_independent(small_feeder):
    part = partition(small_feeder)
    scope = subgraph_scope(part, 1)
    _, a = _measurements(small_feeder, seed=1, noise=True)
    _, b = _measurements(small_feeder, FaultScenario("2-3", 0.5, "LG", impedance=5.0), seed=2, noise=True)
    lm_a, lm_b = assemble(scope, a), assemble(scope, b)
    assert np.array_equal(lm_a.Hd, lm_b.Hd)
    assert np.array_equal(lm_a.rebind(b).Hd, lm_a.Hd)
    # the estimator never rebuilds the Jacobian between iterations
    res = estimate(lm_a)
    assert res.iterations > 1 and np.array_equal(lm_a.Hd, lm_b.Hd)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_jacobian_matches_finite_differences(seed):
    model = load_feeder(small_document())
    part = partition(model)
    _, ms = _measurements(model)
    lm = assemble(subgraph_scope(part, 1), ms)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=lm.n)
    h = 1e-6
    J = np.column_stack([(_h(lm, x + h * e) - _h(lm, x - h * e)) / (2 * h) for e in np.eye(lm.n)])
    np.testing.assert_allclose(J, lm.Hd, atol=1e-8)


# ---------------------------------------------------------------------------
# Forward sweep
# ---------------------------------------------------------------------------

def test_forward_sweep_with_zero_currents_copies_root(small_feeder):
    part = partition(small_feeder)
    _, ms = _measurements(small_feeder)
    lm = assemble(subgraph_scope(part, 1), ms)
    x = np.zeros(lm.n)
    vr = np.array([1.0, -0.5, -0.5]), np.array([0.0, -0.866, 0.866])
    for i, p in enumerate(PHASES):
        k = lm.index[(VROOT, p)]
        x[k], x[k + 1] = vr[0][i], vr[1][i]
    volts = forward_sweep_voltages(lm.state_vector(x), lm.scope)
    for v in volts.values():
        np.testing.assert_array_equal(v, vr[0] + 1j * vr[1])


def test_forward_sweep_single_phase_drop():
    model = load_feeder(single_phase_document(z_pu=0.01 + 0.02j))
    _, ms = _measurements(model)
    lm = assemble(Scope(model, "s", ("s-r",), ()), ms)
    x = np.zeros(lm.n)
    x[lm.index[(VROOT, "a")]] = 1.0
    x[lm.index[("s-r", "a")]] = 1.0
    volts = forward_sweep_voltages(lm.state_vector(x), lm.scope)
    assert volts["r"][0] == pytest.approx(0.99 - 0.02j, abs=1e-15)


def test_forward_sweep_uses_full_coupled_matrix():
    model = load_feeder(small_document())
    part = partition(model)
    _, ms = _measurements(model)
    lm = assemble(subgraph_scope(part, 1), ms)
    rng = np.random.default_rng(3)
    x = rng.normal(size=lm.n)
    sv = lm.state_vector(x)
    volts = forward_sweep_voltages(sv, lm.scope)
    z12 = model.z_pu("1-2")
    np.testing.assert_allclose(volts["2"], sv.root_voltage() - z12 @ sv.current("1-2"), atol=1e-15)
    expected = sv.root_voltage() - z12 @ sv.current("1-2") - model.z_pu("2-3") @ sv.current("2-3") \
        - model.z_pu("3-5") @ sv.current("3-5")
    np.testing.assert_allclose(volts["5"], expected, atol=1e-14)
    sweep = lm.sweep(x)
    for n in volts:
        np.testing.assert_allclose(sweep[n], volts[n], atol=1e-14)


# ---------------------------------------------------------------------------
# Estimation
# ---------------------------------------------------------------------------

def test_noiseless_oracle_recovery(small_feeder):
    part = partition(small_feeder)
    state, ms = _measurements(small_feeder)
    for sg in part.subgraphs:
        res = estimate(subgraph_scope(part, sg.index), ms)
        assert res.converged and res.wmr < 1e-6
        for e in sg.edges:
            np.testing.assert_allclose(res.estimate.current(e), state.currents[e], atol=1e-6)
        for n, v in res.voltages.items():
            np.testing.assert_allclose(v, state.voltages[n], atol=1e-6)


def test_single_solve_recovers_consistent_state(small_feeder):
    part = partition(small_feeder)
    _, ms = _measurements(small_feeder)
    lm = assemble(subgraph_scope(part, 1), ms)
    _, var = lm.observations(lm.flat_voltages())
    x = np.random.default_rng(0).normal(size=lm.n)
    x_hat, _ = solve_normal_equations(lm.Hd, 1.0 / var, lm.Hd @ x)
    np.testing.assert_allclose(x_hat, x, atol=1e-9)


def test_first_order_optimality_and_wmr(small_feeder):
    part = partition(small_feeder)
    _, ms = _measurements(small_feeder, seed=11, noise=True)
    lm = assemble(subgraph_scope(part, 1), ms)
    res = estimate(lm)
    z, var = lm.observations(res.frozen_voltages)
    w = 1.0 / var
    r = z - lm.Hd @ res.estimate.values
    assert np.max(np.abs(lm.Hd.T @ (w * r))) <= 1e-6
    assert res.wmr == pytest.approx(float(r @ (w * r)), rel=1e-9)
    assert res.wmr == pytest.approx(float(res.residuals @ res.residuals), rel=1e-12)
    assert res.dof == lm.m - lm.n


def test_missing_pseudo_measurement_is_unobservable(small_feeder):
    part = partition(small_feeder)
    _, ms = _measurements(small_feeder)
    keep = [m for m in ms if not (m.kind == "PQ_pseudo" and m.location == "4" and m.phase == "b")]
    with pytest.raises(UnobservableError) as err:
        assemble(subgraph_scope(part, 1), MeasurementSet(keep))
    assert ("3-4", "b") in err.value.states


def test_missing_root_voltage_is_unobservable(small_feeder):
    part = partition(small_feeder)
    _, ms = _measurements(small_feeder)
    keep = [m for m in ms if not (m.kind == "V_rect" and m.location == "1")]
    with pytest.raises(UnobservableError) as err:
        assemble(subgraph_scope(part, 1), MeasurementSet(keep))
    assert err.value.states[0][0] == VROOT


def test_partial_paths_have_no_redundancy(table_feeder):
    part = partition(table_feeder)
    chain = enumerate_paths(part, 1)
    _, ms = _measurements(table_feeder, FaultScenario("2-3", 0.5, "LG", impedance=1.0), seed=5, noise=True)
    for s in (1, 2):
        res = estimate(path_scope(part, chain, s), ms)
        assert res.dof == 0 and res.wmr < 1e-9
    full = estimate(path_scope(part, chain, 3), ms)
    assert full.dof > 0 and full.wmr > 1e3


def test_no_fault_wmr_follows_chi_square(small_feeder):
    part = partition(small_feeder)
    state = run_powerflow(small_feeder)
    exact = measure_true(state, small_feeder)
    lm = assemble(subgraph_scope(part, 1), exact)
    rng = np.random.default_rng(2024)
    vals = []
    for _ in range(1000):
        ms = synthesize(exact, NoiseProfile(), rng=rng)
        vals.append(estimate(lm.rebind(ms)).wmr)
    dof = lm.m - lm.n
    assert abs(np.mean(vals) - dof) <= 0.2 * dof


# ---------------------------------------------------------------------------
# Fault hypotheses
# ---------------------------------------------------------------------------

def test_fault_hypothesis_explains_noiseless_fault(small_feeder):
    part = partition(small_feeder)
    state, ms = _measurements(small_feeder, FaultScenario("2-3", 0.4, "LG", impedance=10.0))
    lm = assemble(subgraph_scope(part, 1), ms)
    plain = estimate(lm)
    fit = fit_fault_hypothesis(lm, "2-3")
    assert plain.wmr > 1e4
    assert fit.wmr < 1e-3 * plain.wmr
    assert fit.fault.position == pytest.approx(0.4, abs=1e-2)
    np.testing.assert_allclose(fit.fault_current, state.fault_current, rtol=1e-2, atol=1e-3)


def test_scan_ranks_faulted_branch_first(small_feeder):
    part = partition(small_feeder)
    _, ms = _measurements(small_feeder, FaultScenario("3-5", 0.6, "LL", impedance=2.0))
    lm = assemble(subgraph_scope(part, 1), ms)
    scan = scan_fault_hypotheses(lm)
    assert min(scan.wmr, key=scan.wmr.get) == "3-5"
    assert scan.best.fault.edge == "3-5"


def test_fixed_hypothesis_adds_degrees_of_freedom(small_feeder):
    part = partition(small_feeder)
    _, ms = _measurements(small_feeder, seed=3, noise=True)
    lm = assemble(subgraph_scope(part, 1), ms)
    plain = estimate(lm)
    hyp = estimate(lm, fault=FaultHypothesis("2-3", 0.5))
    assert hyp.dof == plain.dof - 6
    assert hyp.wmr <= plain.wmr + 1e-6
