import numpy as np
import pytest

from pmufault.feeder import load_feeder

# Per-km phase impedance of a typical overhead line (ohm/km)
R_KM = [[0.211, 0.0953, 0.0953], [0.0953, 0.211, 0.0953], [0.0953, 0.0953, 0.211]]
X_KM = [[0.747, 0.376, 0.341], [0.376, 0.747, 0.376], [0.341, 0.376, 0.747]]


def line(bid, f, t, km, phases="abc"):
    keep = [p in phases for p in "abc"]
    mask = np.outer(keep, keep)
    return {"id": bid, "from": f, "to": t, "length_m": km * 1000.0,
            "r_ohm": (np.array(R_KM) * km * mask).tolist(), "x_ohm": (np.array(X_KM) * km * mask).tolist()}


def small_document(pmu5_branches=("5-6",)):
    """Five-node example graph (1-2, 2-3, 3-4, 3-5) extended by a downstream segment 5-6."""
    return {
        "name": "fig3",
        "base": {"kv_ll": 12.47, "mva": 3.0},
        "slack": "1",
        "nodes": [{"id": str(i), "phases": "abc"} for i in range(1, 7)],
        "branches": [line("1-2", "1", "2", 1.5), line("2-3", "2", "3", 1.2), line("3-4", "3", "4", 0.8),
                     line("3-5", "3", "5", 1.6), line("5-6", "5", "6", 1.0)],
        "loads": [{"node": n, "p_w": [p, 0.9 * p, 1.1 * p], "q_var": [0.4 * p, 0.35 * p, 0.45 * p]}
                  for n, p in (("2", 150e3), ("3", 90e3), ("4", 120e3), ("5", 60e3), ("6", 200e3))],
        "dgs": [{"node": "4", "p_w": [40e3, 40e3, 40e3], "q_var": [0.0, 0.0, 0.0]}],
        "pmus": [{"node": "1", "branches": ["1-2"]}, {"node": "5", "branches": list(pmu5_branches)}],
    }


@pytest.fixture
def small_feeder():
    return load_feeder(small_document())


def table_document():
    """The five-node example with node 5 bounded by a downstream micro-PMU at 6."""
    doc = small_document()
    doc["pmus"] = [{"node": "1", "branches": ["1-2"]}, {"node": "5", "branches": ["5-6"]},
                   {"node": "6", "branches": ["5-6"]}]
    return doc


def single_phase_document(z_pu=0.01 + 0.02j, load_w=0.0, load_var=0.0, kv=12.47, mva=3.0, length_m=1000.0,
                          pmu_at_receiving=True):
    """Two nodes joined by one phase-a branch with per-unit impedance ``z_pu``."""
    z_base = kv ** 2 / mva
    r = [[z_pu.real * z_base, 0, 0], [0, 0, 0], [0, 0, 0]]
    x = [[z_pu.imag * z_base, 0, 0], [0, 0, 0], [0, 0, 0]]
    doc = {
        "name": "two-node", "base": {"kv_ll": kv, "mva": mva}, "slack": "s",
        "nodes": [{"id": "s", "phases": "a"}, {"id": "r", "phases": "a"}],
        "branches": [{"id": "s-r", "from": "s", "to": "r", "length_m": length_m, "r_ohm": r, "x_ohm": x}],
        "pmus": [{"node": "s", "branches": ["s-r"]}] + ([{"node": "r", "branches": []}] if pmu_at_receiving else []),
    }
    if load_w or load_var:
        doc["loads"] = [{"node": "r", "p_w": [load_w, 0, 0], "q_var": [load_var, 0, 0]}]
    return doc


@pytest.fixture
def table_feeder():
    return load_feeder(table_document())


@pytest.fixture(scope="session")
def feeder34():
    from pmufault.harness import bundled_feeder
    return bundled_feeder("feeder34")


@pytest.fixture(scope="session")
def feeder123():
    from pmufault.harness import bundled_feeder
    return bundled_feeder("feeder123")


# One line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line_ in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line_)
