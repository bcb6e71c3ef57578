"""Ground-truth three-phase power flow with an optional shunt fault.

The faulted branch is split at ``position`` into two sections joined by a
fictitious node that carries the fault admittance.  Loads and DGs are
constant-PQ wye injections, falling back to constant impedance below
``v_min_pu`` so that bolted faults keep a solution.  The series network and
the fault stamp are solved exactly by a sparse nodal factorisation; the
outer fixed point only iterates the load currents.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .feeder import PHASES, FeederModel
from .measurements import Measurement, MeasurementSet

FAULT_NODE = "__fault__"
BOLTED_CONDUCTANCE_PU = 1e6
FAULT_TYPES = {"LG": 1, "LL": 2, "LLG": 2, "LLL": 3}
DEFAULT_PHASES = {"LG": "a", "LL": "bc", "LLG": "bc", "LLL": "abc"}


class PowerflowError(RuntimeError):
    pass


@dataclass(frozen=True)
class FaultScenario:
    branch: str
    position: float
    fault_type: str = "LG"
    phases: str | None = None
    impedance: float = 0.0  # ohms

    def __post_init__(self):
        if self.fault_type not in FAULT_TYPES:
            raise ValueError(f"unknown fault type {self.fault_type!r}")
        if self.phases is None:
            object.__setattr__(self, "phases", DEFAULT_PHASES[self.fault_type])
        ph = "".join(p for p in PHASES if p in self.phases)
        if len(ph) != len(self.phases) or len(ph) != FAULT_TYPES[self.fault_type]:
            raise ValueError(f"{self.fault_type} fault needs {FAULT_TYPES[self.fault_type]} distinct phases, got {self.phases!r}")
        object.__setattr__(self, "phases", ph)
        if not 0.0 < self.position < 1.0:
            raise ValueError("fault position must lie strictly inside (0, 1)")
        if self.impedance < 0:
            raise ValueError("fault impedance must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "FaultScenario":
        allowed = {"branch", "position", "type", "phases", "impedance_ohm"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown scenario field(s) {sorted(unknown)}")
        return cls(str(d["branch"]), float(d["position"]), d.get("type", "LG"),
                   d.get("phases"), float(d.get("impedance_ohm", 0.0)))

    def to_dict(self) -> dict:
        return {"branch": self.branch, "position": self.position, "type": self.fault_type,
                "phases": self.phases, "impedance_ohm": self.impedance}


def fault_admittance(scenario: FaultScenario, z_base: float) -> np.ndarray:
    """3x3 shunt admittance stamp (p.u.) of the fault."""
    zf = scenario.impedance / z_base
    g = min(BOLTED_CONDUCTANCE_PU, 1.0 / zf) if zf > 0 else BOLTED_CONDUCTANCE_PU
    idx = [PHASES.index(p) for p in scenario.phases]
    y = np.zeros((3, 3), complex)
    if scenario.fault_type in ("LG", "LLG"):
        for i in idx:
            y[i, i] = g
    elif scenario.fault_type == "LL":
        i, j = idx
        y[i, i] = y[j, j] = g
        y[i, j] = y[j, i] = -g
    else:  # three legs meeting at a floating star point
        y = g * (np.eye(3) - np.ones((3, 3)) / 3.0)
    return y


@dataclass
class TruePhasorState:
    voltages: dict  # node -> complex[3] (p.u.), absent phases 0
    currents: dict  # branch -> sending-end complex[3]
    receiving: dict  # branch -> receiving-end complex[3]
    consumption: dict  # node -> net consumed current complex[3] (loads minus DGs)
    fault_current: np.ndarray
    converged: bool
    iterations: int
    scenario: FaultScenario | None = None
    fault_sections: dict = field(default_factory=dict)  # section name -> current
    v_min_pu: float = 0.7

    def power(self, node: str) -> np.ndarray:
        """Net complex power consumed at ``node`` (p.u. per phase)."""
        return self.voltages[node] * np.conj(self.consumption.get(node, np.zeros(3, complex)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "element", "phase", "real", "imag"])
            for n, v in self.voltages.items():
                for i, p in enumerate(PHASES):
                    w.writerow(["V", n, p, repr(float(v[i].real)), repr(float(v[i].imag))])
            for b, c in self.currents.items():
                for i, p in enumerate(PHASES):
                    w.writerow(["I", b, p, repr(float(c[i].real)), repr(float(c[i].imag))])
            for i, p in enumerate(PHASES):
                w.writerow(["I_F", FAULT_NODE, p, repr(float(self.fault_current[i].real)), repr(float(self.fault_current[i].imag))])


def _consumption(s, v, mask, v_min):
    mag = np.abs(v)
    i = np.zeros(3, complex)
    hi = mask & (mag >= v_min)
    lo = mask & (mag < v_min)
    i[hi] = np.conj(s[hi] / v[hi])
    i[lo] = np.conj(s[lo]) * v[lo] / v_min**2
    return i


def run_powerflow(model: FeederModel, scenario: FaultScenario | None = None, *,
                  tol: float = 1e-9, max_iter: int = 100, v_min_pu: float = 0.7) -> TruePhasorState:
    """Solve the feeder, optionally with ``scenario`` applied."""
    # augmented radial network: (from, to, z) sections
    sections = []
    for b in model.branches.values():
        z = model.z_pu(b.id)
        if scenario is not None and b.id == scenario.branch:
            if not set(scenario.phases) <= set(b.phases):
                raise ValueError(f"branch {b.id} lacks fault phases {scenario.phases}")
            d = scenario.position
            sections.append((b.id + "#up", b.from_node, FAULT_NODE, d * z, b.phases))
            sections.append((b.id + "#dn", FAULT_NODE, b.to_node, (1 - d) * z, b.phases))
        else:
            sections.append((b.id, b.from_node, b.to_node, z, b.phases))
    if scenario is not None and scenario.branch not in model.branches:
        raise ValueError(f"unknown fault branch {scenario.branch}")

    masks = {n: np.array([p in m for p in PHASES]) for n, m in model.nodes.items()}
    node_ids = list(model.order)
    if scenario is not None:
        masks[FAULT_NODE] = np.array([p in model.branches[scenario.branch].phases for p in PHASES])
        node_ids.append(FAULT_NODE)
    pos = {n: i for i, n in enumerate(node_ids)}
    n_all = 3 * len(node_ids)

    rows, cols, vals = [], [], []

    def stamp(i0, j0, blk):
        for a in range(3):
            for c in range(3):
                if blk[a, c] != 0:
                    rows.append(i0 + a)
                    cols.append(j0 + c)
                    vals.append(blk[a, c])

    for _, f, t, z, ph in sections:
        idx = [PHASES.index(p) for p in ph]
        y = np.zeros((3, 3), complex)
        y[np.ix_(idx, idx)] = np.linalg.inv(z[np.ix_(idx, idx)])
        fi, ti = 3 * pos[f], 3 * pos[t]
        stamp(fi, fi, y)
        stamp(ti, ti, y)
        stamp(fi, ti, -y)
        stamp(ti, fi, -y)
    y_fault = np.zeros((3, 3), complex)
    if scenario is not None:
        y_fault = fault_admittance(scenario, model.base.z_base)
        stamp(3 * pos[FAULT_NODE], 3 * pos[FAULT_NODE], y_fault)
    Y = sp.csr_matrix(sp.coo_matrix((vals, (rows, cols)), shape=(n_all, n_all)))

    present = np.concatenate([masks[n] for n in node_ids])
    slack_idx = np.arange(3 * pos[model.slack], 3 * pos[model.slack] + 3)
    unknown = np.array([i for i in range(n_all) if present[i] and i not in slack_idx])
    known = slack_idx[present[slack_idx]]
    lu = spla.splu(sp.csc_matrix(Y[unknown][:, unknown]))
    Y_uk = Y[unknown][:, known]

    s_net = {n: model.load_pu(n) - model.dg_pu(n) for n in model.nodes}
    V = np.zeros(n_all, complex)
    V[slack_idx] = model.slack_voltage()
    for n in node_ids:  # flat start at slack voltage per phase
        V[3 * pos[n]:3 * pos[n] + 3] = np.where(masks[n], model.slack_voltage(), 0)

    def consumption(vv):
        inj = np.zeros(n_all, complex)
        for n in model.nodes:
            if n == model.slack or not np.any(s_net[n]):
                continue
            k = 3 * pos[n]
            inj[k:k + 3] = _consumption(s_net[n], vv[k:k + 3], masks[n], v_min_pu)
        return inj

    converged, it = False, 0
    for it in range(1, max_iter + 1):
        cons = consumption(V)
        rhs = -cons[unknown] - Y_uk @ V[known]
        v_new = lu.solve(rhs)
        dv = np.max(np.abs(v_new - V[unknown])) if unknown.size else 0.0
        V[unknown] = v_new
        if dv < tol:
            converged = True
            break
    if not converged:
        raise PowerflowError(f"power flow did not converge in {max_iter} iterations")

    volt = {n: V[3 * pos[n]:3 * pos[n] + 3].copy() for n in node_ids}
    cons = consumption(V)
    cons_by_node = {n: cons[3 * pos[n]:3 * pos[n] + 3].copy() for n in model.nodes if n != model.slack}
    i_fault = y_fault @ volt[FAULT_NODE] if scenario is not None else np.zeros(3, complex)

    # backward aggregation over the augmented tree (exact KCL)
    into = {}  # section name keyed by receiving node
    children = {n: [] for n in node_ids}
    for name, f, t, z, ph in sections:
        into[t] = name
        children[f].append((name, t))
    sec_current = {}

    def total_into(n):
        c = cons_by_node.get(n, np.zeros(3, complex)).copy()
        if n == FAULT_NODE:
            c = c + i_fault
        for name, t in children[n]:
            c = c + sec_current[name]
        return c

    order = list(model.order)
    if scenario is not None:
        # fictitious node sits between the faulted branch's endpoints
        b = model.branches[scenario.branch]
        order.insert(order.index(b.to_node), FAULT_NODE)
    for n in reversed(order):
        if n == model.slack:
            continue
        sec_current[into[n]] = np.where(masks[n], total_into(n), 0)

    currents, receiving = {}, {}
    for b in model.branches:
        if scenario is not None and b == scenario.branch:
            currents[b] = sec_current[b + "#up"]
            receiving[b] = sec_current[b + "#dn"]
        else:
            currents[b] = receiving[b] = sec_current[b]
    fault_sections = {k: v for k, v in sec_current.items() if "#" in k}
    return TruePhasorState(volt, currents, receiving, cons_by_node, i_fault, converged, it,
                           scenario, fault_sections, v_min_pu)


# ---------------------------------------------------------------------------
# Consistency checks on a solved state
# ---------------------------------------------------------------------------

def kcl_residual(state: TruePhasorState, model: FeederModel) -> float:
    worst = 0.0
    for n in model.nodes:
        if n == model.slack:
            continue
        inflow = state.receiving[model.parent_branch[n]]
        out = sum((state.currents[c] for c in model.children[n]), np.zeros(3, complex))
        worst = max(worst, float(np.max(np.abs(inflow - out - state.consumption[n]))))
    if state.scenario is not None:
        b = state.scenario.branch
        worst = max(worst, float(np.max(np.abs(state.currents[b] - state.receiving[b] - state.fault_current))))
    return worst


def kvl_residual(state: TruePhasorState, model: FeederModel) -> float:
    worst = 0.0
    for b in model.branches.values():
        z = model.z_pu(b.id)
        vf, vt = state.voltages[b.from_node], state.voltages[b.to_node]
        if state.scenario is not None and b.id == state.scenario.branch:
            d = state.scenario.position
            vm = state.voltages[FAULT_NODE]
            r = np.concatenate([vf - d * z @ state.currents[b.id] - vm,
                                vm - (1 - d) * z @ state.receiving[b.id] - vt])
        else:
            r = vf - z @ state.currents[b.id] - vt
        mask = np.array([p in b.phases for p in PHASES])
        worst = max(worst, float(np.max(np.abs(r.reshape(-1, 3)[:, mask]))))
    return worst


def power_balance(state: TruePhasorState, model: FeederModel) -> complex:
    """Slack supply minus (consumption + series losses + fault power), p.u."""
    supply = sum(np.sum(state.voltages[model.slack] * np.conj(state.currents[c]))
                 for c in model.children[model.slack])
    consumed = sum(np.sum(state.power(n)) for n in state.consumption)
    losses = 0j
    for b in model.branches.values():
        z = model.z_pu(b.id)
        if state.scenario is not None and b.id == state.scenario.branch:
            d = state.scenario.position
            iu, idn = state.currents[b.id], state.receiving[b.id]
            losses += np.sum(d * (z @ iu) * np.conj(iu)) + np.sum((1 - d) * (z @ idn) * np.conj(idn))
        else:
            i = state.currents[b.id]
            losses += np.sum((z @ i) * np.conj(i))
    fault = 0j
    if state.scenario is not None:
        fault = np.sum(state.voltages[FAULT_NODE] * np.conj(state.fault_current))
    return complex(supply - consumed - losses - fault)


def measure_true(state: TruePhasorState, model: FeederModel) -> MeasurementSet:
    """Noise-free micro-PMU phasors and actual consumed powers.

    The fictitious fault node is never observed.  Current phasors are
    reported in the branch's from->to direction at the measuring end.
    """
    if not state.converged:
        raise PowerflowError("state did not converge")
    out = []
    for node, pmu in model.pmus.items():
        v = state.voltages[node]
        for i, p in enumerate(PHASES):
            if p in model.nodes[node]:
                out.append(Measurement("V_rect", node, p, v[i].real, v[i].imag))
        for b in sorted(pmu.measured_branches):
            br = model.branches[b]
            c = state.currents[b] if br.from_node == node else state.receiving[b]
            for i, p in enumerate(PHASES):
                if p in br.phases:
                    out.append(Measurement("I_rect", b, p, c[i].real, c[i].imag, tag=node))
    for node, mask in model.nodes.items():
        if node == model.slack:
            continue
        mag = np.abs(state.voltages[node])
        scale = np.where(mag >= state.v_min_pu, 1.0, mag**2 / state.v_min_pu**2)
        load = model.load_pu(node) * scale
        dg = model.dg_pu(node) * scale
        for i, p in enumerate(PHASES):
            if p not in mask:
                continue
            out.append(Measurement("PQ_pseudo", node, p, load[i].real, load[i].imag, tag="load"))
            if node in model.dgs:
                out.append(Measurement("PQ_pseudo", node, p, -dg[i].real, -dg[i].imag, tag="dg"))
    label = "" if state.scenario is None else "{branch}@{position}:{type}:{phases}:{impedance_ohm}".format(**state.scenario.to_dict())
    return MeasurementSet(out, scenario=label)
