"""Branch-current weighted least squares state estimation on feeder scopes.

A *scope* is a root-anchored piece of the feeder: a subgraph between
micro-PMUs, or a path inside one.  Its state is the root voltage plus the
current of every in-scope branch and of every outgoing branch that leaves
the scope (boundary or frontier currents).  With the pseudo power
injections converted to equivalent currents at the present node voltages,
the measurement model is affine in the state and the Jacobian is constant.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.optimize import minimize_scalar

from .feeder import PHASES, FeederModel, PathChain, SubgraphPartition
from .measurements import VARIANCE_FLOOR, MeasurementSet, equivalent_currents

VROOT = "__vroot__"
V_FLOOR = 1e-3  # smallest voltage magnitude used for equivalent currents


class UnobservableError(RuntimeError):
    def __init__(self, message, states=()):
        super().__init__(message)
        self.states = tuple(states)


@dataclass(frozen=True)
class WlsConfig:
    tol: float = 1e-6
    max_iter: int = 20


@dataclass(frozen=True, eq=False)
class Scope:
    model: FeederModel
    root: str
    edges: tuple  # in-scope branches, parents before children
    outflow: tuple  # branches leaving the scope whose currents are states
    label: str = ""

    @cached_property
    def nodes(self) -> tuple:
        return (self.root,) + tuple(self.model.branches[e].to_node for e in self.edges)

    @cached_property
    def parent_edge(self) -> dict:
        return {self.model.branches[e].to_node: e for e in self.edges}

    @cached_property
    def children(self) -> dict:
        out = {n: [] for n in self.nodes}
        for e in self.edges + self.outflow:
            out[self.model.branches[e].from_node].append(e)
        return out

    def path_from_root(self, node: str) -> list:
        path = []
        while node != self.root:
            e = self.parent_edge[node]
            path.append(e)
            node = self.model.branches[e].from_node
        return path[::-1]

    def subtree(self, edge: str) -> list:
        """Scope nodes at or below the head of ``edge``."""
        out, stack = [], [self.model.branches[edge].to_node]
        while stack:
            n = stack.pop()
            out.append(n)
            stack.extend(self.model.branches[c].to_node for c in self.children[n] if c in self.parent_edge.values())
        return out


def subgraph_scope(part: SubgraphPartition, k: int) -> Scope:
    sg = part[k]
    outflow = tuple(b for w in sg.far_pmus for b in sg.boundary[w])
    return Scope(part.model, sg.root, sg.edges, outflow, f"G{k}")


def path_scope(part: SubgraphPartition, chain: PathChain, s: int) -> Scope:
    """Scope of path P_s with its frontier sending-end currents as states."""
    sg = part[chain.subgraph]
    edges = tuple(e for e in sg.edges if e in chain.paths[s - 1])
    return Scope(part.model, sg.root, edges, chain.frontier[s - 1], f"G{chain.subgraph}/P{s}")


def edges_scope(part: SubgraphPartition, k: int, edges) -> Scope:
    """Scope of an arbitrary root-connected edge set of subgraph ``k``."""
    sg, model = part[k], part.model
    keep = set(edges)
    ordered = tuple(e for e in sg.edges if e in keep)
    nodes = {sg.root} | {model.branches[e].to_node for e in ordered}
    front = tuple(c for n in model.order if n in nodes for c in model.children[n]
                  if c not in keep and (c in sg.edges or n in sg.boundary))
    return Scope(model, sg.root, ordered, front)


def _zblock(z):
    """Real 2x2-per-phase form of ``-z`` acting on (i_r, i_x)."""
    r, x = z.real, z.imag
    n = z.shape[0]
    out = np.zeros((2 * n, 2 * n))
    out[0::2, 0::2] = -r
    out[0::2, 1::2] = x
    out[1::2, 0::2] = -x
    out[1::2, 1::2] = -r
    return out


@dataclass
class StateVector:
    values: np.ndarray
    index: dict  # (element, phase) -> offset of the real part

    def phasor(self, element: str) -> np.ndarray:
        out = np.zeros(3, complex)
        for i, p in enumerate(PHASES):
            k = self.index.get((element, p))
            if k is not None:
                out[i] = self.values[k] + 1j * self.values[k + 1]
        return out

    def root_voltage(self) -> np.ndarray:
        return self.phasor(VROOT)

    def current(self, branch: str) -> np.ndarray:
        return self.phasor(branch)


@dataclass(frozen=True)
class FaultHypothesis:
    edge: str
    position: float


@dataclass
class WlsResult:
    estimate: StateVector
    wmr: float
    iterations: int
    converged: bool
    residuals: np.ndarray  # weighted residuals sqrt(w)*(z - h(x))
    dof: int
    voltages: dict
    history: list = field(default_factory=list)
    fault: FaultHypothesis | None = None
    fault_current: np.ndarray | None = None
    frozen_voltages: dict | None = None  # voltages behind the equivalents of the final solve


class LinearModel:
    """Constant Jacobian of a scope plus the measurement bookkeeping."""

    def __init__(self, scope: Scope, measurements: MeasurementSet):
        self.scope = scope
        model = scope.model
        self.measurements = measurements
        self._n_entries = len(measurements.entries)
        # ---- state layout
        states = []
        root_ph = model.nodes[scope.root]
        states += [(VROOT, p) for p in root_ph]
        for e in scope.edges + scope.outflow:
            states += [(e, p) for p in model.branches[e].phases]
        self.states = states
        self.index = {s: 2 * k for k, s in enumerate(states)}
        n = 2 * len(states)

        rows, z_fix, var_fix, meta, keys = [], [], [], [], []
        # ---- voltage rows
        pmu_nodes = [nd for nd in scope.nodes if nd in model.pmus]
        for nd in pmu_nodes:
            val, var, found = measurements.voltage(nd)
            if nd == scope.root and not all(found[PHASES.index(p)] for p in root_ph):
                raise UnobservableError(f"no voltage measurement at scope root {nd}", [(VROOT, p) for p in root_ph])
            path = scope.path_from_root(nd)
            for p in model.nodes[nd]:
                i = PHASES.index(p)
                if not found[i]:
                    continue
                blk = np.zeros((2, n))
                k = self.index[(VROOT, p)]
                blk[0, k] = blk[1, k + 1] = 1.0
                for e in path:
                    ph = model.branches[e].phases
                    zb = _zblock(model.z_pu(e)[np.ix_(phase_idx(ph), phase_idx(ph))])
                    a = ph.index(p)
                    for c, q in enumerate(ph):
                        kc = self.index[(e, q)]
                        blk[:, kc:kc + 2] += zb[2 * a:2 * a + 2, 2 * c:2 * c + 2]
                rows.append(blk)
                z_fix += [val[i].real, val[i].imag]
                var_fix += list(var[i])
                keys.append(("V_rect", nd, p, ""))
                meta += [("V", nd, p, "r"), ("V", nd, p, "x")]
        self.n_voltage_rows = len(z_fix)
        # ---- current rows
        in_scope = set(scope.edges + scope.outflow)
        for nd in pmu_nodes:
            for b in sorted(model.pmus[nd].measured_branches):
                if b not in in_scope:
                    continue
                val, var, found = measurements.current(b, nd)
                for p in model.branches[b].phases:
                    i = PHASES.index(p)
                    if not found[i]:
                        continue
                    blk = np.zeros((2, n))
                    k = self.index[(b, p)]
                    blk[0, k] = blk[1, k + 1] = 1.0
                    rows.append(blk)
                    z_fix += [val[i].real, val[i].imag]
                    var_fix += list(var[i])
                    keys.append(("I_rect", b, p, nd))
                    meta += [("I", b, p, "r", nd), ("I", b, p, "x", nd)]
        self.n_fixed = len(z_fix)
        # ---- injection rows (values depend on node voltages)
        inj_s, inj_var, inj_node = [], [], []
        for nd in scope.nodes[1:]:
            s, var, found = measurements.pseudo_power(nd)
            parent = scope.parent_edge[nd]
            for p in model.nodes[nd]:
                i = PHASES.index(p)
                if not found[i]:
                    raise UnobservableError(f"no injection measurement at node {nd} phase {p}", [(parent, p)])
                blk = np.zeros((2, n))
                k = self.index[(parent, p)]
                blk[0, k] = blk[1, k + 1] = 1.0
                for c in scope.children[nd]:
                    if p in model.branches[c].phases:
                        kc = self.index[(c, p)]
                        blk[0, kc] = blk[1, kc + 1] = -1.0
                rows.append(blk)
                inj_s.append(s[i])
                inj_var.append(var[i])
                inj_node.append((nd, i))
                meta += [("S", nd, p, "r"), ("S", nd, p, "x")]
        self._fixed_keys = keys
        self.inj_s = np.array(inj_s, complex)
        self.inj_var = np.array(inj_var, float).reshape(-1, 2)
        self.inj_node = inj_node
        self.meta = meta
        self.Hd = np.vstack(rows) if rows else np.zeros((0, n))
        self.H = sp.csr_matrix(self.Hd)
        self.z_fixed = np.array(z_fix)
        self.var_fixed = np.maximum(np.array(var_fix), VARIANCE_FLOOR)
        self.m, self.n = self.Hd.shape
        zero_cols = np.where(~self.Hd.any(axis=0))[0]
        if zero_cols.size:
            raise UnobservableError("states not covered by any measurement",
                                    [self.states[c // 2] for c in zero_cols[::2]])

    def rebind(self, measurements: MeasurementSet) -> "LinearModel":
        """Same structure with the values of another measurement set.

        Falls back to a full assembly when the set of available
        measurements differs.
        """
        z, var = [], []
        for key in self._fixed_keys:
            m = measurements.get(*key)
            if m is None:
                return LinearModel(self.scope, measurements)
            z += [m.real, m.imag]
            var += [m.var_real, m.var_imag]
        inj_s, inj_var = [], []
        for nd, i in self.inj_node:
            s, v, found = measurements.pseudo_power(nd)
            if not found[i]:
                return LinearModel(self.scope, measurements)
            inj_s.append(s[i])
            inj_var.append(v[i])
        if len(measurements.entries) != self._n_entries:
            return LinearModel(self.scope, measurements)
        new = object.__new__(LinearModel)
        new.__dict__.update({k: v for k, v in self.__dict__.items() if k != "W"})
        new.measurements = measurements
        new.z_fixed = np.array(z)
        new.var_fixed = np.maximum(np.array(var), VARIANCE_FLOOR)
        new.inj_s = np.array(inj_s, complex)
        new.inj_var = np.array(inj_var, float).reshape(-1, 2)
        return new

    # ------------------------------------------------------------------
    def observations(self, voltages: dict):
        """Measurement vector and variances with equivalents at ``voltages``.

        Magnitudes below ``V_FLOOR`` are raised to it before conversion.
        """
        v = np.array([voltages[nd][i] for nd, i in self.inj_node], complex)
        if v.size:
            # a collapsed voltage (bolted fault nearby) is floored, keeping its angle
            low = np.abs(v) < V_FLOOR
            if low.any():
                v = np.where(low, V_FLOOR * np.exp(1j * np.angle(v)), v)
            cur = np.conj(self.inj_s / v)
            m2 = np.abs(v) ** 2
            c2, s2 = np.cos(np.angle(v)) ** 2, np.sin(np.angle(v)) ** 2
            vr = np.maximum((self.inj_var[:, 0] * c2 + self.inj_var[:, 1] * s2) / m2, VARIANCE_FLOOR)
            vx = np.maximum((self.inj_var[:, 0] * s2 + self.inj_var[:, 1] * c2) / m2, VARIANCE_FLOOR)
            z_inj = np.column_stack([cur.real, cur.imag]).ravel()
            var_inj = np.column_stack([vr, vx]).ravel()
        else:
            z_inj = var_inj = np.zeros(0)
        return np.concatenate([self.z_fixed, z_inj]), np.concatenate([self.var_fixed, var_inj])

    @cached_property
    def W(self):
        """Diagonal weights with equivalents evaluated at the root voltage."""
        _, var = self.observations(self.flat_voltages())
        return sp.diags(1.0 / var)

    def flat_voltages(self) -> dict:
        val, _, _ = self.measurements.voltage(self.scope.root)
        return {nd: val.copy() for nd in self.scope.nodes}

    def fault_columns(self, edge: str):
        """Columns (G0, G1) so that a fault injection f on ``edge`` at fraction d
        adds (G0 + d*G1) @ f to h(x)."""
        model, scope = self.scope.model, self.scope
        ph = model.branches[edge].phases
        q = 2 * len(ph)
        G0 = np.zeros((self.m, q))
        G1 = np.zeros((self.m, q))
        head = model.branches[edge].to_node
        below = set(scope.subtree(edge))
        zb = _zblock(model.z_pu(edge)[np.ix_(phase_idx(ph), phase_idx(ph))])  # = -Z
        for r in range(0, self.m, 2):
            kind, where, p = self.meta[r][:3]
            if kind == "V" and where in below and p in ph:
                a = ph.index(p)
                blk = -zb[2 * a:2 * a + 2]  # +Z rows
                G0[r:r + 2] += blk
                G1[r:r + 2] -= blk
            elif (kind == "S" and where == head and p in ph) or (
                    kind == "I" and where == edge and self.meta[r][4] == head and p in ph):
                a = ph.index(p)
                G0[r, 2 * a] -= 1.0
                G0[r + 1, 2 * a + 1] -= 1.0
        return G0, G1

    @cached_property
    def _sweep_plan(self):
        """Index arrays for gathering complex currents and sweeping voltages."""
        scope, model = self.scope, self.scope.model
        elems = [VROOT] + list(scope.edges)
        re_idx = np.zeros((len(elems), 3), int)
        ok = np.zeros((len(elems), 3), bool)
        for r, el in enumerate(elems):
            for i, p in enumerate(PHASES):
                k = self.index.get((el, p))
                if k is not None:
                    re_idx[r, i], ok[r, i] = k, True
        node_pos = {n: i for i, n in enumerate(scope.nodes)}
        steps = [(node_pos[model.branches[e].from_node], node_pos[model.branches[e].to_node], model.z_pu(e))
                 for e in scope.edges]
        return re_idx, ok, steps

    def sweep(self, x, fault: FaultHypothesis | None = None, fault_current=None) -> dict:
        re_idx, ok, steps = self._sweep_plan
        cur = np.where(ok, x[re_idx] + 1j * x[re_idx + 1], 0)
        v = np.zeros((len(self.scope.nodes), 3), complex)
        v[0] = cur[0]
        for k, (f, t, z) in enumerate(steps):
            i = cur[k + 1]
            if fault is not None and self.scope.edges[k] == fault.edge:
                i = i - (1 - fault.position) * fault_current
            v[t] = v[f] - z @ i
        return dict(zip(self.scope.nodes, v))

    def state_vector(self, x) -> StateVector:
        return StateVector(np.asarray(x, float), self.index)


def phase_idx(mask: str) -> list:
    return [PHASES.index(p) for p in mask]


def assemble(scope: Scope, measurements: MeasurementSet) -> LinearModel:
    """Build the constant Jacobian ``H`` and weights ``W`` of ``scope``.

    Rows are ordered voltages, currents, injections; the returned object
    exposes ``H`` (sparse), ``W`` and the row/state bookkeeping.
    """
    return LinearModel(scope, measurements)


def forward_sweep_voltages(state: StateVector, scope: Scope, fault: FaultHypothesis | None = None,
                           fault_current=None) -> dict:
    """V_k = V_root - sum over the root->k path of Z_p i_p, per phase."""
    model = scope.model
    volts = {scope.root: state.root_voltage()}
    for e in scope.edges:
        b = model.branches[e]
        drop = model.z_pu(e) @ state.current(e)
        if fault is not None and e == fault.edge:
            drop = drop - (1 - fault.position) * model.z_pu(e) @ fault_current
        volts[b.to_node] = volts[b.from_node] - drop
    return volts


def solve_normal_equations(Hd, w, z):
    """Solve (H' W H) x = H' W z by Cholesky; returns x and the factor."""
    A = Hd.T @ (w[:, None] * Hd)
    try:
        cf = sla.cho_factor(A, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        raise UnobservableError("gain matrix is singular")
    x = sla.cho_solve(cf, Hd.T @ (w * z), check_finite=False)
    return x, cf


def _initial_state(lm: LinearModel, volts: dict) -> np.ndarray:
    """Backward sweep of equivalent currents to branch currents."""
    scope, model = lm.scope, lm.scope.model
    z, _ = lm.observations(volts)
    inj = {}
    for k, (nd, i) in enumerate(lm.inj_node):
        r = lm.n_fixed + 2 * k
        inj.setdefault(nd, np.zeros(3, complex))[i] = z[r] + 1j * z[r + 1]
    x = np.zeros(lm.n)
    out_current = {}
    for b in scope.outflow:
        at = model.branches[b].from_node
        val, _, found = lm.measurements.current(b, at)
        out_current[b] = np.where(found, val, 0)
    flow = {}
    for nd in reversed(scope.nodes):
        c = inj.get(nd, np.zeros(3, complex)).copy()
        for ch in scope.children[nd]:
            c = c + (flow[ch] if ch in flow else out_current[ch])
        if nd != scope.root:
            flow[scope.parent_edge[nd]] = c
    flow.update(out_current)
    root_v, _, _ = lm.measurements.voltage(scope.root)
    for (el, p), k in lm.index.items():
        val = root_v[PHASES.index(p)] if el == VROOT else flow[el][PHASES.index(p)]
        x[k], x[k + 1] = val.real, val.imag
    return x


def estimate(scope_or_model, measurements: MeasurementSet | None = None, config: WlsConfig = WlsConfig(),
             fault: FaultHypothesis | None = None, start_voltages: dict | None = None) -> WlsResult:
    """Iterated WLS: solve the affine model, sweep voltages, refresh equivalents.

    ``fault`` adds a free shunt injection at a fixed fraction of one branch,
    which lets the estimator explain a fault current located there.
    """
    lm = scope_or_model if isinstance(scope_or_model, LinearModel) else assemble(scope_or_model, measurements)
    scope = lm.scope
    Hd = lm.Hd
    q = 0
    if fault is not None:
        G0, G1 = lm.fault_columns(fault.edge)
        Hd = np.hstack([Hd, G0 + fault.position * G1])
        q = G0.shape[1]
    if start_voltages is None:
        volts = lm.flat_voltages()
        x = _initial_state(lm, volts)
        volts = lm.sweep(x)
        x = np.concatenate([x, np.zeros(q)])
    else:
        volts = start_voltages
        x = None
    history, converged, it = [], False, 0
    for it in range(1, config.max_iter + 1):
        frozen = volts
        z, var = lm.observations(volts)
        w = 1.0 / var
        x_new, _ = solve_normal_equations(Hd, w, z)
        dx = np.inf if x is None else float(np.max(np.abs(x_new - x)))
        history.append(dx)
        x = x_new
        fcur = _fault_phasor(lm, fault, x[lm.n:]) if fault else None
        volts = lm.sweep(x[:lm.n], fault, fcur)
        if dx < config.tol:
            converged = True
            break
    r = z - Hd @ x
    wr = np.sqrt(w) * r
    return WlsResult(lm.state_vector(x[:lm.n]), float(wr @ wr), it, converged, wr, lm.m - lm.n - q,
                     volts, history, fault, _fault_phasor(lm, fault, x[lm.n:]) if fault else None, frozen)


def _fault_phasor(lm, fault, f):
    ph = lm.scope.model.branches[fault.edge].phases
    out = np.zeros(3, complex)
    for a, p in enumerate(ph):
        out[PHASES.index(p)] = f[2 * a] + 1j * f[2 * a + 1]
    return out


# ---------------------------------------------------------------------------
# Fault hypotheses: best position of a free injection along one branch
# ---------------------------------------------------------------------------

@dataclass
class HypothesisScan:
    """Best fault position and WMR for every scanned branch, equivalents frozen
    at ``voltages`` (the self-consistent voltages of the best hypothesis)."""

    wmr: dict  # edge -> minimum WMR over the position range
    position: dict  # edge -> minimising position
    best: WlsResult
    voltages: dict
    outer_iterations: int

    def min_over(self, edges) -> float:
        vals = [self.wmr[e] for e in edges if e in self.wmr]
        return min(vals) if vals else np.inf


def _best_position(J, bounds, npts=9):
    grid = np.linspace(bounds[0], bounds[1], npts)
    vals = J.batch(grid)
    k = int(np.argmin(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, npts - 1)]
    res = minimize_scalar(J, bounds=(lo, hi), method="bounded", options={"xatol": 1e-3})
    if res.fun < vals[k]:
        return float(res.x), float(res.fun)
    return float(grid[k]), float(vals[k])


def scan_fault_hypotheses(lm: LinearModel, edges=None, config: WlsConfig = WlsConfig(), bounds=(0.0, 1.0),
                          start_voltages: dict | None = None, outer: int = 6) -> HypothesisScan:
    """Fit a single fault injection on each branch of ``edges`` (default: all).

    Outer iterations refresh the equivalent currents at the voltages implied
    by the currently best hypothesis; within one outer step every branch is
    profiled over its position with a single factorisation of the gain
    matrix.
    """
    edges = tuple(lm.scope.edges if edges is None else edges)
    cols = lm.__dict__.setdefault("_fault_cols", {})
    for e in edges:
        if e not in cols:
            cols[e] = lm.fault_columns(e)
    volts = start_voltages or lm.flat_voltages()
    prev = None
    for it in range(1, outer + 1):
        z, var = lm.observations(volts)
        w = 1.0 / var
        wmr, pos = {}, {}
        base = _Profiler(lm.Hd, w, z)
        for e in edges:
            pos[e], wmr[e] = _best_position(base.profile(*cols[e]), bounds)
        e_best = min(edges, key=lambda e: (wmr[e], edges.index(e)))
        hyp = FaultHypothesis(e_best, pos[e_best])
        best = estimate(lm, config=WlsConfig(tol=np.inf, max_iter=1), fault=hyp, start_voltages=volts)
        new = np.concatenate([best.voltages[n] for n in lm.scope.nodes])
        volts = best.voltages
        if prev is not None and np.max(np.abs(new - prev)) < config.tol:
            break
        prev = new
    return HypothesisScan(wmr, pos, best, volts, it)


class _Profiler:
    """Shared factorisation for profiling J(d) of many injection hypotheses."""

    def __init__(self, Hd, w, z):
        self.Hd, self.w = Hd, w
        x0, self.cf = solve_normal_equations(Hd, w, z)
        self.r0 = z - Hd @ x0
        self.J0 = float(self.r0 @ (w * self.r0))

    def profile(self, G0, G1):
        Hd, w, cf, r0, J0 = self.Hd, self.w, self.cf, self.r0, self.J0
        WG0, WG1 = w[:, None] * G0, w[:, None] * G1
        M0, M1 = Hd.T @ WG0, Hd.T @ WG1
        K0, K1 = sla.cho_solve(cf, M0, check_finite=False), sla.cho_solve(cf, M1, check_finite=False)
        u0, u1 = WG0.T @ r0, WG1.T @ r0
        S00 = G0.T @ WG0 - M0.T @ K0
        S01 = G0.T @ WG1 - M0.T @ K1
        S01 = S01 + S01.T
        S11 = G1.T @ WG1 - M1.T @ K1

        return _ProfileFn(J0, u0, u1, S00, S01, S11)


class _ProfileFn:
    """J(d) = J0 - u(d)' S(d)^-1 u(d) with u and S polynomial in d."""

    def __init__(self, J0, u0, u1, S00, S01, S11):
        self.J0, self.u0, self.u1, self.S00, self.S01, self.S11 = J0, u0, u1, S00, S01, S11

    def __call__(self, d):
        u = self.u0 + d * self.u1
        try:
            return self.J0 - float(u @ np.linalg.solve(self.S00 + d * self.S01 + d * d * self.S11, u))
        except np.linalg.LinAlgError:
            return self.J0

    def batch(self, d):
        d = np.asarray(d, float)
        u = self.u0[None, :] + d[:, None] * self.u1[None, :]
        S = self.S00[None] + d[:, None, None] * self.S01[None] + (d * d)[:, None, None] * self.S11[None]
        try:
            sol = np.linalg.solve(S, u[..., None])[..., 0]
        except np.linalg.LinAlgError:
            return np.array([self(di) for di in d])
        return self.J0 - np.einsum("ij,ij->i", u, sol)


def fit_fault_hypothesis(lm: LinearModel, edge: str, config: WlsConfig = WlsConfig(),
                         bounds=(0.0, 1.0), start_voltages: dict | None = None) -> WlsResult:
    """Minimum-WMR fault injection on one branch, iterated to self-consistency."""
    scan = scan_fault_hypotheses(lm, (edge,), config, bounds, start_voltages)
    hyp = FaultHypothesis(edge, scan.position[edge])
    return estimate(lm, config=config, fault=hyp, start_voltages=scan.voltages)
