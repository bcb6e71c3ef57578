"""Three-phase radial feeder model, micro-PMU partitioning and path chains.

A feeder document is JSON with the sections ``name``, ``base``, ``slack``,
``nodes``, ``branches``, ``loads``, ``dgs`` and ``pmus``; see the README for
the field list.  Impedances are kept in ohms exactly as read so that a
model serialises back to the same document; per-unit values are derived.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

PHASES = "abc"


class FeederError(ValueError):
    """Raised for malformed or physically inconsistent feeder documents."""

    def __init__(self, message: str, element: str | None = None):
        super().__init__(f"{message} [{element}]" if element is not None else message)
        self.element = element


class PartitionError(FeederError):
    pass


def phase_index(mask: str) -> list[int]:
    return [PHASES.index(p) for p in mask]


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Base:
    kv_ll: float
    mva: float

    @property
    def v_base(self) -> float:
        """Line-to-neutral voltage base (V)."""
        return self.kv_ll * 1e3 / math.sqrt(3.0)

    @property
    def s_base(self) -> float:
        """Single-phase power base (VA)."""
        return self.mva * 1e6 / 3.0

    @property
    def z_base(self) -> float:
        return self.v_base**2 / self.s_base

    @property
    def i_base(self) -> float:
        return self.s_base / self.v_base


@dataclass(frozen=True)
class BranchSpec:
    id: str
    from_node: str
    to_node: str
    length_m: float
    r_ohm: np.ndarray
    x_ohm: np.ndarray

    @cached_property
    def phases(self) -> str:
        return "".join(p for i, p in enumerate(PHASES) if self.r_ohm[i, i] > 0 or self.x_ohm[i, i] > 0)

    @property
    def z_ohm(self) -> np.ndarray:
        return self.r_ohm + 1j * self.x_ohm


@dataclass(frozen=True)
class PmuPlacement:
    node: str
    measured_branches: frozenset


@dataclass(frozen=True, eq=False)
class FeederModel:
    """Validated radial feeder.  Build it with :func:`load_feeder`."""

    name: str
    base: Base
    slack: str
    nodes: Mapping[str, str]  # node id -> phase mask, e.g. "abc"
    branches: Mapping[str, BranchSpec]
    loads: Mapping[str, np.ndarray]  # node -> complex W+jvar per phase (len 3)
    dgs: Mapping[str, np.ndarray]
    pmus: Mapping[str, PmuPlacement]
    slack_voltage_pu: float = 1.0

    # -- topology (derived, cached) -------------------------------------
    @cached_property
    def parent_branch(self) -> dict[str, str]:
        return {b.to_node: b.id for b in self.branches.values()}

    @cached_property
    def children(self) -> dict[str, list[str]]:
        """Outgoing branch ids per node, in document order."""
        out = {n: [] for n in self.nodes}
        for b in self.branches.values():
            out[b.from_node].append(b.id)
        return out

    @cached_property
    def order(self) -> list[str]:
        """Nodes in breadth-first order from the slack."""
        seen = [self.slack]
        queue = deque([self.slack])
        while queue:
            n = queue.popleft()
            for bid in self.children[n]:
                m = self.branches[bid].to_node
                seen.append(m)
                queue.append(m)
        return seen

    @cached_property
    def depth(self) -> dict[str, int]:
        d = {self.slack: 0}
        for n in self.order[1:]:
            d[n] = d[self.branches[self.parent_branch[n]].from_node] + 1
        return d

    def path_to_slack(self, node: str) -> list[str]:
        """Branch ids from the slack down to ``node`` (the set J_k)."""
        path = []
        while node != self.slack:
            bid = self.parent_branch[node]
            path.append(bid)
            node = self.branches[bid].from_node
        return path[::-1]

    def subtree_nodes(self, node: str) -> list[str]:
        out, stack = [], [node]
        while stack:
            n = stack.pop()
            out.append(n)
            stack.extend(self.branches[b].to_node for b in self.children[n])
        return out

    def incident(self, node: str) -> list[str]:
        inc = list(self.children[node])
        if node in self.parent_branch:
            inc.insert(0, self.parent_branch[node])
        return inc

    # -- per-unit accessors ---------------------------------------------
    @cached_property
    def _z_pu(self) -> dict:
        return {bid: _frozen(b.z_ohm / self.base.z_base, complex) for bid, b in self.branches.items()}

    def z_pu(self, branch_id: str) -> np.ndarray:
        return self._z_pu[branch_id]

    def load_pu(self, node: str) -> np.ndarray:
        return self.loads.get(node, np.zeros(3, complex)) / self.base.s_base

    def dg_pu(self, node: str) -> np.ndarray:
        return self.dgs.get(node, np.zeros(3, complex)) / self.base.s_base

    def slack_voltage(self) -> np.ndarray:
        v = self.slack_voltage_pu * np.exp(-2j * np.pi / 3 * np.arange(3))
        mask = np.array([p in self.nodes[self.slack] for p in PHASES])
        return np.where(mask, v, 0)

    # -- derived model variants -----------------------------------------
    def with_impedance_scale(self, scale: Mapping[str, tuple[float, float]]) -> "FeederModel":
        """Copy with branch R and X multiplied by per-branch ``(r, x)`` factors."""
        branches = {}
        for bid, b in self.branches.items():
            fr, fx = scale.get(bid, (1.0, 1.0))
            branches[bid] = BranchSpec(b.id, b.from_node, b.to_node, b.length_m,
                                       _frozen(b.r_ohm * fr), _frozen(b.x_ohm * fx))
        return FeederModel(self.name, self.base, self.slack, self.nodes, branches, self.loads,
                           self.dgs, self.pmus, self.slack_voltage_pu)


# ---------------------------------------------------------------------------
# Document I/O
# ---------------------------------------------------------------------------

_TOP_KEYS = {"name", "base", "slack", "slack_voltage_pu", "nodes", "branches", "loads", "dgs", "pmus"}
_REQUIRED = {"base", "slack", "nodes", "branches", "pmus"}
_BRANCH_KEYS = {"id", "from", "to", "length_m", "r_ohm", "x_ohm"}
_INJ_KEYS = {"node", "p_w", "q_var"}


def _check_keys(obj, allowed, required, where):
    if not isinstance(obj, dict):
        raise FeederError("expected an object", where)
    unknown = set(obj) - allowed
    if unknown:
        raise FeederError(f"unknown field(s) {sorted(unknown)}", where)
    missing = set(required) - set(obj)
    if missing:
        raise FeederError(f"missing field(s) {sorted(missing)}", where)


def _read_source(source) -> dict:
    if isinstance(source, dict):
        return source
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        with open(source) as fh:
            return json.load(fh)
    return json.loads(source)


def _matrix(value, where) -> np.ndarray:
    m = np.asarray(value, dtype=float)
    if m.shape != (3, 3):
        raise FeederError("impedance matrix must be 3x3 (list of rows)", where)
    return m


def load_feeder(source) -> FeederModel:
    """Parse and validate a feeder document (path, JSON text or dict).

    Raises :class:`FeederError` naming the offending element for unknown
    fields, cycles, disconnected nodes, phase inconsistencies and a missing
    substation micro-PMU.
    """
    doc = _read_source(source)
    _check_keys(doc, _TOP_KEYS, _REQUIRED, "feeder")

    base_doc = doc["base"]
    _check_keys(base_doc, {"kv_ll", "mva"}, {"kv_ll", "mva"}, "base")
    base = Base(float(base_doc["kv_ll"]), float(base_doc["mva"]))
    if base.kv_ll <= 0 or base.mva <= 0:
        raise FeederError("bases must be positive", "base")

    nodes: dict[str, str] = {}
    for nd in doc["nodes"]:
        _check_keys(nd, {"id", "phases"}, {"id", "phases"}, "nodes")
        nid, mask = str(nd["id"]), str(nd["phases"])
        if nid in nodes:
            raise FeederError("duplicate node", nid)
        if not mask or any(p not in PHASES for p in mask) or len(set(mask)) != len(mask):
            raise FeederError(f"bad phase mask {mask!r}", nid)
        nodes[nid] = "".join(p for p in PHASES if p in mask)

    slack = str(doc["slack"])
    if slack not in nodes:
        raise FeederError("slack is not a node", slack)

    branches: dict[str, BranchSpec] = {}
    for bd in doc["branches"]:
        _check_keys(bd, _BRANCH_KEYS, _BRANCH_KEYS, str(bd.get('id')) if isinstance(bd, dict) else "branches")
        bid = str(bd["id"])
        if bid in branches:
            raise FeederError("duplicate branch", bid)
        f, t = str(bd["from"]), str(bd["to"])
        for end in (f, t):
            if end not in nodes:
                raise FeederError(f"unknown endpoint {end}", bid)
        r, x = _matrix(bd["r_ohm"], bid), _matrix(bd["x_ohm"], bid)
        if not (np.allclose(r, r.T, rtol=0, atol=1e-12) and np.allclose(x, x.T, rtol=0, atol=1e-12)):
            raise FeederError("R and X must be symmetric", bid)
        b = BranchSpec(bid, f, t, float(bd["length_m"]), _frozen(r), _frozen(x))
        present = [p in b.phases for p in PHASES]
        for i in range(3):
            if present[i]:
                if r[i, i] <= 0:
                    raise FeederError(f"non-positive resistance on phase {PHASES[i]}", bid)
            elif np.any(r[i]) or np.any(r[:, i]) or np.any(x[i]) or np.any(x[:, i]):
                raise FeederError(f"absent phase {PHASES[i]} must have zero row and column", bid)
        if not b.phases:
            raise FeederError("branch has no phases", bid)
        if not (set(b.phases) <= set(nodes[f]) and set(b.phases) <= set(nodes[t])):
            raise FeederError("branch phases not present at both endpoints", bid)
        if b.length_m <= 0:
            raise FeederError("length must be positive", bid)
        branches[bid] = b

    _check_tree(nodes, branches, slack)
    for b in branches.values():
        if nodes[b.to_node] != b.phases:
            raise FeederError("node phases must equal those of its feeding branch", b.to_node)

    def injections(section):
        out: dict[str, np.ndarray] = {}
        for ld in doc.get(section, []):
            _check_keys(ld, _INJ_KEYS, _INJ_KEYS, section)
            nid = str(ld["node"])
            if nid not in nodes:
                raise FeederError(f"{section} entry at unknown node", nid)
            if nid == slack:
                raise FeederError(f"{section} at the slack node are not supported", nid)
            if nid in out:
                raise FeederError(f"duplicate {section} entry", nid)
            p, q = np.asarray(ld["p_w"], float), np.asarray(ld["q_var"], float)
            if p.shape != (3,) or q.shape != (3,):
                raise FeederError("p_w and q_var must list three phases", nid)
            s = p + 1j * q
            for i, ph in enumerate(PHASES):
                if s[i] != 0 and ph not in nodes[nid]:
                    raise FeederError(f"{section} on absent phase {ph}", nid)
            s.setflags(write=False)
            out[nid] = s
        return out

    loads, dgs = injections("loads"), injections("dgs")

    pmus: dict[str, PmuPlacement] = {}
    for pd in doc["pmus"]:
        _check_keys(pd, {"node", "branches"}, {"node", "branches"}, "pmus")
        nid = str(pd["node"])
        if nid not in nodes:
            raise FeederError("micro-PMU at unknown node", nid)
        if nid in pmus:
            raise FeederError("duplicate micro-PMU", nid)
        measured = frozenset(str(b) for b in pd["branches"])
        for bid in measured:
            if bid not in branches or nid not in (branches[bid].from_node, branches[bid].to_node):
                raise FeederError(f"micro-PMU at {nid} measures non-incident branch", bid)
        pmus[nid] = PmuPlacement(nid, measured)
    if slack not in pmus:
        raise FeederError("no micro-PMU at the substation", slack)

    return FeederModel(
        name=str(doc.get("name", "feeder")), base=base, slack=slack, nodes=nodes,
        branches=branches, loads=loads, dgs=dgs, pmus=pmus,
        slack_voltage_pu=float(doc.get("slack_voltage_pu", 1.0)),
    )


def _check_tree(nodes, branches, slack):
    parent: dict[str, str] = {}
    for b in branches.values():
        if b.to_node == slack:
            raise FeederError("branch feeds into the slack", b.id)
        if b.to_node in parent:
            raise FeederError("cycle detected: node has two feeding branches", b.id)
        parent[b.to_node] = b.id
    # walk every node up to the slack; a revisit before reaching it is a cycle
    for n in nodes:
        seen = set()
        cur = n
        while cur != slack:
            if cur in seen:
                raise FeederError("cycle detected", parent[cur])
            seen.add(cur)
            if cur not in parent:
                raise FeederError("node not connected to the slack", n)
            cur = branches[parent[cur]].from_node
    if len(branches) != len(nodes) - 1:  # pragma: no cover - implied by the walk above
        raise FeederError("graph is not a tree", "feeder")


def feeder_to_document(model: FeederModel) -> dict:
    def inj(section):
        return [{"node": n, "p_w": s.real.tolist(), "q_var": s.imag.tolist()} for n, s in section.items()]

    return {
        "name": model.name,
        "base": {"kv_ll": model.base.kv_ll, "mva": model.base.mva},
        "slack": model.slack,
        "slack_voltage_pu": model.slack_voltage_pu,
        "nodes": [{"id": n, "phases": m} for n, m in model.nodes.items()],
        "branches": [
            {"id": b.id, "from": b.from_node, "to": b.to_node, "length_m": b.length_m,
             "r_ohm": b.r_ohm.tolist(), "x_ohm": b.x_ohm.tolist()}
            for b in model.branches.values()
        ],
        "loads": inj(model.loads),
        "dgs": inj(model.dgs),
        "pmus": [{"node": p.node, "branches": sorted(p.measured_branches)} for p in model.pmus.values()],
    }


def feeders_equal(a: FeederModel, b: FeederModel) -> bool:
    return json.dumps(feeder_to_document(a), sort_keys=True) == json.dumps(feeder_to_document(b), sort_keys=True)


# ---------------------------------------------------------------------------
# Partition into micro-PMU bounded subgraphs
# ---------------------------------------------------------------------------

ROOT, FAR, INNER = 1, 2, 3  # node classes V_K1, V_K2, V_K3


@dataclass(frozen=True)
class Subgraph:
    index: int
    root: str
    far_pmus: tuple[str, ...]
    nodes: tuple[str, ...]
    node_class: Mapping[str, int]
    edges: tuple[str, ...]  # breadth-first from the root
    trunk: frozenset
    boundary: Mapping[str, tuple[str, ...]]  # far node -> outgoing measured branches

    def nodes_of_class(self, cls: int) -> list[str]:
        return [n for n in self.nodes if self.node_class[n] == cls]


@dataclass(frozen=True)
class SubgraphPartition:
    model: FeederModel
    subgraphs: tuple[Subgraph, ...]
    direct_branches: tuple[str, ...]

    def __getitem__(self, k: int) -> Subgraph:
        return self.subgraphs[k - 1]

    def subgraph_of(self, branch_id: str) -> int | None:
        for sg in self.subgraphs:
            if branch_id in sg.edges:
                return sg.index
        return None


def partition(model: FeederModel) -> SubgraphPartition:
    """Split the feeder into subgraphs G_1..G_{M-1} between adjacent micro-PMUs.

    One subgraph is produced per non-PMU child of each micro-PMU node whose
    subtree reaches further micro-PMUs.  Laterals without micro-PMUs hanging
    off a far micro-PMU are assigned to the subgraph ending there.  A branch
    joining two micro-PMU nodes is returned in ``direct_branches``.
    """
    if len(model.pmus) < 2:
        raise PartitionError("at least two micro-PMUs are required", model.name)
    has_pmu_below: dict[str, bool] = {}
    for n in reversed(model.order):
        has_pmu_below[n] = n in model.pmus or any(
            has_pmu_below[model.branches[b].to_node] for b in model.children[n])

    def region_from(first_branch):
        """Edges reachable through ``first_branch`` without passing a PMU node."""
        edges, fars = [first_branch], []
        queue = deque([model.branches[first_branch].to_node])
        while queue:
            n = queue.popleft()
            if n in model.pmus:
                fars.append(n)
                # PMU-free laterals at the far node belong here
                for b in model.children[n]:
                    if not has_pmu_below[model.branches[b].to_node]:
                        edges.extend(_bfs_edges(model, b))
                continue
            for b in model.children[n]:
                edges.append(b)
                queue.append(model.branches[b].to_node)
        return edges, fars

    subgraphs, direct = [], []
    for u in model.order:
        if u not in model.pmus:
            continue
        for b in model.children[u]:
            child = model.branches[b].to_node
            if child in model.pmus:
                direct.append(b)
                continue
            if not has_pmu_below[child]:
                if u == model.slack:
                    raise PartitionError("lateral at the substation has no micro-PMU boundary", b)
                continue  # lateral at a far PMU node, handled by the upstream subgraph
            edges, fars = region_from(b)
            trunk = set()
            for w in fars:
                n = w
                while n != u:
                    pb = model.parent_branch[n]
                    trunk.add(pb)
                    n = model.branches[pb].from_node
            nodes = [u] + [model.branches[e].to_node for e in edges]
            cls = {n: INNER for n in nodes}
            cls[u] = ROOT
            for w in fars:
                cls[w] = FAR
            boundary = {}
            for w in fars:
                out = tuple(c for c in model.children[w] if c not in edges)
                unmeasured = [c for c in out if c not in model.pmus[w].measured_branches]
                if unmeasured:
                    raise PartitionError(f"boundary branch not measured by micro-PMU at {w}", unmeasured[0])
                boundary[w] = out
            if b not in model.pmus[u].measured_branches:
                raise PartitionError(f"root micro-PMU at {u} does not measure the first branch", b)
            subgraphs.append(Subgraph(len(subgraphs) + 1, u, tuple(fars), tuple(nodes), cls,
                                      tuple(edges), frozenset(trunk), boundary))
    for sg in subgraphs:
        if not sg.far_pmus:  # pragma: no cover - excluded by has_pmu_below
            raise PartitionError("subgraph without far micro-PMU", sg.root)
    return SubgraphPartition(model, tuple(subgraphs), tuple(direct))


def _bfs_edges(model: FeederModel, first: str) -> list[str]:
    out, queue = [], deque([first])
    while queue:
        b = queue.popleft()
        out.append(b)
        queue.extend(model.children[model.branches[b].to_node])
    return out


# ---------------------------------------------------------------------------
# Path chains inside one subgraph
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Increment:
    trunk_edge: str
    lateral_edges: tuple[str, ...]  # depth-first along each lateral chain

    @property
    def edges(self) -> tuple[str, ...]:
        return (self.trunk_edge,) + self.lateral_edges


@dataclass(frozen=True)
class PathChain:
    subgraph: int
    increments: tuple[Increment, ...]  # increments[0] is P_1 itself
    paths: tuple[frozenset, ...]
    frontier: tuple[tuple[str, ...], ...]  # sending-end branches leaving each path

    def __len__(self):
        return len(self.paths)


def enumerate_paths(part: SubgraphPartition, k: int) -> PathChain:
    """Nested root-anchored paths P_1 ⊂ ... ⊂ P_S of subgraph ``k``.

    Each step adds one trunk edge (breadth-first) together with the complete
    laterals hanging off the trunk node it reaches.
    """
    if not 1 <= k <= len(part.subgraphs):
        raise IndexError(f"no subgraph {k}")
    model, sg = part.model, part[k]
    in_sg = set(sg.edges)
    trunk_order = [e for e in sg.edges if e in sg.trunk]

    def lateral_chain(first):
        out, stack = [], [first]
        while stack:
            b = stack.pop()
            out.append(b)
            stack.extend(reversed([c for c in model.children[model.branches[b].to_node] if c in in_sg]))
        return out

    increments = []
    for e in trunk_order:
        head = model.branches[e].to_node
        lats = []
        for c in model.children[head]:
            if c in in_sg and c not in sg.trunk:
                lats.extend(lateral_chain(c))
        increments.append(Increment(e, tuple(lats)))

    paths, frontier, acc = [], [], set()
    for inc in increments:
        acc |= set(inc.edges)
        path = frozenset(acc)
        paths.append(path)
        nodes = {sg.root} | {model.branches[e].to_node for e in path}
        front = [c for n in sorted(nodes, key=model.order.index) for c in model.children[n]
                 if c not in path and (c in in_sg or n in sg.boundary)]
        frontier.append(tuple(front))
    return PathChain(k, tuple(increments), tuple(paths), tuple(frontier))


def tree_hops(model: FeederModel, a: str, b: str) -> int:
    """Branch distance: 0 for the same branch, 1 when they share a node."""
    if a == b:
        return 0
    ea = (model.branches[a].from_node, model.branches[a].to_node)
    eb = (model.branches[b].from_node, model.branches[b].to_node)
    return 1 + min(node_distance(model, x, y) for x in ea for y in eb)


def node_distance(model: FeederModel, x: str, y: str) -> int:
    px, py = model.path_to_slack(x), model.path_to_slack(y)
    common = 0
    for p, q in zip(px, py):
        if p != q:
            break
        common += 1
    return len(px) + len(py) - 2 * common
