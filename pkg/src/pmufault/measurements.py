"""Measurement sets, noise synthesis and equivalent-current conversions."""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .feeder import PHASES

KINDS = ("V_rect", "I_rect", "PQ_pseudo", "I_equiv", "I_sub")
VARIANCE_FLOOR = 1e-8
DEGENERATE_VOLTAGE = 1e-3


class DegenerateVoltageError(ValueError):
    pass


@dataclass(frozen=True)
class Measurement:
    kind: str
    location: str
    phase: str
    real: float
    imag: float
    var_real: float = VARIANCE_FLOOR
    var_imag: float = VARIANCE_FLOOR
    # I_rect: node of the measuring micro-PMU; PQ_pseudo: "load" or "dg"
    tag: str = ""

    @property
    def value(self) -> complex:
        return complex(self.real, self.imag)

    @property
    def key(self):
        return (self.kind, self.location, self.phase, self.tag)


@dataclass(frozen=True)
class NoiseProfile:
    """Maximum errors; ``sigma_rule`` maps a maximum error to one sigma."""

    pmu_mag_max_err: float = 0.01
    pmu_ang_max_err: float = 0.01
    pseudo_max_err: float = 0.20
    dg_meter_max_err: float = 0.03
    sigma_rule: float = 3.0

    def __post_init__(self):
        if min(self.pmu_mag_max_err, self.pmu_ang_max_err, self.pseudo_max_err, self.dg_meter_max_err) < 0:
            raise ValueError("maximum errors must be non-negative")
        if self.sigma_rule <= 0:
            raise ValueError("sigma_rule must be positive")

    @classmethod
    def zero(cls) -> "NoiseProfile":
        return cls(0.0, 0.0, 0.0, 0.0)


class MeasurementSet:
    """Immutable collection of measurements keyed by (kind, location, phase, tag)."""

    def __init__(self, entries, seed=None, scenario: str = ""):
        self.entries = tuple(entries)
        self.seed = seed
        self.scenario = scenario
        self._index = {}
        for m in self.entries:
            if m.kind not in KINDS:
                raise ValueError(f"unknown measurement kind {m.kind!r}")
            if m.var_real <= 0 or m.var_imag <= 0:
                raise ValueError(f"non-positive variance for {m.key}")
            if m.key in self._index:
                raise ValueError(f"duplicate measurement {m.key}")
            self._index[m.key] = m

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def get(self, kind, location, phase, tag=""):
        return self._index.get((kind, location, phase, tag))

    def _phasor(self, kind, location, tag):
        val = np.zeros(3, complex)
        var = np.zeros((3, 2))
        found = np.zeros(3, bool)
        for i, p in enumerate(PHASES):
            m = self._index.get((kind, location, p, tag))
            if m is not None:
                val[i], var[i], found[i] = m.value, (m.var_real, m.var_imag), True
        return val, var, found

    def voltage(self, node):
        """Measured voltage phasor, variances (3x2) and presence mask."""
        return self._phasor("V_rect", node, "")

    def current(self, branch, at_node):
        return self._phasor("I_rect", branch, at_node)

    def pseudo_power(self, node):
        """Net consumed power (p.u.) at ``node`` with summed variances."""
        s = np.zeros(3, complex)
        var = np.zeros((3, 2))
        found = np.zeros(3, bool)
        for tag in ("load", "dg"):
            v, vv, f = self._phasor("PQ_pseudo", node, tag)
            s += v
            var += vv
            found |= f
        return s, var, found

    def has_voltage(self, node):
        return any((("V_rect", node, p, "") in self._index) for p in PHASES)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "location", "phase", "tag", "real", "imag", "var_real", "var_imag", "seed"])
            for m in self.entries:
                w.writerow([m.kind, m.location, m.phase, m.tag, repr(float(m.real)), repr(float(m.imag)),
                            repr(float(m.var_real)), repr(float(m.var_imag)), "" if self.seed is None else self.seed])

    @classmethod
    def from_csv(cls, path) -> "MeasurementSet":
        entries, seed = [], None
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                entries.append(Measurement(row["kind"], row["location"], row["phase"], float(row["real"]),
                                           float(row["imag"]), float(row["var_real"]),
                                           float(row["var_imag"]), row.get("tag", "") or ""))
                if row.get("seed"):
                    seed = int(row["seed"])
        return cls(entries, seed=seed)


def _floor(v):
    return max(float(v), VARIANCE_FLOOR)


def polar_to_rect_variance(value: complex, var_mag: float, var_ang: float) -> tuple[float, float]:
    """First-order propagation of polar variances to rectangular components."""
    m, th = abs(value), np.angle(value)
    c, s = np.cos(th), np.sin(th)
    return _floor(c * c * var_mag + m * m * s * s * var_ang), _floor(s * s * var_mag + m * m * c * c * var_ang)


def synthesize(exact: MeasurementSet, profile: NoiseProfile, seed=None, *, rng=None,
               noise: bool = True) -> MeasurementSet:
    """Perturb exact measurements and assign their variances.

    Phasors get Gaussian magnitude and angle errors and are converted back to
    rectangular form; pseudo powers get per-component relative errors.  With
    ``noise=False`` only the variances are assigned.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    k = profile.sigma_rule
    out = []
    for m in exact:
        if m.kind in ("V_rect", "I_rect"):
            v = m.value
            mag, ang = abs(v), np.angle(v)
            if noise:
                e_mag, e_ang = rng.standard_normal(2)
                mag = mag + e_mag * profile.pmu_mag_max_err * mag / k
                ang = ang + e_ang * profile.pmu_ang_max_err / k
                v = mag * np.exp(1j * ang) if profile.pmu_mag_max_err or profile.pmu_ang_max_err else m.value
            vr, vx = polar_to_rect_variance(v, (profile.pmu_mag_max_err * abs(v) / k) ** 2,
                                            (profile.pmu_ang_max_err / k) ** 2)
            out.append(replace(m, real=v.real, imag=v.imag, var_real=vr, var_imag=vx))
        elif m.kind == "PQ_pseudo":
            err = profile.dg_meter_max_err if m.tag == "dg" else profile.pseudo_max_err
            p, q = m.real, m.imag
            if noise:
                e_p, e_q = rng.standard_normal(2)
                p = p + e_p * err * abs(p) / k
                q = q + e_q * err * abs(q) / k
            out.append(replace(m, real=p, imag=q, var_real=_floor((err * abs(p) / k) ** 2),
                               var_imag=_floor((err * abs(q) / k) ** 2)))
        else:
            out.append(m)
    return MeasurementSet(out, seed=seed, scenario=exact.scenario)


def to_equivalent_current(s: complex, v: complex, var_p: float = 0.0, var_q: float = 0.0):
    """Consumed current conj(S/V) and the variances of its real and imaginary parts."""
    if abs(v) < DEGENERATE_VOLTAGE:
        raise DegenerateVoltageError(f"|V| = {abs(v):.3g} p.u. is too small for current conversion")
    i = np.conj(s / v)
    m2 = abs(v) ** 2
    c2, s2 = np.cos(np.angle(v)) ** 2, np.sin(np.angle(v)) ** 2
    return complex(i), (_floor((var_p * c2 + var_q * s2) / m2), _floor((var_p * s2 + var_q * c2) / m2))


def equivalent_currents(s, var_pq, v, mask):
    """Vectorised per-phase version of :func:`to_equivalent_current`."""
    s, v = np.asarray(s), np.asarray(v)
    if np.any(np.abs(v[mask]) < DEGENERATE_VOLTAGE):
        raise DegenerateVoltageError("degenerate voltage in current conversion")
    i = np.zeros(3, complex)
    var = np.full((3, 2), VARIANCE_FLOOR)
    vv = v[mask]
    i[mask] = np.conj(s[mask] / vv)
    m2 = np.abs(vv) ** 2
    c2, s2 = np.cos(np.angle(vv)) ** 2, np.sin(np.angle(vv)) ** 2
    var[mask, 0] = np.maximum((var_pq[mask, 0] * c2 + var_pq[mask, 1] * s2) / m2, VARIANCE_FLOOR)
    var[mask, 1] = np.maximum((var_pq[mask, 0] * s2 + var_pq[mask, 1] * c2) / m2, VARIANCE_FLOOR)
    return i, var


def boundary_equivalent(eq_current: complex, eq_var, outflow: complex, outflow_var):
    """Injection at a far micro-PMU node: pseudo equivalent plus measured outflow."""
    if outflow is None:
        raise ValueError("boundary node lacks a downstream current measurement")
    return complex(eq_current + outflow), (eq_var[0] + outflow_var[0], eq_var[1] + outflow_var[1])


def initial_equivalents(subgraph, measurements: MeasurementSet, v_root=None) -> dict:
    """Starting current injections at every non-root node of ``subgraph``.

    Pseudo powers are converted with the root voltage; far micro-PMU nodes
    additionally carry their measured outgoing boundary currents.
    """
    if v_root is None:
        v_root, _, _ = measurements.voltage(subgraph.root)
    v_root = np.asarray(v_root)
    out = {}
    for n in subgraph.nodes:
        if n == subgraph.root:
            continue
        s, var, found = measurements.pseudo_power(n)
        mask = found & (np.abs(v_root) > 0)
        if np.any(found & (np.abs(v_root) < DEGENERATE_VOLTAGE)):
            raise DegenerateVoltageError("root voltage too small")
        inj, _ = equivalent_currents(s, var, v_root, mask)
        for b in subgraph.boundary.get(n, ()):
            meas, _, _ = measurements.current(b, n)
            inj = inj + meas
        out[n] = inj
    return out
