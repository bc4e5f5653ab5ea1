"""Grids, sampled signals, coincidence intervals and branching processes.

A branching line is modelled as ``m`` copies of the real axis, each carrying
one complex signal, plus a structure set of triples ``(d, k, I)`` stating that
branches ``d`` and ``k`` agree on ``I``.  The real axis itself is replaced by a
finite uniform grid, so rays become index prefixes and suffixes.

Branch indices are 1-based throughout the public API.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateInterval, InvalidArgument, InvalidData

LEFT_RAY = "left_ray"
RIGHT_RAY = "right_ray"
INTERVAL_KINDS = (LEFT_RAY, RIGHT_RAY)

DEFAULT_COINCIDENCE_TOL = 1e-9

# grid times within this fraction of dt of a boundary count as on the boundary
_EDGE_SNAP = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Grid:
    """Uniform time grid ``t_j = t0 + j*dt`` for ``j = 0..n-1``."""

    t0: float
    dt: float
    n: int

    def __post_init__(self):
        if not (math.isfinite(self.t0) and math.isfinite(self.dt)):
            raise InvalidArgument("grid t0 and dt must be finite")
        if self.dt <= 0:
            raise InvalidArgument(f"grid step dt must be positive, got {self.dt}")
        if int(self.n) != self.n or self.n < 8:
            raise InvalidArgument(f"grid size n must be an integer >= 8, got {self.n}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def d_omega(self) -> float:
        """Frequency lattice step 2*pi/(n*dt)."""
        return 2.0 * math.pi / (self.n * self.dt)

    @property
    def nyquist(self) -> float:
        return math.pi / self.dt

    @property
    def duration(self) -> float:
        return self.n * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n) * self.dt

    @property
    def bins(self) -> np.ndarray:
        """Frequency bin numbers ``-n/2 .. n/2-1`` in ascending order."""
        return np.arange(-(self.n // 2), self.n - self.n // 2)

    @property
    def omegas(self) -> np.ndarray:
        return self.bins * self.d_omega

    def refined(self, factor: int = 2) -> "Grid":
        """Same step, ``factor`` times longer window, kept centred on the old one."""
        centre = self.t0 + 0.5 * self.duration
        n = self.n * factor
        return Grid(centre - 0.5 * n * self.dt, self.dt, n)

    def to_dict(self) -> dict:
        return {"t0": self.t0, "dt": self.dt, "n": self.n}


def make_grid(t0: float, dt: float, n: int) -> Grid:
    """Build a grid, rejecting non-positive steps and grids shorter than 8."""
    return Grid(float(t0), float(dt), n)


@dataclass(frozen=True)
class Signal:
    grid: Grid
    samples: np.ndarray

    def __post_init__(self):
        x = np.array(self.samples, dtype=complex)
        if x.ndim != 1 or x.shape[0] != self.grid.n:
            raise InvalidData(
                f"signal has {x.size} samples, grid expects {self.grid.n}")
        if not np.all(np.isfinite(x)):
            raise InvalidData("signal samples must be finite")
        object.__setattr__(self, "samples", _frozen(x))

    def __len__(self):
        return self.grid.n


@dataclass(frozen=True)
class IntervalSpec:
    """A ray ``(-inf, a)`` or ``(a, inf)`` plus optional closed intervals.

    Construction never raises so that malformed specs can be reported by
    :func:`validate_structure_set`; use :meth:`violations` to inspect.
    """

    kind: str
    a: float
    extras: tuple = ()

    def __post_init__(self):
        object.__setattr__(
            self, "extras", tuple((float(u), float(v)) for u, v in self.extras))

    @classmethod
    def left(cls, a, extras=()):
        return cls(LEFT_RAY, float(a), tuple(extras))

    @classmethod
    def right(cls, a, extras=()):
        return cls(RIGHT_RAY, float(a), tuple(extras))

    def violations(self) -> list[str]:
        out = []
        if self.kind not in INTERVAL_KINDS:
            out.append(f"unknown interval kind {self.kind!r}")
        if not math.isfinite(self.a):
            out.append("ray boundary must be finite")
        for u, v in self.extras:
            if not (math.isfinite(u) and math.isfinite(v)) or u > v:
                out.append(f"extra interval [{u}, {v}] is malformed")
                continue
            if self.kind == LEFT_RAY and u < self.a:
                out.append(f"extra interval [{u}, {v}] meets the ray")
            if self.kind == RIGHT_RAY and v > self.a:
                out.append(f"extra interval [{u}, {v}] meets the ray")
        ordered = sorted(self.extras)
        for (u1, v1), (u2, v2) in zip(ordered, ordered[1:]):
            if u2 <= v1:
                out.append(f"extra intervals [{u1}, {v1}] and [{u2}, {v2}] overlap")
        return out

    def is_valid(self) -> bool:
        return not self.violations()

    def contains(self, t: np.ndarray, snap: float = 0.0) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.kind == LEFT_RAY:
            mask = t < self.a - snap
        else:
            mask = t > self.a + snap
        for u, v in self.extras:
            mask |= (t >= u - snap) & (t <= v + snap)
        return mask

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a": self.a,
                "extras": [[u, v] for u, v in self.extras]}

    @classmethod
    def from_dict(cls, d: dict) -> "IntervalSpec":
        return cls(d["kind"], float(d["a"]), tuple(tuple(e) for e in d.get("extras", ())))


def interval_to_index_set(spec: IntervalSpec, grid: Grid) -> np.ndarray:
    """Sorted grid indices whose times lie in ``spec``.

    Ray boundaries are open: a sample sitting exactly on ``a`` is excluded.
    Extras are closed.
    """
    problems = spec.violations()
    if problems:
        raise InvalidArgument("; ".join(problems))
    idx = np.flatnonzero(spec.contains(grid.times, _EDGE_SNAP * grid.dt))
    if idx.size == 0:
        raise DegenerateInterval(
            f"{spec.kind} a={spec.a} selects no samples of grid "
            f"[{grid.t0}, {grid.t0 + (grid.n - 1) * grid.dt}]")
    return _frozen(idx)


@dataclass(frozen=True)
class StructureTriple:
    d: int
    k: int
    interval: IntervalSpec

    def to_dict(self) -> dict:
        return {"d": self.d, "k": self.k, "interval": self.interval.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "StructureTriple":
        return cls(int(d["d"]), int(d["k"]), IntervalSpec.from_dict(d["interval"]))


@dataclass(frozen=True)
class StructureSet:
    """Branch count plus coincidence triples; each triple also implies its mirror."""

    m: int
    triples: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "triples", tuple(self.triples))

    @classmethod
    def build(cls, m: int, triples: Sequence) -> "StructureSet":
        """Accept ``StructureTriple`` objects or plain ``(d, k, IntervalSpec)`` tuples."""
        ts = [t if isinstance(t, StructureTriple) else StructureTriple(*t) for t in triples]
        return cls(m, tuple(ts))

    def to_list(self) -> list[dict]:
        return [t.to_dict() for t in self.triples]


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"valid": self.valid, "violations": list(self.violations)}


def validate_structure_set(s: StructureSet, grid: Optional[Grid] = None) -> ValidationReport:
    """List every violation of the structure-set rules; never raises.

    With a ``grid``, intervals selecting no samples are reported as well.
    """
    report = ValidationReport()
    if int(s.m) != s.m or s.m < 1:
        report.violations.append(f"branch count m={s.m} must be a positive integer")
    for i, t in enumerate(s.triples):
        where = f"triple {i} ({t.d},{t.k})"
        if t.d == t.k:
            report.violations.append(f"{where}: d equals k")
        for idx in (t.d, t.k):
            if not (1 <= idx <= s.m):
                report.violations.append(f"{where}: index out of range ({idx} not in 1..{s.m})")
                break
        for problem in t.interval.violations():
            report.violations.append(f"{where}: invalid interval: {problem}")
        if grid is not None and t.interval.is_valid():
            if not np.any(t.interval.contains(grid.times, _EDGE_SNAP * grid.dt)):
                report.violations.append(f"{where}: interval selects no grid samples")
    return report


@dataclass(frozen=True)
class BranchingProcess:
    """``m`` signals on a shared grid together with their structure set.

    ``plan`` is set when the process was produced by the degenerate
    approximation, so that error predictions can be attached downstream.
    """

    grid: Grid
    branches: tuple
    structure: StructureSet
    coincidence_tol: float = DEFAULT_COINCIDENCE_TOL
    plan: object = None

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(self.branches))
        if len(self.branches) != self.structure.m:
            raise InvalidArgument(
                f"{len(self.branches)} branches given, structure set declares m={self.structure.m}")
        for b in self.branches:
            if b.grid != self.grid:
                raise InvalidArgument("all branches must share the process grid")
        if not self.coincidence_tol >= 0:
            raise InvalidArgument("coincidence_tol must be >= 0")

    @classmethod
    def from_arrays(cls, grid: Grid, arrays, structure: StructureSet,
                    coincidence_tol: float = DEFAULT_COINCIDENCE_TOL, plan=None):
        return cls(grid, tuple(Signal(grid, a) for a in arrays), structure,
                   coincidence_tol, plan)

    @property
    def m(self) -> int:
        return self.structure.m

    @property
    def samples(self) -> np.ndarray:
        """``(m, n)`` complex array of all branch samples."""
        return np.stack([b.samples for b in self.branches])

    @property
    def scale(self) -> float:
        return max(1.0, float(np.max(np.abs(self.samples))))

    def branch(self, d: int) -> Signal:
        return self.branches[d - 1]


@dataclass(frozen=True)
class TripleDeviation:
    d: int
    k: int
    interval: IntervalSpec
    deviation: float
    passed: bool

    def to_dict(self) -> dict:
        return {"d": self.d, "k": self.k, "interval": self.interval.to_dict(),
                "deviation": self.deviation, "passed": self.passed}


@dataclass
class CoincidenceReport:
    entries: list
    tol: float
    scale: float

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_deviation(self) -> float:
        return max((e.deviation for e in self.entries), default=0.0)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "tol": self.tol, "scale": self.scale,
                "max_deviation": self.max_deviation,
                "triples": [e.to_dict() for e in self.entries]}


def triple_deviation(p: BranchingProcess, d: int, k: int, interval: IntervalSpec) -> float:
    idx = interval_to_index_set(interval, p.grid)
    diff = p.branch(d).samples[idx] - p.branch(k).samples[idx]
    return float(np.max(np.abs(diff)))


def verify_coincidence(p: BranchingProcess, tol: Optional[float] = None) -> CoincidenceReport:
    """Max |x_d - x_k| over each triple's interval, judged against ``tol * scale``."""
    tol = p.coincidence_tol if tol is None else tol
    scale = p.scale
    entries = []
    for t in p.structure.triples:
        dev = triple_deviation(p, t.d, t.k, t.interval)
        entries.append(TripleDeviation(t.d, t.k, t.interval, dev, dev <= tol * scale))
    return CoincidenceReport(entries, tol, scale)


def audit_coincidences(p: BranchingProcess, tol: Optional[float] = None) -> list[dict]:
    """Find rays on which two branches agree but which no listed triple declares.

    Only the longest agreeing prefix (left ray) and suffix (right ray) of each
    pair are examined.  The result is advisory; listing every coincidence is
    not required of a structure set.
    """
    tol = p.coincidence_tol if tol is None else tol
    thresh = tol * p.scale
    times = p.grid.times
    x = p.samples
    listed = {}
    for t in p.structure.triples:
        key = (min(t.d, t.k), max(t.d, t.k))
        listed.setdefault(key, np.zeros(p.grid.n, dtype=bool))
        listed[key] |= t.interval.contains(times, _EDGE_SNAP * p.grid.dt)
    found = []
    for d in range(1, p.m + 1):
        for k in range(d + 1, p.m + 1):
            agree = np.abs(x[d - 1] - x[k - 1]) <= thresh
            covered = listed.get((d, k), np.zeros(p.grid.n, dtype=bool))
            bad = np.flatnonzero(~agree)
            if bad.size == 0:
                prefix, suffix = p.grid.n, p.grid.n
            else:
                prefix, suffix = bad[0], p.grid.n - 1 - bad[-1]
            if prefix and not covered[:prefix].all():
                a = times[prefix] if prefix < p.grid.n else times[-1] + p.grid.dt
                found.append({"d": d, "k": k, "kind": LEFT_RAY, "a": float(a)})
            if suffix and not covered[p.grid.n - suffix:].all():
                a = times[p.grid.n - suffix - 1] if suffix < p.grid.n else times[0] - p.grid.dt
                found.append({"d": d, "k": k, "kind": RIGHT_RAY, "a": float(a)})
    return found
