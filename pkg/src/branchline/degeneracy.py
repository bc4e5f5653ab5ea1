"""Spectral surgery producing band-degenerate branching processes.

Given branch spectra ``X_d`` and pairwise differences ``Y_d = X_d - X_1``,
the approximation keeps ``X_1`` off the union of bands, writes ``-Y_d`` into
band ``d`` of branch 1, and rebuilds every other branch as ``X_1' + Y_d``.
All pairwise differences survive unchanged, so every coincidence survives,
while branch ``d`` vanishes identically on its own band.  The error spectrum
``X_d' - X_d`` is the same for every branch and equals ``-X_q`` on band ``q``,
which gives the squared L2 error as a sum of band energies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidArgument, InvalidInput, PlanInvalid, RangeError
from .model import BranchingProcess, Grid, verify_coincidence
from .spectral import FrequencyBand, Spectrum, band_energy, forward_array, inverse_array, l2_norm

MIN_BAND_BINS = 4


@dataclass(frozen=True)
class DegeneracyPlan:
    """Band centres and half width on a grid.

    In ``real`` mode each band is paired with its mirror image so that real
    inputs give real outputs.
    """

    grid: Grid
    centers: tuple
    delta: float
    real: bool = False

    def __post_init__(self):
        object.__setattr__(self, "centers", tuple(float(c) for c in self.centers))
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise InvalidArgument(f"delta must be positive and finite, got {self.delta}")

    @property
    def m(self) -> int:
        return len(self.centers)

    @property
    def bands(self) -> list[FrequencyBand]:
        return [FrequencyBand(c, self.delta) for c in self.centers]

    @property
    def masks(self) -> np.ndarray:
        """``(m, n)`` boolean bin masks in ascending bin order."""
        return np.stack([b.mask(self.grid, self.real) for b in self.bands])

    def with_delta(self, delta: float) -> "DegeneracyPlan":
        return DegeneracyPlan(self.grid, self.centers, delta, self.real)

    def to_dict(self) -> dict:
        return {"centers": list(self.centers), "delta": self.delta, "real": self.real,
                "bins": [int(k) for k in self.masks.sum(axis=1)]}


@dataclass(frozen=True)
class CenterChoice:
    """Centres plus the largest half width keeping bands apart."""

    grid: Grid
    centers: tuple
    delta_max: float
    real: bool = False

    def default_delta(self) -> float:
        return max(MIN_BAND_BINS * self.grid.d_omega, self.delta_max / 8)

    def plan(self, delta: Optional[float] = None) -> DegeneracyPlan:
        if delta is None:
            delta = self.default_delta()
        return DegeneracyPlan(self.grid, self.centers, delta, self.real)


def choose_centers(m: int, grid: Grid, centers: Optional[Sequence[float]] = None,
                   real: bool = False) -> CenterChoice:
    """Place ``m`` distinct band centres and report the admissible ``delta_max``.

    Without explicit ``centers`` the uniform policy puts
    ``w_d = -W + d*2W/(m+1)`` with ``W`` half the Nyquist bound (in real mode
    ``w_d = d*N/(m+1)`` on the positive axis, so mirrors never collide).
    ``delta_max`` is half the smallest gap less one bin; for a single band
    it is the distance to the edge of the placement range less one bin.
    """
    if int(m) != m or m < 1:
        raise InvalidArgument(f"need at least one branch, got m={m}")
    dw, nyq = grid.d_omega, grid.nyquist
    if centers is None:
        if real:
            cs = np.array([d * nyq / (m + 1) for d in range(1, m + 1)])
            edge = nyq
        else:
            w = nyq / 2
            cs = np.array([-w + d * 2 * w / (m + 1) for d in range(1, m + 1)])
            edge = w
    else:
        cs = np.asarray(centers, dtype=float)
        if cs.shape != (m,):
            raise InvalidArgument(f"expected {m} centres, got {cs.size}")
        if len(set(cs.tolist())) != m:
            raise InvalidArgument("band centres must be distinct")
        if np.any(np.abs(cs) >= nyq) or not np.all(np.isfinite(cs)):
            raise RangeError(f"centres must lie inside (-{nyq}, {nyq})")
        edge = nyq
    if real:
        # mirrored bands -w_d count as neighbours too
        pts = np.sort(np.concatenate([cs, -cs]))
    else:
        pts = np.sort(cs)
    if m == 1 and not real:
        half_gap = edge - abs(cs[0])
    else:
        half_gap = float(np.min(np.diff(pts))) / 2
    delta_max = half_gap - dw
    if delta_max <= 0:
        raise RangeError(f"{m} bands do not fit the frequency range of this grid")
    return CenterChoice(grid, tuple(cs.tolist()), float(delta_max), real)


def check_disjoint(plan: DegeneracyPlan) -> bool:
    """True iff every band selects at least one bin and no bin is shared."""
    masks = plan.masks
    return bool(masks.any(axis=1).all() and (masks.sum(axis=0) <= 1).all())


def _require(p: BranchingProcess, plan: DegeneracyPlan):
    if plan.grid != p.grid:
        raise InvalidArgument("plan and process use different grids")
    if plan.m != p.m:
        raise InvalidArgument(f"plan has {plan.m} bands for {p.m} branches")
    if not check_disjoint(plan):
        raise PlanInvalid("bands overlap or select no grid bins")


def degenerate_spectra(X: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Apply the surgery to an ``(m, n)`` array of spectra."""
    Y = X - X[0]
    union = masks.any(axis=0)
    Xh1 = np.where(union, 0.0, X[0])
    for d in range(1, X.shape[0]):
        Xh1[masks[d]] = -Y[d][masks[d]]
    return Xh1[None, :] + Y


def degenerate_approximation(p: BranchingProcess, plan: DegeneracyPlan) -> BranchingProcess:
    """Band-degenerate process with the same structure set as ``p``.

    Raises :class:`PlanInvalid` for overlapping or empty bands and
    :class:`InvalidInput` when ``p`` violates its own coincidences.
    """
    _require(p, plan)
    if not verify_coincidence(p).passed:
        raise InvalidInput("input process violates its structure set")
    Xh = degenerate_spectra(forward_array(p.samples, p.grid), plan.masks)
    xh = inverse_array(Xh, p.grid)
    if plan.real:
        xh = xh.real
    return BranchingProcess.from_arrays(p.grid, xh, p.structure, p.coincidence_tol, plan)


@dataclass(frozen=True)
class BranchError:
    branch: int
    l2_error: float
    sup_error: float
    predicted_l2: Optional[float] = None

    def to_dict(self) -> dict:
        return {"branch": self.branch, "l2_error": self.l2_error,
                "sup_error": self.sup_error, "predicted_l2": self.predicted_l2}


def predicted_l2(p: BranchingProcess, plan: DegeneracyPlan) -> float:
    """``sqrt(sum_q E_q)`` with ``E_q`` the energy of branch ``q`` on band ``q``."""
    X = forward_array(p.samples, p.grid)
    total = 0.0
    for q, mask in enumerate(plan.masks):
        total += band_energy(Spectrum(p.grid, X[q]), mask)
    return math.sqrt(total)


def approximation_error(p: BranchingProcess, p_hat: BranchingProcess,
                        plan: Optional[DegeneracyPlan] = None) -> list[BranchError]:
    """Per-branch discrete L2 and sup errors; ``predicted_l2`` when a plan is known."""
    if p.grid != p_hat.grid or p.m != p_hat.m:
        raise InvalidArgument("processes differ in grid or branch count")
    plan = plan if plan is not None else p_hat.plan
    pred = predicted_l2(p, plan) if plan is not None else None
    diff = p.samples - p_hat.samples
    return [BranchError(d + 1, l2_norm(diff[d], p.grid), float(np.max(np.abs(diff[d]))), pred)
            for d in range(p.m)]


def error_spectra(p: BranchingProcess, p_hat: BranchingProcess) -> np.ndarray:
    """``(m, n)`` transforms of ``x_hat_d - x_d``."""
    return forward_array(p_hat.samples - p.samples, p.grid)


@dataclass
class DegeneracyReport:
    band_max: list
    tol: float
    scale: float
    coincidence: dict
    errors: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(v <= self.tol * self.scale for v in self.band_max) and self.coincidence["passed"]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "tol": self.tol, "scale": self.scale,
                "band_max": list(self.band_max), "coincidence": self.coincidence,
                "errors": [e.to_dict() for e in self.errors]}


def verify_degeneracy(p_hat: BranchingProcess, plan: DegeneracyPlan, tol: float = 1e-12,
                      original: Optional[BranchingProcess] = None) -> DegeneracyReport:
    """Check that branch ``d`` vanishes on band ``d`` and that coincidences hold.

    The spectral scale is ``max(1, max |X_d|)`` over all branches and bins.
    Passing ``original`` attaches measured and predicted approximation errors.
    """
    if plan.grid != p_hat.grid or plan.m != p_hat.m:
        raise InvalidArgument("plan does not match process")
    X = forward_array(p_hat.samples, p_hat.grid)
    masks = plan.masks
    band_max = [float(np.max(np.abs(X[d][masks[d]]), initial=0.0)) for d in range(p_hat.m)]
    scale = max(1.0, float(np.max(np.abs(X))))
    errors = approximation_error(original, p_hat, plan) if original is not None else []
    return DegeneracyReport(band_max, tol, scale, verify_coincidence(p_hat).to_dict(), errors)


def sweep_delta(p: BranchingProcess, choice: CenterChoice, deltas: Sequence[float]) -> list[dict]:
    """Approximation errors over a list of half widths (one row per delta)."""
    rows = []
    for delta in deltas:
        plan = choice.plan(delta)
        p_hat = degenerate_approximation(p, plan)
        errs = approximation_error(p, p_hat, plan)
        rows.append({
            "delta": float(delta),
            "min_bins": int(plan.masks.sum(axis=1).min()),
            "l2_error": max(e.l2_error for e in errs),
            "sup_error": max(e.sup_error for e in errs),
            "predicted_l2": errs[0].predicted_l2,
            "branches": [e.to_dict() for e in errs],
        })
    return rows


def refine_for_delta(grid: Grid, m: int, delta: float, centers: Optional[Sequence[float]] = None,
                     min_bins: int = MIN_BAND_BINS, max_n: int = 1 << 16, real: bool = False) -> Grid:
    """Double the window until every band of half width ``delta`` has ``min_bins`` bins."""
    while True:
        plan = choose_centers(m, grid, centers, real).plan(delta)
        if plan.masks.sum(axis=1).min() >= min_bins:
            return grid
        if grid.n * 2 > max_n:
            raise RangeError(f"delta={delta} stays below {min_bins} bins up to n={max_n}")
        grid = grid.refined(2)


def halving_deltas(delta_max: float, count: int) -> list[float]:
    """``delta_max/2, delta_max/4, ...`` (``count`` values)."""
    return [delta_max / 2 ** k for k in range(1, count + 1)]


@dataclass
class DensityResult:
    eps: float
    delta: float
    l2_error: float
    grid: Grid
    refinements: int
    evaluations: int

    def to_dict(self) -> dict:
        return {"eps": self.eps, "delta": self.delta, "l2_error": self.l2_error,
                "grid": self.grid.to_dict(), "refinements": self.refinements,
                "evaluations": self.evaluations}


def find_delta(make_process: Callable[[Grid], BranchingProcess], grid: Grid, eps: float,
               centers: Optional[Sequence[float]] = None, min_bins: int = MIN_BAND_BINS,
               max_n: int = 1 << 16, max_steps: int = 60, real: bool = False) -> DensityResult:
    """Largest half width (up to bisection resolution) with max L2 error <= eps.

    Bands are kept at ``min_bins`` bins or more; when even the narrowest such
    band misses ``eps`` the window is doubled (same step) and the search
    restarts.  ``make_process`` builds the fixture on a given grid.
    """
    evals = 0
    refinements = 0
    while True:
        p = make_process(grid)
        choice = choose_centers(p.m, grid, centers, real)

        def err(delta):
            nonlocal evals
            evals += 1
            plan = choice.plan(delta)
            if plan.masks.sum(axis=1).min() < min_bins:
                return math.inf
            return max(e.l2_error for e in approximation_error(p, degenerate_approximation(p, plan), plan))

        hi = choice.delta_max
        e_hi = err(hi)
        if e_hi <= eps:
            return DensityResult(eps, hi, e_hi, grid, refinements, evals)
        lo = (min_bins / 2 + 1) * grid.d_omega
        e_lo = err(lo) if lo < hi else math.inf
        if e_lo <= eps:
            for _ in range(max_steps):
                if hi - lo <= 0.25 * grid.d_omega:
                    break
                mid = 0.5 * (lo + hi)
                e_mid = err(mid)
                if e_mid <= eps:
                    lo, e_lo = mid, e_mid
                else:
                    hi = mid
            return DensityResult(eps, lo, e_lo, grid, refinements, evals)
        if grid.n * 2 > max_n:
            raise RangeError(f"no admissible delta for eps={eps} up to n={max_n}")
        grid = grid.refined(2)
        refinements += 1
