"""Recovering a branching process from a segment or from one-sided samples.

Uniqueness is decided by linear algebra on the grid: band-vanishing rows,
coincidence rows and data rows are stacked into one complex system whose
rank is computed explicitly.  A recovery is only ever claimed when that
system is determined.  Two solvers are offered: a direct (optionally
Tikhonov-regularised) least-squares solve and alternating projections
between the affine data/coincidence set and the band-vanishing subspace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import DisconnectedStructure, InvalidArgument, InvalidProblem, PreconditionError
from .model import (
    BranchingProcess,
    Grid,
    IntervalSpec,
    StructureSet,
    interval_to_index_set,
    validate_structure_set,
)
from .topology import components, is_connected, propagation_order

RANK_RTOL = 1e-10
DEFAULT_MAX_ITER = 10_000
DEFAULT_PROJECTION_TOL = 1e-13
AUTO_LAMBDA_FACTOR = 1e-10
DETERMINED = "determined"
UNDERDETERMINED = "underdetermined"


@dataclass(frozen=True)
class RecoveryProblem:
    """Everything needed to assemble the recovery system.

    ``masks`` is an ``(m, n)`` boolean array of bins on which each branch's
    spectrum must vanish (degeneracy band, plus the out-of-band region for a
    band-limited branch).  ``known_indices``/``known_values`` pin samples of
    branch ``known_branch``.
    """

    grid: Grid
    structure: StructureSet
    masks: np.ndarray
    known_branch: int
    known_indices: np.ndarray
    known_values: np.ndarray
    lam: Optional[float] = None
    max_iter: int = DEFAULT_MAX_ITER
    tol: float = DEFAULT_PROJECTION_TOL
    coincidence_tol: float = 1e-9

    def __post_init__(self):
        masks = np.array(self.masks, dtype=bool)
        if masks.shape != (self.structure.m, self.grid.n):
            raise InvalidProblem(f"masks must have shape {(self.structure.m, self.grid.n)}")
        idx = np.asarray(self.known_indices, dtype=int)
        vals = np.asarray(self.known_values, dtype=complex)
        if idx.size == 0:
            raise InvalidProblem("no known samples")
        if vals.shape != idx.shape:
            raise InvalidProblem(f"{vals.size} known values for {idx.size} known indices")
        if not (1 <= self.known_branch <= self.structure.m):
            raise InvalidProblem(f"known branch {self.known_branch} out of range")
        if np.any(idx < 0) or np.any(idx >= self.grid.n) or np.unique(idx).size != idx.size:
            raise InvalidProblem("known indices must be distinct grid indices")
        report = validate_structure_set(self.structure, self.grid)
        if not report.valid:
            raise InvalidProblem("; ".join(report.violations))
        for name, a in (("masks", masks), ("known_indices", idx), ("known_values", vals)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def m(self) -> int:
        return self.structure.m

    @property
    def unknowns(self) -> int:
        return self.m * self.grid.n


@dataclass
class AssembledSystem:
    """Dense complex system ``A u = b`` over branch-major sample unknowns.

    ``blocks`` maps block names (``band``, ``coincidence``, ``data``) to row
    slices.
    """

    A: np.ndarray
    b: np.ndarray
    blocks: dict
    problem: RecoveryProblem

    @property
    def n_unknowns(self) -> int:
        return self.A.shape[1]

    @property
    def row_counts(self) -> dict:
        return {k: s.stop - s.start for k, s in self.blocks.items()}


def assemble_system(prob: RecoveryProblem) -> AssembledSystem:
    """Stack band rows (branch, then bin), coincidence rows (triple order), data rows."""
    g, m, n = prob.grid, prob.m, prob.grid.n
    rows, rhs = [], []
    times, omegas = g.times, g.omegas
    blocks = {}
    start = 0
    for d in range(m):
        w = omegas[prob.masks[d]]
        if w.size:
            block = np.zeros((w.size, m * n), dtype=complex)
            block[:, d * n:(d + 1) * n] = g.dt * np.exp(-1j * np.outer(w, times))
            rows.append(block)
            rhs.append(np.zeros(w.size, dtype=complex))
    stop = start + sum(r.shape[0] for r in rows)
    blocks["band"] = slice(start, stop)
    start = stop
    for t in prob.structure.triples:
        idx = interval_to_index_set(t.interval, g)
        block = np.zeros((idx.size, m * n), dtype=complex)
        r = np.arange(idx.size)
        block[r, (t.d - 1) * n + idx] = 1.0
        block[r, (t.k - 1) * n + idx] = -1.0
        rows.append(block)
        rhs.append(np.zeros(idx.size, dtype=complex))
        start += idx.size
    blocks["coincidence"] = slice(stop, start)
    block = np.zeros((prob.known_indices.size, m * n), dtype=complex)
    block[np.arange(prob.known_indices.size), (prob.known_branch - 1) * n + prob.known_indices] = 1.0
    rows.append(block)
    rhs.append(prob.known_values.astype(complex))
    blocks["data"] = slice(start, start + prob.known_indices.size)
    return AssembledSystem(np.vstack(rows), np.concatenate(rhs), blocks, prob)


@dataclass(frozen=True)
class RankReport:
    rank: int
    unknowns: int
    verdict: str
    conditioning: float

    def to_dict(self) -> dict:
        return {"rank": self.rank, "unknowns": self.unknowns, "verdict": self.verdict,
                "conditioning": self.conditioning}


def _start_vector(size: int) -> np.ndarray:
    rng = np.random.default_rng(0)
    return rng.standard_normal(size) + 1j * rng.standard_normal(size)


def _largest_eig(A: np.ndarray, iters: int = 200) -> float:
    v = _start_vector(A.shape[1])
    lam = 0.0
    for _ in range(iters):
        w = A.conj().T @ (A @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        lam_new = nrm / np.linalg.norm(v)
        v = w / nrm
        if abs(lam_new - lam) <= 1e-10 * lam_new:
            return float(lam_new)
        lam = lam_new
    return float(lam)


def _smallest_eig(R: np.ndarray, perm: np.ndarray, iters: int = 60) -> float:
    """Inverse iteration on ``A^H A = P R^H R P^T`` using the QR factor."""
    n = R.shape[1]
    Rs = R[:n, :n]
    v = _start_vector(n)
    v /= np.linalg.norm(v)
    mu = 0.0
    for _ in range(iters):
        y = sla.solve_triangular(Rs, sla.solve_triangular(Rs, v[perm], trans="C"), lower=False)
        w = np.empty_like(y)
        w[perm] = y
        nrm = np.linalg.norm(w)
        mu_new = nrm
        v = w / nrm
        if abs(mu_new - mu) <= 1e-10 * mu_new:
            break
        mu = mu_new
    return float(1.0 / mu_new)


def rank_check(sys: AssembledSystem) -> RankReport:
    """Numerical rank by column-pivoted QR with threshold ``1e-10 * |R_00|``.

    The conditioning estimate is ``sqrt(lmax/lmin)`` of ``A^H A``, with
    ``lmax`` from power iteration and ``lmin`` from inverse iteration;
    it is infinite when the system is underdetermined.
    """
    A = sys.A
    n_unk = A.shape[1]
    if A.shape[0] == 0:
        return RankReport(0, n_unk, UNDERDETERMINED, math.inf)
    R, perm = sla.qr(A, mode="r", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0:
        return RankReport(0, n_unk, UNDERDETERMINED, math.inf)
    rank = int(np.sum(diag > RANK_RTOL * diag[0]))
    if rank < n_unk:
        return RankReport(rank, n_unk, UNDERDETERMINED, math.inf)
    lmax = _largest_eig(A)
    lmin = _smallest_eig(R, perm)
    return RankReport(rank, n_unk, DETERMINED, math.sqrt(lmax / lmin))


@dataclass
class RecoveryReport:
    solution: BranchingProcess
    residual: float
    verdict: str
    rank: int
    unknowns: int
    conditioning: float
    solver: str
    lam: float = 0.0
    rel_errors: Optional[list] = None
    iterations: Optional[int] = None
    converged: bool = True
    branch_order: list = field(default_factory=list)
    unrecoverable: list = field(default_factory=list)
    branch_determined: list = field(default_factory=list)

    @property
    def recovered(self) -> bool:
        """A recovery is claimed only for determined, converged solves."""
        return self.verdict == DETERMINED and self.converged

    @property
    def max_rel_error(self) -> Optional[float]:
        return None if self.rel_errors is None else max(self.rel_errors)

    def errors_in_order(self) -> list[tuple[int, Optional[float]]]:
        """``(branch, rel_error)`` pairs, nearest to the observed branch first."""
        order = self.branch_order + self.unrecoverable
        errs = self.rel_errors or [None] * len(order)
        return [(d, errs[d - 1]) for d in order]

    def to_dict(self) -> dict:
        return {
            "solver": self.solver, "verdict": self.verdict, "recovered": self.recovered,
            "rank": self.rank, "unknowns": self.unknowns, "conditioning": self.conditioning,
            "lambda": self.lam, "residual": self.residual, "iterations": self.iterations,
            "converged": self.converged, "rel_errors": self.rel_errors,
            "branch_order": self.branch_order, "unrecoverable": self.unrecoverable,
            "errors_in_order": [[d, e] for d, e in self.errors_in_order()],
            "branch_determined": self.branch_determined,
        }


def _rel_errors(u: np.ndarray, truth: Optional[BranchingProcess]) -> Optional[list]:
    if truth is None:
        return None
    out = []
    for d, x in enumerate(truth.samples):
        ref = np.linalg.norm(x)
        err = np.linalg.norm(u[d] - x)
        out.append(float(err / ref) if ref > 0 else float(err))
    return out


def _branch_determined(sys: AssembledSystem, rank: RankReport) -> list[bool]:
    m, n = sys.problem.m, sys.problem.grid.n
    if rank.verdict == DETERMINED:
        return [True] * m
    null = sla.null_space(sys.A, rcond=RANK_RTOL) if sys.A.shape[0] else np.eye(m * n)
    return [bool(np.linalg.norm(null[d * n:(d + 1) * n]) < 1e-8) for d in range(m)]


def _report(sys, u, rank, solver, lam, truth, iterations=None, converged=True):
    prob = sys.problem
    sol = BranchingProcess.from_arrays(prob.grid, u, prob.structure, prob.coincidence_tol)
    residual = float(np.linalg.norm(sys.A @ u.reshape(-1) - sys.b))
    return RecoveryReport(
        solution=sol, residual=residual, verdict=rank.verdict, rank=rank.rank,
        unknowns=rank.unknowns, conditioning=rank.conditioning, solver=solver, lam=lam,
        rel_errors=_rel_errors(u, truth), iterations=iterations, converged=converged,
        branch_determined=_branch_determined(sys, rank))


def default_lambda(sys: AssembledSystem) -> float:
    return AUTO_LAMBDA_FACTOR * float(np.max(np.sum(np.abs(sys.A) ** 2, axis=1)))


def solve_direct(sys: AssembledSystem, lam: Optional[float] = None,
                 truth: Optional[BranchingProcess] = None,
                 rank: Optional[RankReport] = None) -> RecoveryReport:
    """Minimise ``|A u - b|^2 + lam |u|^2``.

    ``lam=None`` uses 0 on determined systems and ``1e-10 * max row norm^2``
    otherwise.  Underdetermined systems are solved anyway (minimum-norm or
    regularised) but the report never claims recovery.
    """
    rank = rank or rank_check(sys)
    if lam is None:
        lam = 0.0 if rank.verdict == DETERMINED else default_lambda(sys)
    if lam < 0:
        raise InvalidArgument("lambda must be >= 0")
    A, b = sys.A, sys.b
    if lam > 0:
        A = np.vstack([A, math.sqrt(lam) * np.eye(A.shape[1])])
        b = np.concatenate([b, np.zeros(A.shape[1], dtype=complex)])
    u = sla.lstsq(A, b, cond=None, lapack_driver="gelsd")[0]
    m, n = sys.problem.m, sys.problem.grid.n
    return _report(sys, u.reshape(m, n), rank, "direct", float(lam), truth)


def _affine_projector(prob: RecoveryProblem):
    """Sparse ``S`` and offset ``c`` with ``S x + c`` the orthogonal projection
    onto {known samples pinned, tied samples equal}.

    At each grid index the branches linked by active ties form groups; a
    group holding a known sample is set to it, any other group is averaged.
    """
    g, m, n = prob.grid, prob.m, prob.grid.n
    active = np.zeros((len(prob.structure.triples), n), dtype=bool)
    for i, t in enumerate(prob.structure.triples):
        active[i, interval_to_index_set(t.interval, g)] = True
    known = np.full(n, np.nan + 0j)
    known[prob.known_indices] = prob.known_values
    kb = prob.known_branch - 1
    rows, cols, vals = [], [], []
    c = np.zeros(m * n, dtype=complex)
    for p in range(n):
        parent = list(range(m))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for i, t in enumerate(prob.structure.triples):
            if active[i, p]:
                parent[find(t.d - 1)] = find(t.k - 1)
        groups: dict[int, list[int]] = {}
        for d in range(m):
            groups.setdefault(find(d), []).append(d)
        for members in groups.values():
            if kb in members and not np.isnan(known[p].real):
                for d in members:
                    c[d * n + p] = known[p]
            else:
                w = 1.0 / len(members)
                for d in members:
                    for e in members:
                        rows.append(d * n + p)
                        cols.append(e * n + p)
                        vals.append(w)
    S = sp.csr_matrix((vals, (rows, cols)), shape=(m * n, m * n))
    return S, c


def solve_projection(sys: AssembledSystem, max_iter: Optional[int] = None,
                     tol: Optional[float] = None, x0: Optional[np.ndarray] = None,
                     truth: Optional[BranchingProcess] = None,
                     rank: Optional[RankReport] = None) -> RecoveryReport:
    """Alternate between the affine data/coincidence set and band vanishing.

    Stops once successive iterates differ by at most ``tol * scale`` (scale is
    ``max(1, max |known value|)``) or after ``max_iter`` sweeps; the returned
    iterate is the last band projection.
    """
    prob = sys.problem
    max_iter = prob.max_iter if max_iter is None else max_iter
    tol = prob.tol if tol is None else tol
    m, n = prob.m, prob.grid.n
    S, c = _affine_projector(prob)
    fft_masks = np.fft.ifftshift(prob.masks, axes=1)
    scale = max(1.0, float(np.max(np.abs(prob.known_values))))
    x = np.zeros(m * n, dtype=complex) if x0 is None else np.asarray(x0, dtype=complex).reshape(-1).copy()
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        xa = S @ x + c
        X = np.fft.fft(xa.reshape(m, n), axis=1)
        X[fft_masks] = 0.0
        x_new = np.fft.ifft(X, axis=1).reshape(-1)
        step = float(np.max(np.abs(x_new - x)))
        x = x_new
        if step <= tol * scale:
            converged = True
            break
    rank = rank or rank_check(sys)
    return _report(sys, x.reshape(m, n), rank, "projection", 0.0, truth, it, converged)


def _solve(sys, solver, lam, max_iter, tol, truth):
    rank = rank_check(sys)
    if solver == "direct":
        return solve_direct(sys, lam, truth, rank)
    if solver == "projection":
        return solve_projection(sys, max_iter, tol, truth=truth, rank=rank)
    raise InvalidArgument(f"unknown solver {solver!r}")


def _masks_of(plan_or_masks, m: int, n: int) -> np.ndarray:
    masks = getattr(plan_or_masks, "masks", plan_or_masks)
    masks = np.array(masks, dtype=bool)
    if masks.shape != (m, n):
        raise InvalidArgument(f"band masks must have shape {(m, n)}")
    return masks


def extrapolate_from_segment(template: BranchingProcess, bands, k: int, interval: IntervalSpec,
                             data: Optional[Sequence[complex]] = None, solver: str = "direct",
                             lam: Optional[float] = None, max_iter: int = DEFAULT_MAX_ITER,
                             tol: float = DEFAULT_PROJECTION_TOL, full_recovery: bool = True,
                             truth: Optional[BranchingProcess] = None) -> RecoveryReport:
    """Recover every branch from branch ``k`` observed on ``interval``.

    ``template`` supplies the grid and structure set; unless ``data`` is
    given, the observed samples are read from it and it doubles as ground
    truth.  ``bands`` is a degeneracy plan or an ``(m, n)`` mask array.
    With ``full_recovery`` a disconnected structure set is refused; otherwise
    branches outside ``k``'s component are listed as unrecoverable.
    """
    s = template.structure
    if full_recovery and not is_connected(s):
        raise DisconnectedStructure(
            "full recovery needs every pair of branches related through the structure set; "
            f"components are {components(s)}")
    idx = interval_to_index_set(interval, template.grid)
    if data is None:
        data = template.branch(k).samples[idx]
        truth = template if truth is None else truth
    prob = RecoveryProblem(template.grid, s, _masks_of(bands, s.m, template.grid.n), k, idx,
                           np.asarray(data, dtype=complex), lam, max_iter, tol,
                           template.coincidence_tol)
    report = _solve(assemble_system(prob), solver, lam, max_iter, tol, truth)
    order = propagation_order(s, k)
    report.branch_order = order.covered
    report.unrecoverable = [d for d in range(1, s.m + 1) if d not in order.covered]
    return report


def sampling_indices(grid: Grid, stride, s_index: int) -> np.ndarray:
    """Grid indices of the lattice ``t = k*stride*dt`` with ``k <= s_index``."""
    if float(stride) != int(stride) or int(stride) < 1:
        raise InvalidArgument(f"sampling step must be a positive whole number of grid steps, got {stride}")
    stride = int(stride)
    offset = grid.t0 / grid.dt
    if abs(offset - round(offset)) > 1e-9:
        raise InvalidArgument("grid origin is not on the sampling lattice (t0/dt is not an integer)")
    j = np.arange(grid.n)
    lattice_k = (round(offset) + j)
    on = lattice_k % stride == 0
    return np.flatnonzero(on & (lattice_k // stride <= s_index))


def band_limit_mask(grid: Grid, omega: float) -> np.ndarray:
    """Bins with ``|w| >= omega``: where a band-limited branch must vanish."""
    return np.abs(grid.omegas) >= omega


def sample_reconstruct(template: BranchingProcess, bands, stride, s_index: int, omega: float,
                       samples: Optional[Sequence[complex]] = None, branch: int = 1,
                       solver: str = "direct", lam: Optional[float] = None,
                       max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_PROJECTION_TOL,
                       truth: Optional[BranchingProcess] = None) -> RecoveryReport:
    """Recover the process from samples of one band-limited branch on ``t <= s*tau``.

    The sampling step ``tau = stride*dt`` must oversample the band:
    ``tau < pi/omega``.  The sampled branch gets extra rows forcing its
    spectrum to vanish for ``|w| >= omega``.
    """
    g = template.grid
    if not omega > 0:
        raise InvalidArgument("band limit omega must be positive")
    if float(stride) != int(stride):
        raise InvalidArgument(f"tau/dt must be an integer, got {stride}")
    tau = int(stride) * g.dt
    if tau >= math.pi / omega:
        raise PreconditionError(
            f"sampling step tau={tau} does not oversample: need tau < pi/omega = {math.pi / omega}")
    idx = sampling_indices(g, stride, s_index)
    if idx.size == 0:
        raise InvalidProblem("no sampling instants fall on the grid")
    if samples is None:
        samples = template.branch(branch).samples[idx]
        truth = template if truth is None else truth
    samples = np.asarray(samples, dtype=complex)
    if samples.shape != idx.shape:
        raise InvalidArgument(f"expected {idx.size} samples, got {samples.size}")
    masks = _masks_of(bands, template.m, g.n).copy()
    masks[branch - 1] |= band_limit_mask(g, omega)
    prob = RecoveryProblem(g, template.structure, masks, branch, idx, samples, lam, max_iter, tol,
                           template.coincidence_tol)
    report = _solve(assemble_system(prob), solver, lam, max_iter, tol, truth)
    order = propagation_order(template.structure, branch)
    report.branch_order = order.covered
    report.unrecoverable = [d for d in range(1, template.m + 1) if d not in order.covered]
    return report
