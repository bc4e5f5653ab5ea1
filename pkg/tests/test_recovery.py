import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from builders import segment_instance, tree_case
from branchline.degeneracy import DegeneracyPlan, degenerate_approximation
from branchline.errors import DisconnectedStructure, InvalidArgument, InvalidProblem, PreconditionError
from branchline.model import BranchingProcess, IntervalSpec, StructureSet, interval_to_index_set, make_grid
from branchline.recovery import (
    DETERMINED,
    UNDERDETERMINED,
    AssembledSystem,
    RecoveryProblem,
    assemble_system,
    band_limit_mask,
    extrapolate_from_segment,
    rank_check,
    sample_reconstruct,
    sampling_indices,
    solve_direct,
    solve_projection,
)
from branchline.spectral import forward_array, inverse_array


def elimination_rank(g, mask, known, dps=30, rel=1e-20):
    """Rank by Gaussian elimination with complete pivoting at ``dps`` digits.

    Rows are rebuilt from the definitions in mpmath rather than copied from
    the double-precision system.
    """
    with mpmath.workdps(dps):
        dt = mpmath.mpf(g.dt)
        t = [mpmath.mpf(g.t0) + j * dt for j in range(g.n)]
        dw = 2 * mpmath.pi / (g.n * dt)
        rows = []
        for b in g.bins[mask]:
            rows.append([dt * mpmath.exp(-1j * int(b) * dw * tp) for tp in t])
        for p in known:
            rows.append([mpmath.mpf(1) if q == p else mpmath.mpf(0) for q in range(g.n)])
        M = [r[:] for r in rows]
        big = max(abs(v) for r in M for v in r)
        rank = 0
        cols = list(range(g.n))
        for _ in range(min(len(M), g.n)):
            best, bi, bj = mpmath.mpf(0), -1, -1
            for i in range(rank, len(M)):
                for j in cols:
                    if abs(M[i][j]) > best:
                        best, bi, bj = abs(M[i][j]), i, j
            if best <= rel * big:
                break
            M[rank], M[bi] = M[bi], M[rank]
            piv = M[rank][bj]
            for i in range(rank + 1, len(M)):
                f = M[i][bj] / piv
                if f != 0:
                    M[i] = [a - f * c for a, c in zip(M[i], M[rank])]
            cols.remove(bj)
            rank += 1
        return rank


def single_branch_system(g, mask, known, values=None):
    values = np.zeros(len(known)) if values is None else values
    prob = RecoveryProblem(g, StructureSet(1, ()), mask[None], 1, known, values)
    return assemble_system(prob)


def test_full_data_single_branch():
    g = make_grid(0, 0.1, 32)
    x = np.random.default_rng(0).standard_normal(32) + 0j
    sys = single_branch_system(g, np.zeros(32, dtype=bool), np.arange(32), x)
    assert sys.row_counts == {"band": 0, "coincidence": 0, "data": 32}
    rep = solve_direct(sys)
    assert rep.verdict == DETERMINED
    assert np.max(np.abs(rep.solution.samples[0] - x)) <= 1e-12


def test_row_counts_two_branches():
    g = make_grid(-3.2, 0.1, 64)
    masks = np.zeros((2, 64), dtype=bool)
    masks[0, 5:12] = True
    masks[1, 40:47] = True
    s = StructureSet.build(2, [(1, 2, IntervalSpec.left(0.0))])
    known = np.arange(10)
    sys = assemble_system(RecoveryProblem(g, s, masks, 1, known, np.zeros(10)))
    b = 7
    assert sys.A.shape == (2 * b + 64 // 2 + 10, 128)
    assert sys.row_counts == {"band": 2 * b, "coincidence": 32, "data": 10}


def test_row_order_and_layout():
    g = make_grid(-3.2, 0.1, 64)
    masks = np.zeros((2, 64), dtype=bool)
    masks[0, 3] = masks[1, 60] = True
    s = StructureSet.build(2, [(2, 1, IntervalSpec.left(0.0))])
    sys = assemble_system(RecoveryProblem(g, s, masks, 2, [5], [1.0]))
    A = sys.A
    assert np.all(A[0, 64:] == 0) and np.all(A[1, :64] == 0)
    assert A[2, 64] == 1 and A[2, 0] == -1
    assert A[-1, 64 + 5] == 1 and sys.b[-1] == 1


def test_empty_known_set_rejected():
    g = make_grid(0, 0.1, 16)
    with pytest.raises(InvalidProblem):
        RecoveryProblem(g, StructureSet(1, ()), np.zeros((1, 16), bool), 1, [], [])
    with pytest.raises(InvalidProblem):
        RecoveryProblem(g, StructureSet(1, ()), np.zeros((1, 16), bool), 1, [1, 2], [0.0])


def test_ground_truth_has_tiny_residual():
    rng = np.random.default_rng(4)
    ph, plan, I = segment_instance(rng, 3, 64, [2, 2, 2])
    idx = interval_to_index_set(I, ph.grid)
    prob = RecoveryProblem(ph.grid, ph.structure, plan.masks, 1, idx, ph.samples[0][idx])
    sys = assemble_system(prob)
    assert np.linalg.norm(sys.A @ ph.samples.reshape(-1) - sys.b) <= 1e-9 * ph.scale


def test_rank_full_data_and_empty_system():
    g = make_grid(0, 0.1, 16)
    assert rank_check(single_branch_system(g, np.zeros(16, bool), np.arange(16))).verdict == DETERMINED
    prob = RecoveryProblem(g, StructureSet(1, ()), np.zeros((1, 16), bool), 1, [0], [0.0])
    empty = AssembledSystem(np.zeros((0, 16), complex), np.zeros(0, complex), {}, prob)
    r = rank_check(empty)
    assert r.rank == 0 and r.verdict == UNDERDETERMINED


@pytest.mark.parametrize("lo,count", [(-20, 40), (-10, 20)])
def test_rank_matches_high_precision_elimination(lo, count):
    g = make_grid(-3.2, 0.1, 64)
    mask = (g.bins >= lo) & (g.bins < lo + count)
    known = np.arange(32)
    r = rank_check(single_branch_system(g, mask, known))
    oracle = elimination_rank(g, mask, known)
    assert r.rank == oracle
    assert (r.verdict == DETERMINED) == (oracle == 64)


def test_direct_recovers_determined_instance():
    rng = np.random.default_rng(12)
    ph, plan, I = segment_instance(rng, 2, 64, [3, 3])
    rep = extrapolate_from_segment(ph, plan, 1, I)
    assert rep.verdict == DETERMINED and rep.recovered
    assert rep.max_rel_error <= 1e-6
    assert rep.lam == 0.0


def test_full_data_on_every_branch_reproduces_exactly():
    rng = np.random.default_rng(13)
    ph, plan, _ = segment_instance(rng, 2, 64, [3, 3])
    g, n = ph.grid, ph.grid.n
    prob = RecoveryProblem(g, ph.structure, plan.masks, 1, np.arange(n), ph.samples[0])
    base = assemble_system(prob)
    extra = np.zeros((n, 2 * n), complex)
    extra[np.arange(n), n + np.arange(n)] = 1
    sys = AssembledSystem(np.vstack([base.A, extra]), np.concatenate([base.b, ph.samples[1]]),
                          dict(base.blocks, data2=slice(base.A.shape[0], base.A.shape[0] + n)), prob)
    rep = solve_direct(sys, truth=ph)
    assert rep.verdict == DETERMINED
    assert np.max(np.abs(rep.solution.samples - ph.samples)) <= 1e-12 * ph.scale


def test_underdetermined_instance_claims_nothing():
    rng = np.random.default_rng(14)
    ph, plan, I = segment_instance(rng, 2, 64, [8, 8], frac=0.1)
    rep = extrapolate_from_segment(ph, plan, 1, I)
    assert rep.verdict == UNDERDETERMINED
    assert not rep.recovered
    assert rep.rank < rep.unknowns
    assert math.isinf(rep.conditioning)
    assert rep.lam > 0
    assert not all(rep.branch_determined)


def test_projection_fixed_point_from_truth():
    rng = np.random.default_rng(15)
    ph, plan, I = segment_instance(rng, 2, 64, [3, 3])
    idx = interval_to_index_set(I, ph.grid)
    prob = RecoveryProblem(ph.grid, ph.structure, plan.masks, 1, idx, ph.samples[0][idx])
    rep = solve_projection(assemble_system(prob), x0=ph.samples, tol=1e-12)
    assert rep.converged and rep.iterations == 1
    assert np.max(np.abs(rep.solution.samples - ph.samples)) <= 1e-12 * ph.scale


def test_projection_agrees_with_direct():
    rng = np.random.default_rng(16)
    ph, plan, I = segment_instance(rng, 2, 64, [2, 2])
    direct = extrapolate_from_segment(ph, plan, 1, I)
    proj = extrapolate_from_segment(ph, plan, 1, I, solver="projection")
    assert proj.converged and proj.iterations <= 10_000
    u, v = direct.solution.samples, proj.solution.samples
    assert np.linalg.norm(u - v) <= 1e-3 * np.linalg.norm(u)


def test_projection_inconsistent_data_reports_residual():
    rng = np.random.default_rng(17)
    ph, plan, I = segment_instance(rng, 1, 64, [3])
    idx = interval_to_index_set(I, ph.grid)
    data = ph.samples[0][idx] + 0.01 * rng.standard_normal(idx.size)
    rep = extrapolate_from_segment(ph, plan, 1, I, data=data, solver="projection", max_iter=500)
    assert rep.residual > 1e-4
    assert rep.iterations <= 500


def test_disconnected_structure():
    g = make_grid(-3.2, 0.1, 64)
    t = g.times
    x = np.exp(-t ** 2)
    y = np.exp(-(t - 1) ** 2)
    s = StructureSet.build(4, [(1, 2, IntervalSpec.left(0.0)), (3, 4, IntervalSpec.left(0.0))])
    p = BranchingProcess.from_arrays(g, [x, x + (t >= 0), y, y - (t >= 0)], s)
    plan = DegeneracyPlan(g, [-25, -15, 15, 25], 4.0)
    ph = degenerate_approximation(p, plan)
    I = IntervalSpec.left(0.0)
    with pytest.raises(DisconnectedStructure):
        extrapolate_from_segment(ph, plan, 1, I)
    rep = extrapolate_from_segment(ph, plan, 1, I, full_recovery=False)
    assert rep.branch_order == [1, 2]
    assert rep.unrecoverable == [3, 4]
    assert not rep.recovered
    assert rep.branch_determined[2:] == [False, False]
    assert [d for d, _ in rep.errors_in_order()] == [1, 2, 3, 4]


def test_whole_line_observation_is_identity():
    g = make_grid(-3.2, 0.1, 64)
    x = np.exp(-g.times ** 2) * np.exp(1j * g.times)
    p = BranchingProcess.from_arrays(g, [x], StructureSet(1, ()))
    plan = DegeneracyPlan(g, [20.0], 3.0)
    ph = degenerate_approximation(p, plan)
    rep = extrapolate_from_segment(ph, plan, 1, IntervalSpec.right(g.t0 - 1))
    assert rep.recovered
    assert np.max(np.abs(rep.solution.samples - ph.samples)) <= 1e-12


def test_errors_ordered_by_propagation():
    rng = np.random.default_rng(18)
    ph, plan, _ = segment_instance(rng, 3, 64, [2, 2, 2])
    I = IntervalSpec.left(ph.grid.times[-1] - 0.25)
    rep = extrapolate_from_segment(ph, plan, 3, I)
    assert rep.branch_order == [3, 2, 1]
    assert [d for d, _ in rep.errors_in_order()] == [3, 2, 1]


def test_overlapping_bands_force_equal_branches():
    # both branches vanish on the same band and agree on a ray: they must be equal
    g = make_grid(-6.0, 0.1, 64)
    t = g.times
    band = (np.abs(g.omegas) > 10) & (np.abs(g.omegas) < 25)
    X = forward_array(np.exp(-t ** 2 / 2) * np.exp(1j * t), g)
    X[band] = 0
    x = inverse_array(X, g)
    s = StructureSet.build(2, [(1, 2, IntervalSpec.left(t[-4] - 0.05))])
    masks = np.stack([band, band])
    prob = RecoveryProblem(g, s, masks, 1, np.arange(64), x)
    rep = solve_direct(assemble_system(prob))
    assert rep.verdict == DETERMINED
    u = rep.solution.samples
    assert np.max(np.abs(u[1] - u[0])) <= 1e-10 * np.max(np.abs(u[0]))


def test_direct_solver_is_deterministic():
    rng = np.random.default_rng(19)
    ph, plan, I = segment_instance(rng, 2, 64, [3, 3])
    a = extrapolate_from_segment(ph, plan, 1, I)
    b = extrapolate_from_segment(ph, plan, 1, I)
    assert a.to_dict() == b.to_dict()
    assert np.array_equal(a.solution.samples, b.solution.samples)


def test_negative_lambda_rejected():
    g = make_grid(0, 0.1, 16)
    with pytest.raises(InvalidArgument):
        solve_direct(single_branch_system(g, np.zeros(16, bool), np.arange(16)), lam=-1.0)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), extra=st.integers(1, 20))
def test_rank_nondecreasing_under_added_rows(seed, extra):
    rng = np.random.default_rng(seed)
    g = make_grid(-3.2, 0.1, 32)
    mask = rng.random(32) < 0.3
    known = np.sort(rng.choice(32, size=int(rng.integers(1, 20)), replace=False))
    sys = single_branch_system(g, mask, known)
    more = np.union1d(known, rng.choice(32, size=extra))
    bigger = single_branch_system(g, mask, more)
    r0, r1 = rank_check(sys), rank_check(bigger)
    assert r1.rank >= r0.rank
    if r0.verdict == DETERMINED:
        assert r1.verdict == DETERMINED


def test_sampling_indices_lattice():
    g = make_grid(-1.0, 0.1, 16)
    idx = sampling_indices(g, 2, 0)
    assert np.allclose(g.times[idx], [-1.0, -0.8, -0.6, -0.4, -0.2, 0.0])
    with pytest.raises(InvalidArgument):
        sampling_indices(g, 1.5, 0)
    with pytest.raises(InvalidArgument):
        sampling_indices(make_grid(-1.05, 0.1, 16), 2, 0)


def test_sampling_tree_recovers_all_leaves():
    ph, plan, stride, omega = tree_case(0.8)
    assert stride == pytest.approx(2.0)
    rep = sample_reconstruct(ph, plan, round(stride), -1, omega)
    assert rep.verdict == DETERMINED and rep.recovered
    assert max(rep.rel_errors) <= 1e-5


def test_sampling_rejects_undersampling():
    ph, plan, _, omega = tree_case()
    stride = 1.2 * math.pi / omega / ph.grid.dt
    with pytest.raises(PreconditionError):
        sample_reconstruct(ph, plan, round(stride), -1, omega)
    with pytest.raises(InvalidArgument):
        sample_reconstruct(ph, plan, 1.5, -1, omega)


def test_sampling_below_free_dimension_is_underdetermined():
    ph, plan, _, omega = tree_case()
    g = ph.grid
    masks = plan.masks.copy()
    masks[0] |= band_limit_mask(g, omega)
    sys = assemble_system(RecoveryProblem(g, ph.structure, masks, 1, [0], [0.0]))
    rows = slice(0, sys.blocks["data"].start)
    no_data = AssembledSystem(sys.A[rows], sys.b[rows], {}, sys.problem)
    free = sys.n_unknowns - rank_check(no_data).rank
    s_index = max(s for s in range(-80, 0) if sampling_indices(g, 2, s).size < free)
    rep = sample_reconstruct(ph, plan, 2, s_index, omega)
    assert sampling_indices(g, 2, s_index).size < free
    assert rep.verdict == UNDERDETERMINED and not rep.recovered
