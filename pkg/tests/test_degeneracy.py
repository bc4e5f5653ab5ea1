import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from builders import random_fixture
from branchline.degeneracy import (
    DegeneracyPlan,
    approximation_error,
    check_disjoint,
    choose_centers,
    degenerate_approximation,
    error_spectra,
    find_delta,
    halving_deltas,
    refine_for_delta,
    sweep_delta,
    verify_degeneracy,
)
from branchline.errors import InvalidArgument, InvalidInput, PlanInvalid, RangeError
from branchline.fixtures import gaussian_pair
from branchline.model import BranchingProcess, IntervalSpec, StructureSet, make_grid, verify_coincidence
from branchline.spectral import forward_array, mirror_mask

G256 = make_grid(-12.8, 0.1, 256)


def per_bin_energy(X, mask, g):
    return float(np.sum(np.abs(X[mask]) ** 2)) * g.d_omega / (2 * math.pi)


def test_single_uniform_centre():
    c = choose_centers(1, G256)
    W = G256.nyquist / 2
    assert c.centers == (pytest.approx(0.0, abs=1e-12),)
    assert W == pytest.approx(15.708, abs=1e-3)
    assert c.delta_max == pytest.approx(W - G256.d_omega)


def test_three_uniform_centres_equally_spaced():
    c = choose_centers(3, G256)
    gaps = np.diff(c.centers)
    assert gaps == pytest.approx([gaps[0]] * 2)
    assert c.delta_max == pytest.approx(gaps[0] / 2 - G256.d_omega)
    assert check_disjoint(c.plan(c.delta_max))


def test_explicit_centre_errors():
    with pytest.raises(InvalidArgument):
        choose_centers(2, G256, [1.0, 1.0])
    with pytest.raises(RangeError):
        choose_centers(2, G256, [1.0, 40.0])
    with pytest.raises(RangeError):
        choose_centers(200, make_grid(0, 1, 8))
    with pytest.raises(InvalidArgument):
        choose_centers(2, G256, [1.0])


def test_default_delta_rule():
    c = choose_centers(2, G256)
    assert c.default_delta() == max(4 * G256.d_omega, c.delta_max / 8)


def test_check_disjoint_examples():
    assert check_disjoint(DegeneracyPlan(G256, [-5, 5], 1.0))
    assert not check_disjoint(DegeneracyPlan(G256, [-1, 1], 1.5))
    # no bin strictly inside (0.05, 0.15)
    assert not check_disjoint(DegeneracyPlan(G256, [0.1, 5.0], 0.05))


def test_single_branch_error_is_band_energy():
    t = G256.times
    x = np.exp(-t ** 2 / 2) * np.exp(2j * t)
    p = BranchingProcess.from_arrays(G256, [x], StructureSet(1, ()))
    plan = DegeneracyPlan(G256, [1.5], 1.0)
    ph = degenerate_approximation(p, plan)
    X = forward_array(x, G256)
    energy = per_bin_energy(X, plan.masks[0], G256)
    (err,) = approximation_error(p, ph)
    assert err.l2_error ** 2 == pytest.approx(energy, rel=1e-10)
    Xh = forward_array(ph.samples[0], G256)
    assert np.max(np.abs(Xh[plan.masks[0]])) <= 1e-12 * np.max(np.abs(X))
    assert np.allclose(Xh[~plan.masks[0]], X[~plan.masks[0]], rtol=0, atol=1e-12)


def test_identical_branches_collapse():
    x = np.exp(-G256.times ** 2 / 2) + 0j
    s = StructureSet.build(2, [(1, 2, IntervalSpec.right(G256.t0 - 1))])
    p = BranchingProcess.from_arrays(G256, [x, x], s)
    plan = DegeneracyPlan(G256, [-3.0, 3.0], 1.0)
    ph = degenerate_approximation(p, plan)
    assert np.array_equal(ph.samples[0], ph.samples[1])
    union = plan.masks.any(axis=0)
    Xh = forward_array(ph.samples, G256)
    assert np.max(np.abs(Xh[:, union])) <= 1e-12


def test_gaussian_pair_error_identity():
    p = gaussian_pair(G256)
    choice = choose_centers(2, G256)
    plan = choice.plan()
    ph = degenerate_approximation(p, plan)
    t = G256.times
    assert np.max(np.abs(ph.samples[0][t < 0] - ph.samples[1][t < 0])) <= 1e-9
    X = forward_array(p.samples, G256)
    predicted = sum(per_bin_energy(X[q], plan.masks[q], G256) for q in range(2))
    errs = approximation_error(p, ph)
    for e in errs:
        assert e.l2_error ** 2 == pytest.approx(predicted, rel=1e-9)
        assert e.predicted_l2 ** 2 == pytest.approx(predicted, rel=1e-12)
    # per-bin accounting: the error spectrum is -X_q on band q and zero elsewhere
    E = error_spectra(p, ph)
    scale = np.max(np.abs(X))
    for q in range(2):
        assert np.max(np.abs(E[0][plan.masks[q]] + X[q][plan.masks[q]])) <= 1e-12 * scale
    assert np.max(np.abs(E[:, ~plan.masks.any(axis=0)])) <= 1e-12 * scale
    assert np.max(np.abs(E[1] - E[0])) <= 1e-12 * scale


def test_consequence_on_differences():
    p = gaussian_pair(G256)
    plan = choose_centers(2, G256).plan()
    Xh = forward_array(degenerate_approximation(p, plan).samples, G256)
    X = forward_array(p.samples, G256)
    assert np.max(np.abs((Xh[1] - Xh[0]) - (X[1] - X[0]))) <= 1e-12 * np.max(np.abs(X))


def test_overlapping_plan_rejected():
    p = gaussian_pair(G256)
    with pytest.raises(PlanInvalid):
        degenerate_approximation(p, DegeneracyPlan(G256, [-1, 1], 1.5))


def test_incoherent_input_rejected():
    t = G256.times
    x = np.exp(-t ** 2 / 2) + 0j
    s = StructureSet.build(2, [(1, 2, IntervalSpec.left(0.0))])
    p = BranchingProcess.from_arrays(G256, [x, x + 0.1], s)
    with pytest.raises(InvalidInput):
        degenerate_approximation(p, DegeneracyPlan(G256, [-5, 5], 1.0))


def test_plan_must_match_process():
    p = gaussian_pair(G256)
    with pytest.raises(InvalidArgument):
        degenerate_approximation(p, DegeneracyPlan(G256, [-5, 0, 5], 1.0))


def test_verify_degeneracy_pass_and_fail():
    p = gaussian_pair(G256)
    plan = choose_centers(2, G256).plan()
    ph = degenerate_approximation(p, plan)
    good = verify_degeneracy(ph, plan)
    assert good.passed and max(good.band_max) <= 1e-12 * good.scale
    bad = verify_degeneracy(p, plan)
    assert not bad.passed and min(bad.band_max) > 0


def test_verify_degeneracy_permutation_symmetric():
    rng = np.random.default_rng(8)
    p = random_fixture(rng, 3, connected=True)
    g = p.grid
    plan = choose_centers(3, g).plan()
    perm = [2, 0, 1]
    inv = np.argsort(perm)
    rel = [(inv[t.d - 1] + 1, inv[t.k - 1] + 1, t.interval) for t in p.structure.triples]
    q = BranchingProcess.from_arrays(g, p.samples[perm], StructureSet.build(3, rel))
    qplan = DegeneracyPlan(g, [plan.centers[i] for i in perm], plan.delta)
    a = verify_degeneracy(degenerate_approximation(p, plan), plan, original=p)
    b = verify_degeneracy(degenerate_approximation(q, qplan), qplan, original=q)
    assert a.passed and b.passed
    for d in range(3):
        assert b.errors[d].l2_error == pytest.approx(a.errors[perm[d]].l2_error, rel=1e-9)
        assert b.errors[d].predicted_l2 == pytest.approx(a.errors[perm[d]].predicted_l2, rel=1e-12)


def test_zero_error_for_identical_processes():
    p = gaussian_pair(G256)
    for e in approximation_error(p, p):
        assert e.l2_error == 0 and e.sup_error == 0 and e.predicted_l2 is None


def test_single_gaussian_error_monotone_in_delta():
    x = np.exp(-G256.times ** 2 / 2) + 0j
    p = BranchingProcess.from_arrays(G256, [x], StructureSet(1, ()))
    choice = choose_centers(1, G256)
    rows = sweep_delta(p, choice, [3.0, 2.0, 1.0, 0.5, 0.3])
    l2 = [r["l2_error"] for r in rows]
    assert all(b <= a for a, b in zip(l2, l2[1:]))
    assert l2[-1] < l2[0]


def test_sup_error_bounded_by_spectral_l1():
    p = gaussian_pair(G256)
    plan = choose_centers(2, G256).plan()
    ph = degenerate_approximation(p, plan)
    E = error_spectra(p, ph)
    union = plan.masks.any(axis=0)
    for d, e in enumerate(approximation_error(p, ph)):
        bound = np.sum(np.abs(E[d][union])) * G256.d_omega / (2 * math.pi)
        assert e.sup_error <= bound * (1 + 1e-12)


def test_real_mode_stays_real_and_keeps_identity():
    t = G256.times
    x1 = np.exp(-t ** 2 / 2)
    x2 = x1 + np.where(t >= 0, 0.5 * np.exp(-(t - 6) ** 2 / 2), 0.0)
    s = StructureSet.build(2, [(1, 2, IntervalSpec.left(0.0))])
    p = BranchingProcess.from_arrays(G256, [x1, x2], s)
    choice = choose_centers(2, G256, real=True)
    assert all(c > 0 for c in choice.centers)
    plan = choice.plan()
    for mask in plan.masks:
        assert np.array_equal(mirror_mask(mask), mask)
    ph = degenerate_approximation(p, plan)
    assert not np.any(ph.samples.imag)
    assert verify_degeneracy(ph, plan).passed
    errs = approximation_error(p, ph)
    for e in errs:
        assert e.l2_error == pytest.approx(e.predicted_l2, rel=1e-9)


def test_halving_and_refinement():
    deltas = halving_deltas(4.0, 3)
    assert deltas == [2.0, 1.0, 0.5]
    centers = choose_centers(2, G256).centers
    fine = refine_for_delta(G256, 2, 0.05, centers)
    assert fine.dt == G256.dt and fine.n > G256.n
    assert choose_centers(2, fine, centers).plan(0.05).masks.sum(axis=1).min() >= 4


def test_find_delta_meets_target():
    res = find_delta(gaussian_pair, G256, 1e-2)
    assert res.l2_error <= 1e-2 and res.refinements == 0
    p = gaussian_pair(res.grid)
    plan = choose_centers(2, res.grid).plan(res.delta)
    assert max(e.l2_error for e in approximation_error(p, degenerate_approximation(p, plan))) <= 1e-2


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 4), connected=st.booleans(),
       frac=st.floats(0.1, 1.0))
def test_surgery_invariants(seed, m, connected, frac):
    rng = np.random.default_rng(seed)
    p = random_fixture(rng, m, connected, n=64)
    choice = choose_centers(m, p.grid)
    delta = max(choice.default_delta(), frac * choice.delta_max)
    plan = choice.plan(min(delta, choice.delta_max))
    ph = degenerate_approximation(p, plan)
    assert verify_coincidence(ph, 1e-9).passed
    rep = verify_degeneracy(ph, plan, 1e-12, original=p)
    assert rep.passed
    E = error_spectra(p, ph)
    assert np.max(np.abs(E - E[0])) <= 1e-12 * rep.scale
    pred2 = rep.errors[0].predicted_l2 ** 2
    for e in rep.errors:
        assert e.l2_error ** 2 == pytest.approx(pred2, rel=1e-9)
