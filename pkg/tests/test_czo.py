import numpy as np
import pytest

from admbmo import czo
from admbmo.filtration import conditional_expectation
from admbmo.norms import bmo_ab_norm, lp_norm
from admbmo.space import WeightFamily, build_grid_space


def _ip(space, f, g):
    return float(np.sum(space.weights * f * g))


def test_martingale_transform_identity_and_isometry(dyadic32):
    sp, F = dyadic32
    f = np.random.default_rng(0).standard_normal(sp.n_cells)
    n = len(F.completed())
    ident = czo.MartingaleTransform(F, np.ones(n))
    assert np.allclose(ident.apply(f), f, atol=1e-13)
    signs = np.array([1, -1] * n)[:n]
    T = czo.MartingaleTransform(F, signs)
    assert lp_norm(T.apply(f), sp, 2) == pytest.approx(lp_norm(f, sp, 2), rel=1e-12)
    for lev in F.levels:
        lhs = conditional_expectation(T.apply(f), lev)
        rhs = T.apply(conditional_expectation(f, lev))
        assert np.allclose(lhs, rhs, atol=1e-12)


def test_martingale_transform_validation(dyadic32):
    sp, F = dyadic32
    with pytest.raises(ValueError):
        czo.MartingaleTransform(F, [1.0, 1.0])
    with pytest.raises(ValueError):
        czo.MartingaleTransform(F, [2.0] * len(F.completed()))


def test_haar_orthonormal_and_complete(dyadic32):
    sp, F = dyadic32
    H = czo.HaarSystem(F)
    assert len(H) == sp.n_cells - 1
    assert np.allclose(H.gram(), np.eye(len(H)), atol=1e-12)
    f = np.random.default_rng(1).standard_normal(sp.n_cells)
    assert np.allclose(H.reconstruct(f), f, atol=1e-12)


def test_haar_on_weighted_uneven_children(coverings):
    cov = coverings["corona_finite"]
    H = czo.HaarSystem(cov.filt_a)
    assert np.allclose(H.gram(), np.eye(len(H)), atol=1e-10)
    f = np.random.default_rng(2).standard_normal(cov.space.n_cells)
    assert np.allclose(H.reconstruct(f), f, atol=1e-10)


def test_single_term_shift(dyadic32):
    sp, F = dyadic32
    H = czo.HaarSystem(F)
    lq, q = 2, 0
    R = H.descendants(lq, q, 1)[0]
    S = H.descendants(lq, q, 2)[1]
    mq = F[lq].masses[q]
    mr = F[H.functions[R].level].masses[H.functions[R].atom]
    ms = F[H.functions[S].level].masses[H.functions[S].atom]
    alpha = 0.5 * np.sqrt(mr * ms) / mq
    T = czo.HaarShift(H, [((lq, q), R, S, alpha)], (1, 2))
    hR = H.matrix.toarray()[R]
    hS = H.matrix.toarray()[S]
    assert np.allclose(T.apply(hR), alpha * hS, atol=1e-14)
    f = np.random.default_rng(3).standard_normal(sp.n_cells)
    assert np.allclose(T.apply(f), alpha * _ip(sp, f, hR) * hS, atol=1e-13)
    with pytest.raises(ValueError, match="exceeds"):
        czo.HaarShift(H, [((lq, q), R, S, 3 * alpha)])


def test_random_shift_is_l2_bounded(dyadic32):
    sp, F = dyadic32
    T = czo.random_haar_shift(czo.HaarSystem(F), 1, 1, seed=4)
    assert T.complexity == (1, 1)
    op_norm = np.linalg.norm(np.sqrt(sp.weights)[:, None] * T.matrix() / np.sqrt(sp.weights)[None, :], 2)
    assert op_norm <= 4.0


def test_kernel_validation():
    sp = build_grid_space([0, 1], 4, WeightFamily.lebesgue())
    k = np.ones((4, 4))
    k[0, 1] = np.inf
    with pytest.raises(ValueError):
        czo.Kernel(k, sp)
    k = np.full((4, 4), np.inf)
    k[~np.eye(4, dtype=bool)] = 1.0
    assert np.all(np.diag(czo.Kernel(k, sp).values) == 0)


def test_hilbert_kernel_operator():
    sp = build_grid_space([0, 1], 8, WeightFamily.lebesgue())
    ker = czo.truncated_hilbert(sp)
    T = czo.KernelOperator(ker)
    f = np.random.default_rng(5).standard_normal(8)
    x = sp.centers[:, 0]
    direct = np.array([sum(f[j] / (x[i] - x[j]) / 8 for j in range(8) if j != i) for i in range(8)])
    assert np.allclose(T.apply(f), direct, atol=1e-13)
    # antisymmetric kernel on a uniform grid
    assert np.allclose(ker.values, -ker.values.T)


def test_kernel_of_matrix_round_trip(coverings):
    cov = coverings["corona_finite"]
    T = czo.MartingaleTransform(cov.filt_a, np.resize([1.0, -1.0], len(cov.filt_a.completed())))
    m = T.matrix()
    ker = czo.kernel_of_matrix(m, cov.space)
    K = czo.KernelOperator(ker)
    f = np.random.default_rng(6).standard_normal(cov.space.n_cells)
    diag = np.diag(m) * f
    assert np.allclose(K.apply(f) + diag, T.apply(f), atol=1e-10)


def test_hormander_metric():
    sp = build_grid_space([0, 1], 64, WeightFamily.lebesgue())
    const = czo.Kernel(np.ones((64, 64)), sp)
    assert czo.hormander_constant_metric(const, 2) == pytest.approx(0, abs=1e-12)
    hk = czo.truncated_hilbert(sp)
    vals = [czo.hormander_constant_metric(hk, a) for a in (1, 2, 4, 8)]
    assert all(v > 0 for v in vals[:2])
    assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        czo.hormander_constant_metric(hk, 0.5)


def test_hormander_atomic(dyadic32):
    sp, F = dyadic32
    hk = czo.truncated_hilbert(sp)
    fine = czo.hormander_constant_atomic(hk, [F])
    coarse = czo.hormander_constant_atomic(hk, [F.__class__(F.levels[:3])])
    assert 0 < coarse <= fine + 1e-12


def test_block_kernel_has_zero_constant(coverings):
    cov = coverings["corona_finite"]
    n_lev = len(cov.filt_a.completed())
    T = czo.MartingaleTransform(cov.filt_a, np.resize([1.0, -1.0], n_lev))
    ker = czo.kernel_of_matrix(T.matrix(), cov.space)
    # the kernel vanishes across different level-1 atoms, and within an atom
    # it only depends on atoms whose parents contain both points
    assert czo.hormander_constant_atomic(ker, [cov.filt_a]) == pytest.approx(0, abs=1e-10)


def test_endpoint_estimates(shifted12):
    cov = shifted12
    zero = czo.KernelOperator(czo.Kernel(np.zeros((12, 12)), cov.space))
    assert czo.linfty_bmo_estimate(zero, cov).lower_bound == 0
    T = czo.MartingaleTransform(cov.filt_a, [1, -1, 1])
    ex = czo.linfty_bmo_estimate(T, cov)
    assert ex.exhaustive and ex.evaluated == 2**11
    samp = czo.linfty_bmo_estimate(T, cov, trials=50, exhaustive=False, seed=7)
    assert not samp.exhaustive
    assert samp.lower_bound <= ex.lower_bound + 1e-12
    assert bmo_ab_norm(T.apply(ex.witness), cov) == pytest.approx(ex.lower_bound, rel=1e-12)


def test_lp_ratio_profile(dyadic32):
    sp, F = dyadic32
    zero = czo.KernelOperator(czo.Kernel(np.zeros((32, 32)), sp))
    assert all(r["sup_ratio"] == 0 for r in czo.lp_ratio_profile(zero, [1, 2, 4], trials=20))
    n = len(F.completed())
    ident = czo.MartingaleTransform(F, np.ones(n))
    rows = czo.lp_ratio_profile(ident, [1.5, 2, 3], trials=20, seed=1)
    assert all(r["sup_ratio"] == pytest.approx(1, rel=1e-12) for r in rows)
    iso = czo.MartingaleTransform(F, np.resize([1.0, -1.0], n))
    two = czo.lp_ratio_profile(iso, [2], trials=20, seed=2)[0]
    assert two["sup_ratio"] == pytest.approx(1, rel=1e-12)
