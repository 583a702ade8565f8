"""Kernel evaluations, tilts, and closed-form conditional expectations."""

import math

import numpy as np
import pytest

from kernelval import kernels
from kernelval.errors import InputError
from kernelval.kernels import (EXP_GUARD, FeatureMapKernel, GaussExpKernel,
                               GaussPolyKernel, MonomialFeature, cond_expect,
                               conditional_feature_matrix, conditional_gram,
                               diag, feature_matrix, feature_vector,
                               gauss_moment, gauss_poly_features, gram,
                               monomial_features, tilted, tilted_diag,
                               tilted_diag_many, tilted_gram, u_factor,
                               tail_factor, log_weight)

RNG = np.random.default_rng(20240817)


def test_gauss_moments():
    # (k-1)!! for even orders, zero for odd
    assert gauss_moment(0) == 1.0
    assert gauss_moment(1) == 0.0
    assert gauss_moment(2) == 1.0
    assert gauss_moment(4) == 3.0
    assert gauss_moment(8) == 105.0
    with pytest.raises(InputError):
        gauss_moment(-2)


def test_exponential_kernel_point_values():
    spec = GaussExpKernel(alpha=0.0, beta=0.3, d=1, T=1)
    assert math.isclose(kernels.evaluate(spec, [1.0], [1.0]), math.exp(0.3),
                        rel_tol=1e-15)
    spec2 = GaussExpKernel(alpha=1.0, beta=0.0, d=1, T=1)
    assert math.isclose(kernels.evaluate(spec2, [0.0], [2.0]), math.exp(-4.0),
                        rel_tol=1e-15)


def test_poly_kernel_point_value():
    spec = GaussPolyKernel(alpha=0.0, beta=2, d=1, T=1)
    assert kernels.evaluate(spec, [1.0], [2.0]) == pytest.approx(9.0, rel=1e-15)


def test_kernel_parameter_validation():
    with pytest.raises(InputError):
        GaussExpKernel(alpha=0.0, beta=0.0)  # constant kernel excluded
    with pytest.raises(InputError):
        GaussExpKernel(alpha=1.0, beta=0.5)  # beta must stay below 1/2
    with pytest.raises(InputError):
        GaussExpKernel(alpha=-1.0, beta=0.1)
    with pytest.raises(InputError):
        GaussPolyKernel(alpha=0.0, beta=-1)


def test_gram_symmetric_psd():
    spec = GaussExpKernel(alpha=2.0, beta=0.3, d=1, T=2)
    X = RNG.standard_normal((40, 1, 2))
    K = gram(spec, X)
    assert np.allclose(K, K.T, atol=1e-14)
    w = np.linalg.eigvalsh(K)
    assert w.min() > -1e-10 * w.max()


def test_tilted_gram_matches_explicit_weight_division():
    gamma = 0.45
    spec = GaussExpKernel(alpha=4.0, beta=0.3, d=1, T=2, gamma=gamma)
    X = RNG.standard_normal((15, 1, 2)) * 2.0
    Y = RNG.standard_normal((7, 1, 2)) * 2.0
    wx = np.exp(log_weight(gamma, 1, 2, X))
    wy = np.exp(log_weight(gamma, 1, 2, Y))
    expect = gram(spec, X, Y) / np.sqrt(np.outer(wx, wy))
    assert np.allclose(tilted_gram(spec, X, Y), expect, rtol=1e-12)


def test_tilted_diag_at_origin_is_inverse_weight():
    # w(0) = (1-2*gamma)^(dT/2) = 0.1, so kappa~(0)^2 = k(0,0)/w(0) = 10
    spec = GaussExpKernel(alpha=4.0, beta=0.3, d=1, T=2, gamma=0.45)
    assert tilted_diag(spec, np.zeros((1, 2))) == pytest.approx(10.0, rel=1e-12)
    batch = tilted_diag_many(spec, np.zeros((3, 1, 2)))
    assert np.allclose(batch, 10.0, rtol=1e-12)


def test_tilted_diag_many_matches_scalar():
    spec = GaussExpKernel(alpha=1.0, beta=0.2, d=1, T=2, gamma=0.3)
    X = RNG.standard_normal((9, 1, 2)) * 1.5
    batch = tilted_diag_many(spec, X)
    for i in range(9):
        assert batch[i] == pytest.approx(tilted_diag(spec, X[i]), rel=1e-12)


def test_bounded_tilted_diagonal_iff_beta_below_gamma():
    far = np.full((1, 2), 20.0)
    flat = GaussExpKernel(alpha=4.0, beta=0.3, d=1, T=2, gamma=0.45)
    assert tilted_diag(flat, far) < 10.0  # decays away from the origin
    heavy = GaussExpKernel(alpha=4.0, beta=0.45, d=1, T=2, gamma=0.3)
    assert tilted_diag(heavy, far) > 1e3  # grows without bound


def test_guarded_exponent_raises_instead_of_inf():
    spec = GaussExpKernel(alpha=0.0, beta=0.45, d=1, T=2)
    big = np.full((1, 1, 2), 30.0)
    with pytest.raises(OverflowError):
        gram(spec, big, big)
    assert EXP_GUARD == 700.0


def test_u_factor_exponential_closed_forms():
    spec = GaussExpKernel(alpha=2.0, beta=0.3, d=1, T=2)
    assert u_factor(spec, 0, 0, [0.0]) == pytest.approx(5 ** -0.5, rel=1e-14)
    spec0 = GaussExpKernel(alpha=0.0, beta=0.3, d=1, T=2)
    # alpha = 0: U(y) = exp(beta^2 y^2 / 2)
    assert u_factor(spec0, 0, 1, [1.0]) == pytest.approx(math.exp(0.045),
                                                         rel=1e-14)


def test_u_factor_matches_monte_carlo():
    rng = np.random.default_rng(5)
    z = rng.standard_normal(400_000)
    y = 0.7
    spec = GaussExpKernel(alpha=2.0, beta=0.3, d=1, T=2)
    vals = np.exp(-spec.alpha * (z - y) ** 2 + spec.beta * z * y)
    mc, se = vals.mean(), vals.std() / math.sqrt(z.size)
    assert abs(u_factor(spec, 0, 0, [y]) - mc) < 3 * se

    # per-summand factors carry phi_i(y) along with the step average
    poly = GaussPolyKernel(alpha=1.0, beta=2, d=1, T=2)
    feats = gauss_poly_features(poly)
    damp = np.exp(-poly.alpha * (z - y) ** 2)
    for t in (0, 1):
        for i in (0, len(feats) // 2, len(feats) - 1):
            f = feats[i]
            phi_y = f.step_values(t, np.array([[y]]))[0]
            vals = damp * f.step_values(t, z[:, None]) * phi_y
            mc, se = vals.mean(), vals.std() / math.sqrt(z.size)
            assert abs(u_factor(poly, i, t, [y]) - mc) < 3 * se + 1e-12


def test_tail_factor_is_product_of_step_factors():
    spec = GaussExpKernel(alpha=1.5, beta=0.2, d=1, T=2)
    Y = RNG.standard_normal((6, 1, 2))
    tail0 = tail_factor(spec, Y, 0)
    manual = np.array([
        u_factor(spec, 0, 0, Y[i, :, 0]) * u_factor(spec, 0, 1, Y[i, :, 1])
        for i in range(6)
    ])
    assert np.allclose(tail0, manual, rtol=1e-12)
    assert np.allclose(tail_factor(spec, Y, 2), 1.0)


@pytest.mark.parametrize("spec", [
    GaussExpKernel(alpha=2.0, beta=0.3, d=1, T=2),
    GaussPolyKernel(alpha=1.0, beta=2, d=1, T=2),
])
def test_cond_expect_tower_property(spec):
    """E[k(X, y)] computed in closed form must match brute-force MC."""
    rng = np.random.default_rng(77)
    n = 200_000
    y = np.array([[0.4, -0.8]])
    for t, prefix in ((0, ()), (1, [0.6])):
        tails = rng.standard_normal((n, 1, spec.T - t))
        pre = np.asarray(prefix, dtype=float).reshape(1, t)
        full = np.concatenate([np.broadcast_to(pre[None], (n, 1, t)), tails],
                              axis=2)
        vals = gram(spec, full, y[None])[:, 0]
        mc, se = vals.mean(), vals.std() / math.sqrt(n)
        closed = cond_expect(spec, pre, y, t)
        assert abs(closed - mc) < 3 * se, (t, closed, mc, se)


def test_cond_expect_endpoints():
    spec = GaussExpKernel(alpha=2.0, beta=0.3, d=1, T=2)
    x = np.array([[0.3, -0.2]])
    y = np.array([[0.4, 0.9]])
    # revealing every step collapses to a plain kernel evaluation
    assert cond_expect(spec, x, y, 2) == pytest.approx(
        float(gram(spec, x[None], y[None])[0, 0]), rel=1e-13)
    with pytest.raises(InputError):
        cond_expect(spec, x, y, 3)


def test_conditional_gram_matches_scalar_loop():
    spec = GaussPolyKernel(alpha=0.5, beta=2, d=1, T=2)
    pre = RNG.standard_normal((4, 1, 1))
    Y = RNG.standard_normal((3, 1, 2))
    M = conditional_gram(spec, pre, Y, 1)
    for i in range(4):
        for j in range(3):
            assert M[i, j] == pytest.approx(
                cond_expect(spec, pre[i], Y[j], 1), rel=1e-12)


def test_gauss_poly_expansion_reproduces_kernel():
    spec = GaussPolyKernel(alpha=0.7, beta=3, d=1, T=2)
    feats = gauss_poly_features(spec)
    assert len(feats) == spec.n_summands
    X = RNG.standard_normal((8, 1, 2))
    Y = RNG.standard_normal((5, 1, 2))
    # expansion check: (1 + x.y)^beta = sum_i phi_i(x) phi_i(y)
    fspec = FeatureMapKernel(features=feats, d=1, T=2)
    P = feature_matrix(fspec, X) @ feature_matrix(fspec, Y).T
    inner = np.einsum("ics,jcs->ij", X, Y)
    assert np.allclose(P, (1.0 + inner) ** spec.beta, rtol=1e-10)


def test_monomial_feature_counts_and_degrees():
    feats = monomial_features(1, 2, max_total_degree=3)
    assert len(feats) == 10  # C(2+3, 3)
    assert sorted(f.total_degree() for f in feats)[0] == 0
    assert max(f.total_degree() for f in feats) == 3


def test_feature_matrix_matches_manual_products():
    feats = (MonomialFeature(powers=((1,), (0,)), coef=2.0),
             MonomialFeature(powers=((1,), (2,)), coef=1.0))
    spec = FeatureMapKernel(features=feats, d=1, T=2)
    x = np.array([[1.5, -2.0]])
    phi = feature_vector(spec, x)
    assert phi[0] == pytest.approx(3.0)
    assert phi[1] == pytest.approx(1.5 * 4.0)
    assert gram(spec, x[None], x[None])[0, 0] == pytest.approx(phi @ phi)


def test_dependent_features_rejected():
    feats = (MonomialFeature(powers=((1,), (0,)), coef=1.0),
             MonomialFeature(powers=((1,), (0,)), coef=2.0))
    with pytest.raises(InputError):
        FeatureMapKernel(features=feats, d=1, T=2)


def test_conditional_feature_matrix_towers_to_step_means():
    feats = monomial_features(1, 2, max_total_degree=2)
    spec = FeatureMapKernel(features=feats, d=1, T=2)
    rng = np.random.default_rng(3)
    pre = rng.standard_normal((5, 1, 1))
    F1 = conditional_feature_matrix(spec, pre, 1)
    # at t=1 each feature factorizes into the revealed step times the
    # unconditional mean of its final-step factor
    for j, f in enumerate(feats):
        manual = f.step_values(0, pre[:, :, 0]) * f.step_mean(1)
        assert np.allclose(F1[:, j], manual, rtol=1e-12)


def test_diag_shortcut_matches_gram():
    spec = GaussExpKernel(alpha=3.0, beta=0.4, d=1, T=2)
    x = np.array([[0.7, 1.1]])
    assert diag(spec, x) == pytest.approx(
        float(gram(spec, x[None], x[None])[0, 0]), rel=1e-13)


def test_tilted_scalar_helper():
    spec = GaussExpKernel(alpha=1.0, beta=0.1, d=1, T=2, gamma=0.2)
    x = np.array([[0.5, -0.3]])
    y = np.array([[1.0, 0.2]])
    wx = math.exp(log_weight(0.2, 1, 2, x))
    wy = math.exp(log_weight(0.2, 1, 2, y))
    manual = float(gram(spec, x[None], y[None])[0, 0]) / math.sqrt(wx * wy)
    assert tilted(spec, x, y) == pytest.approx(manual, rel=1e-12)
