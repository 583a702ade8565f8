"""Shared oracles and toy problems for the test suite.

Everything here is independent of the library's own numerics: closed forms,
hand-built designs, and reference algorithms used to cross-check the
production code paths.
"""

import math

import numpy as np
from scipy.linalg import hadamard

from kernelval.kernels import FeatureMapKernel, MonomialFeature
from kernelval.sampling import TrainingSet


def norm_cdf(x):
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def bs_call(s0, strike, sigma, maturity, rate=0.0):
    """Black-Scholes call on the discounted price scale (strike paid at T)."""
    if maturity <= 0:
        return max(s0 - strike, 0.0)
    vol = sigma * math.sqrt(maturity)
    fwd = s0 * math.exp(rate * maturity)
    d1 = math.log(fwd / strike) / vol + 0.5 * vol
    d2 = d1 - vol
    return s0 * norm_cdf(d1) - math.exp(-rate * maturity) * strike * norm_cdf(d2)


def bs_put(s0, strike, sigma, maturity, rate=0.0):
    return (bs_call(s0, strike, sigma, maturity, rate)
            - s0 + math.exp(-rate * maturity) * strike)


# ATM, r=0, sigma=0.2, T=2: the call price collapses to erf(0.1)
ATM_CALL_2STEP = math.erf(0.1)


def hadamard_design(m):
    """Orthogonal-column +/-1 paths of shape (16, m, 1), columns 1..m."""
    H = hadamard(16).astype(float)
    return H[:, 1:m + 1][:, :, None]


def coordinate_features(coefs):
    """phi_k(x) = c_k * x_k on a (d = len(coefs), T = 1) path space."""
    d = len(coefs)
    feats = []
    for k, c in enumerate(coefs):
        powers = tuple(1 if j == k else 0 for j in range(d))
        feats.append(MonomialFeature(powers=(powers,), coef=float(c)))
    return FeatureMapKernel(features=tuple(feats), d=d, T=1)


def _toy_training_set(spec, paths, target_coefs):
    phi = np.array([[f.step_values(0, p[:, 0]) for f in spec.features]
                    for p in paths])
    values = phi @ np.asarray(target_coefs, dtype=float)
    return TrainingSet(
        paths=paths,
        payoff_values=values,
        weights=np.ones(paths.shape[0]),
        payoff_id="toy",
        gamma=None,
        n_payoff_evals=paths.shape[0],
    )


def sqrt_rate_problem(m=9, base=10.0):
    """Design whose prediction gap to the unregularized fit scales ~ sqrt(lambda).

    Geometric feature spectrum sigma_k = base^-k with flat target
    coefficients; on the Hadamard design the normal matrix is exactly
    diagonal, so the gap formula sum_k sigma_k lambda^2/(sigma_k+lambda)^2
    integrates to ~ C lambda over a grid interior to the spectrum.
    """
    coefs = [base ** (-0.5 * k) for k in range(m)]
    spec = coordinate_features(coefs)
    paths = hadamard_design(m)
    return _toy_training_set(spec, paths, np.ones(m)), spec


def linear_rate_problem(m=9):
    """Target inside a well-conditioned span: gap scales ~ lambda."""
    spec = coordinate_features(np.ones(m))
    paths = hadamard_design(m)
    return _toy_training_set(spec, paths, np.ones(m)), spec


def loglog_slope(lambdas, gaps):
    lam = np.log(np.asarray(lambdas, dtype=float))
    g = np.log(np.asarray(gaps, dtype=float))
    return float(np.polyfit(lam, g, 1)[0])


def ridge_gradient_descent(phi, values, lam, steps=40_000, lr=None):
    """Reference primal solver: plain gradient descent on the ridge objective.

    Minimizes (1/2n)||phi h - y||^2 + (lambda/2)||h||^2; slow but
    algorithmically independent of the library's Cholesky path.
    """
    n, m = phi.shape
    G = phi.T @ phi / n
    b = phi.T @ values / n
    if lr is None:
        lr = 1.0 / (np.linalg.eigvalsh(G).max() + lam)
    h = np.zeros(m)
    for _ in range(steps):
        h -= lr * (G @ h + lam * h - b)
    return h
