"""Kernels on path space with closed-form conditional expectations.

A path is a ``d x T`` real matrix: ``T`` time steps of a ``d``-dimensional
Gaussian white noise ``X = (X_1, ..., X_T)``, each step standard normal under
the nominal measure.  Every kernel here factorizes over time steps as

    k(x, y) = sum_i  prod_t  k_{i,t}(x_t, y_t),

which makes the conditional expectation of ``k(X, y)`` given the first ``t``
steps a finite product: revealed steps contribute the per-step kernel factor,
unrevealed steps contribute a one-step Gaussian average (``u_factor``).  That
single identity is what turns a fitted kernel regressor into a closed-form
value process.

Three families are implemented:

``GaussExpKernel``
    ``k(x, y) = exp(-alpha ||x - y||^2 + beta x.y)`` with ``alpha >= 0`` and
    ``0 <= beta < 1/2``, ``(alpha, beta) != (0, 0)``.  One summand (m = 1).

``GaussPolyKernel``
    ``k(x, y) = exp(-alpha ||x - y||^2) (1 + x.y)^beta`` with integer
    ``beta >= 0``.  The polynomial part expands into finitely many monomial
    features; the expansion is only enumerated for ``beta <= 4`` and
    ``d*T <= 8``.

``FeatureMapKernel``
    ``k(x, y) = phi(x).phi(y)`` for finitely many product features
    ``phi_i(x) = prod_t phi_{i,t}(x_t)`` (monomials by default).

All evaluation is done in log space where an exponential is involved; an
exponent above ``EXP_GUARD`` raises :class:`OverflowError` instead of
returning ``inf``.  Negative exponents may underflow to ``0.0``, which is the
correct limit.

Tilted variants ``k~(x, y) = k(x, y) / sqrt(w(x) w(y))`` use the Gaussian
change-of-measure weight ``w`` with parameter ``gamma`` carried by the kernel
spec (see :mod:`kernelval.sampling` for the sampling side of the same weight).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product as _iproduct

import numpy as np

from .errors import CapabilityError, InputError

__all__ = [
    "GaussExpKernel",
    "GaussPolyKernel",
    "FeatureMapKernel",
    "MonomialFeature",
    "monomial_features",
    "gauss_poly_features",
    "as_path",
    "as_paths",
    "evaluate",
    "gram",
    "diag",
    "tilted",
    "tilted_gram",
    "tilted_diag",
    "log_weight",
    "u_factor",
    "tail_factor",
    "cond_expect",
    "conditional_gram",
    "feature_vector",
    "feature_matrix",
    "step_mean",
    "cond_expect_features",
    "conditional_feature_matrix",
    "gauss_moment",
    "EXP_GUARD",
]

# Exponents above this raise instead of overflowing to inf.
EXP_GUARD = 700.0

_POLY_BETA_CAP = 4
_POLY_DIM_CAP = 8


def _validate_dims(d, T):
    if not (isinstance(d, int) and isinstance(T, int)) or d < 1 or T < 1:
        raise InputError(f"path dimensions must be positive integers, got d={d}, T={T}")


def as_path(x, d, T):
    """Coerce ``x`` to a ``(d, T)`` float array; accepts ``(T,)`` when d == 1."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 1 and d == 1 and a.shape[0] == T:
        a = a.reshape(1, T)
    if a.shape != (d, T):
        raise InputError(f"expected path of shape ({d}, {T}), got {a.shape}")
    return a


def as_paths(x, d, T):
    """Coerce to a batch ``(N, d, T)``; accepts a single path or ``(N, T)`` when d == 1."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 1 and d == 1 and a.shape[0] == T:
        a = a.reshape(1, 1, T)
    elif a.ndim == 2:
        if a.shape == (d, T):
            a = a.reshape(1, d, T)
        elif d == 1 and a.shape[1] == T:
            a = a.reshape(-1, 1, T)
        else:
            raise InputError(f"cannot interpret shape {a.shape} as paths of shape ({d}, {T})")
    if a.ndim != 3 or a.shape[1:] != (d, T):
        raise InputError(f"expected paths of shape (N, {d}, {T}), got {a.shape}")
    return a


def _guarded_exp(e, out=None):
    """exp with the positive-overflow guard; underflow silently reaches 0.0."""
    m = np.max(e) if np.size(e) else 0.0
    if m > EXP_GUARD:
        raise OverflowError(
            f"kernel exponent {m:.3g} exceeds the overflow guard {EXP_GUARD:g}"
        )
    return np.exp(e, out=out)


def gauss_moment(k):
    """E[Z^k] for standard normal Z: (k-1)!! for even k, 0 for odd k."""
    if k < 0:
        raise InputError("moment order must be nonnegative")
    if k % 2 == 1:
        return 0.0
    return float(math.prod(range(k - 1, 0, -2))) if k else 1.0


# ---------------------------------------------------------------------------
# kernel specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussExpKernel:
    """Gaussian-exponentiated kernel ``exp(-alpha ||x-y||^2 + beta x.y)``."""

    alpha: float
    beta: float
    d: int = 1
    T: int = 2
    gamma: float = 0.0

    def __post_init__(self):
        _validate_dims(self.d, self.T)
        if self.alpha < 0:
            raise InputError(f"alpha must be nonnegative, got {self.alpha}")
        if not 0.0 <= self.beta < 0.5:
            raise InputError(f"beta must lie in [0, 1/2), got {self.beta}")
        if self.alpha == 0.0 and self.beta == 0.0:
            raise InputError("(alpha, beta) = (0, 0) is the constant kernel; not allowed")
        if self.gamma >= 0.5:
            raise InputError(f"gamma must be < 1/2, got {self.gamma}")

    @property
    def n_summands(self):
        return 1

    def u_coefficient(self):
        """Coefficient c in U(y) = (1+2a)^(-d/2) exp(c ||y||^2)."""
        a, b = self.alpha, self.beta
        return (b * b + 4.0 * a * b - 2.0 * a) / (4.0 * a + 2.0)


@dataclass(frozen=True)
class GaussPolyKernel:
    """Gaussian-polynomial kernel ``exp(-alpha ||x-y||^2) (1 + x.y)^beta``."""

    alpha: float
    beta: int
    d: int = 1
    T: int = 2
    gamma: float = 0.0

    def __post_init__(self):
        _validate_dims(self.d, self.T)
        if self.alpha < 0:
            raise InputError(f"alpha must be nonnegative, got {self.alpha}")
        if not isinstance(self.beta, int) or self.beta < 0:
            raise InputError(f"beta must be a nonnegative integer, got {self.beta}")
        if self.gamma >= 0.5:
            raise InputError(f"gamma must be < 1/2, got {self.gamma}")

    @property
    def n_summands(self):
        return math.comb(self.beta + self.d * self.T, self.d * self.T)


@dataclass(frozen=True)
class MonomialFeature:
    """One product feature: per-step, per-coordinate exponents plus a scalar.

    ``powers[t][c]`` is the exponent of coordinate ``c`` at step ``t``.  The
    scalar ``coef`` is attached to the step-0 factor, so the per-step split
    ``phi_i = prod_t phi_{i,t}`` is well defined.
    """

    powers: tuple
    coef: float = 1.0

    def step_values(self, t, y):
        """phi_{i,t}(y) for step values ``y`` of shape (..., d)."""
        y = np.asarray(y, dtype=float)
        p = self.powers[t]
        out = np.ones(y.shape[:-1])
        for c, k in enumerate(p):
            if k:
                out = out * y[..., c] ** k
        if t == 0:
            out = out * self.coef
        return out

    def step_mean(self, t):
        """E[phi_{i,t}(X_t)] under the standard normal step distribution."""
        m = math.prod(gauss_moment(k) for k in self.powers[t])
        return m * self.coef if t == 0 else m

    def total_degree(self):
        return sum(sum(p) for p in self.powers)


@dataclass(frozen=True)
class FeatureMapKernel:
    """Finite-dimensional kernel ``k(x, y) = phi(x).phi(y)``."""

    features: tuple
    d: int = 1
    T: int = 2
    gamma: float = 0.0
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        _validate_dims(self.d, self.T)
        if self.gamma >= 0.5:
            raise InputError(f"gamma must be < 1/2, got {self.gamma}")
        if not self.features:
            raise InputError("feature list must not be empty")
        for f in self.features:
            if len(f.powers) != self.T or any(len(p) != self.d for p in f.powers):
                raise InputError("feature powers must have shape (T, d)")
        if self.validate:
            _check_linear_independence(self)

    @property
    def n_summands(self):
        return len(self.features)


def _check_linear_independence(spec):
    """Reject feature sets that are linearly dependent on a probe sample."""
    m = len(spec.features)
    rng = np.random.Generator(np.random.Philox(key=0x9E3779B97F4A7C15))
    probe = rng.standard_normal((max(2 * m, 8), spec.d, spec.T))
    mat = feature_matrix(spec, probe)
    rank = np.linalg.matrix_rank(mat)
    if rank < m:
        raise InputError(
            f"feature set is linearly dependent: rank {rank} < {m} on a probe sample"
        )


def monomial_features(d, T, max_total_degree):
    """All monomial product features of total degree <= ``max_total_degree``.

    The constant feature comes first; the rest are ordered by total degree,
    then lexicographically by the flattened exponent tuple.
    """
    _validate_dims(d, T)
    if max_total_degree < 0:
        raise InputError("max_total_degree must be nonnegative")
    combos = []
    ranges = [range(max_total_degree + 1)] * (d * T)
    for flat in _iproduct(*ranges):
        if sum(flat) <= max_total_degree:
            combos.append(flat)
    combos.sort(key=lambda f: (sum(f), f))
    feats = []
    for flat in combos:
        powers = tuple(
            tuple(flat[t * d + c] for c in range(d)) for t in range(T)
        )
        feats.append(MonomialFeature(powers=powers))
    return tuple(feats)


def gauss_poly_features(spec):
    """Monomial expansion of ``(1 + x.y)^beta`` for a GaussPolyKernel.

    Returns features such that ``(1 + x.y)^beta = sum_i phi_i(x) phi_i(y)``.
    Enumeration is refused beyond ``beta <= 4`` or ``d*T > 8``.
    """
    if not isinstance(spec, GaussPolyKernel):
        raise InputError("expansion is defined for GaussPolyKernel specs")
    if spec.beta > _POLY_BETA_CAP or spec.d * spec.T > _POLY_DIM_CAP:
        raise CapabilityError(
            f"polynomial feature enumeration supports beta <= {_POLY_BETA_CAP} and "
            f"d*T <= {_POLY_DIM_CAP}; got beta={spec.beta}, d*T={spec.d * spec.T}"
        )
    b, d, T = spec.beta, spec.d, spec.T
    n = d * T
    feats = []
    for flat in _iproduct(*([range(b + 1)] * n)):
        s = sum(flat)
        if s > b:
            continue
        coef = math.factorial(b) / (
            math.factorial(b - s) * math.prod(math.factorial(k) for k in flat)
        )
        powers = tuple(tuple(flat[t * d + c] for c in range(d)) for t in range(T))
        feats.append(MonomialFeature(powers=powers, coef=math.sqrt(coef)))
    feats.sort(key=lambda f: (f.total_degree(), f.powers))
    return tuple(feats)


# ---------------------------------------------------------------------------
# plain evaluation
# ---------------------------------------------------------------------------


def _slice_products(X, Y, steps):
    """Inner products and squared norms over a step slice.

    X: (N, d, T'), Y: (M, d, T'') with the slice applied by the caller.
    Returns (P, nx, ny) with P[i, j] = <X_i, Y_j> over the slice.
    """
    if steps == 0:
        n, m = X.shape[0], Y.shape[0]
        return np.zeros((n, m)), np.zeros(n), np.zeros(m)
    Xs = X[:, :, :steps].reshape(X.shape[0], -1)
    Ys = Y[:, :, :steps].reshape(Y.shape[0], -1)
    P = Xs @ Ys.T
    return P, np.einsum("ij,ij->i", Xs, Xs), np.einsum("ij,ij->i", Ys, Ys)


def gram(spec, X, Y=None):
    """Kernel matrix ``k(X_i, Y_j)`` for path batches; ``Y=None`` means ``Y=X``."""
    X = as_paths(X, spec.d, spec.T)
    Y = X if Y is None else as_paths(Y, spec.d, spec.T)
    P, nx, ny = _slice_products(X, Y, spec.T)
    if isinstance(spec, GaussExpKernel):
        e = (2.0 * spec.alpha + spec.beta) * P
        e -= spec.alpha * nx[:, None]
        e -= spec.alpha * ny[None, :]
        return _guarded_exp(e, out=e)
    if isinstance(spec, GaussPolyKernel):
        e = 2.0 * spec.alpha * P
        e -= spec.alpha * nx[:, None]
        e -= spec.alpha * ny[None, :]
        return _guarded_exp(e, out=e) * (1.0 + P) ** spec.beta
    if isinstance(spec, FeatureMapKernel):
        return feature_matrix(spec, X) @ feature_matrix(spec, Y).T
    raise InputError(f"unknown kernel spec {type(spec).__name__}")


def evaluate(spec, x, y):
    """Scalar kernel value ``k(x, y)``."""
    x = as_path(x, spec.d, spec.T)
    y = as_path(y, spec.d, spec.T)
    if x is y or np.array_equal(x, y):
        return diag(spec, x)
    return float(gram(spec, x[None], y[None])[0, 0])


def diag(spec, x):
    """``k(x, x)`` via the diagonal shortcut (no distance computation)."""
    x = as_path(x, spec.d, spec.T)
    n2 = float(np.sum(x * x))
    if isinstance(spec, GaussExpKernel):
        e = spec.beta * n2
        if e > EXP_GUARD:
            raise OverflowError(f"kernel exponent {e:.3g} exceeds {EXP_GUARD:g}")
        return math.exp(e)
    if isinstance(spec, GaussPolyKernel):
        return (1.0 + n2) ** spec.beta
    if isinstance(spec, FeatureMapKernel):
        v = feature_vector(spec, x)
        return float(v @ v)
    raise InputError(f"unknown kernel spec {type(spec).__name__}")


# ---------------------------------------------------------------------------
# tilted evaluation (change of measure with weight w)
# ---------------------------------------------------------------------------


def log_weight(gamma, d, T, x):
    """log w(x) for the Gaussian tilt: w = (1-2*gamma)^(dT/2) exp(gamma ||x||^2)."""
    if gamma >= 0.5:
        raise InputError(f"gamma must be < 1/2, got {gamma}")
    X = as_paths(x, d, T)
    n2 = np.einsum("ncs,ncs->n", X, X)
    out = 0.5 * d * T * math.log1p(-2.0 * gamma) + gamma * n2
    return out if np.asarray(x).ndim == 3 else float(out[0]) if X.shape[0] == 1 else out


def tilted(spec, x, y):
    """``k(x, y) / sqrt(w(x) w(y))`` under the kernel's Gaussian tilt."""
    return float(tilted_gram(spec, as_path(x, spec.d, spec.T)[None],
                             as_path(y, spec.d, spec.T)[None])[0, 0])


def tilted_gram(spec, X, Y=None):
    """Tilted kernel matrix, evaluated in log space where possible."""
    X = as_paths(X, spec.d, spec.T)
    Y = X if Y is None else as_paths(Y, spec.d, spec.T)
    g = spec.gamma
    const = -0.5 * spec.d * spec.T * math.log1p(-2.0 * g)
    if isinstance(spec, GaussExpKernel):
        # closed form: (1-2g)^(-dT/2) exp(-(alpha+g/2)||x-y||^2 + (beta-g) x.y)
        P, nx, ny = _slice_products(X, Y, spec.T)
        a = spec.alpha + 0.5 * g
        e = (2.0 * a + spec.beta - g) * P
        e -= a * nx[:, None]
        e -= a * ny[None, :]
        e += const
        return _guarded_exp(e, out=e)
    lwx = log_weight(g, spec.d, spec.T, X)
    lwy = lwx if Y is X else log_weight(g, spec.d, spec.T, Y)
    scale = _guarded_exp(-0.5 * (lwx[:, None] + lwy[None, :]))
    return gram(spec, X, Y) * scale


def tilted_diag(spec, x):
    """``k(x, x) / w(x)``: squared tilted diagonal ``kappa~(x)^2``."""
    x = as_path(x, spec.d, spec.T)
    lw = log_weight(spec.gamma, spec.d, spec.T, x[None])[0]
    if isinstance(spec, GaussExpKernel):
        e = spec.beta * float(np.sum(x * x)) - lw
        if e > EXP_GUARD:
            raise OverflowError(f"kernel exponent {e:.3g} exceeds {EXP_GUARD:g}")
        return math.exp(e)
    return diag(spec, x) * math.exp(-lw)


def tilted_diag_many(spec, X):
    """Batch ``kappa~(x)^2`` of shape (N,) for paths (N, d, T)."""
    X = as_paths(X, spec.d, spec.T)
    lw = log_weight(spec.gamma, spec.d, spec.T, X)
    lw = np.atleast_1d(lw)
    if isinstance(spec, GaussExpKernel):
        e = spec.beta * np.einsum("ncs,ncs->n", X, X) - lw
        return _guarded_exp(e, out=e)
    if isinstance(spec, FeatureMapKernel):
        phi = feature_matrix(spec, X)
        return np.einsum("nm,nm->n", phi, phi) * np.exp(-lw)
    dg = np.array([diag(spec, X[i]) for i in range(X.shape[0])])
    return dg * np.exp(-lw)


# ---------------------------------------------------------------------------
# one-step expectation factors and conditional expectations
# ---------------------------------------------------------------------------


def _expected_monomial_shifted(powers, shift, scale):
    """E[prod_c (shift_c + scale * Z_c)^{k_c}] for standard normal Z.

    ``shift`` has shape (..., d); returns the same leading shape.
    """
    shift = np.asarray(shift, dtype=float)
    out = np.ones(shift.shape[:-1])
    for c, k in enumerate(powers):
        if k == 0:
            continue
        acc = np.zeros(shift.shape[:-1])
        for j in range(0, k + 1, 2):
            mom = gauss_moment(j)
            acc += math.comb(k, j) * mom * scale**j * shift[..., c] ** (k - j)
        out = out * acc
    return out


def u_factor(spec, i, t, y):
    """One-step expectation factor ``U_{i,t}(y) = E[k_{i,t}(X_t, y)]``.

    ``y`` is a step value of shape ``(d,)`` (or scalar when d == 1).  For the
    Gaussian-exponentiated kernel there is a single summand and ``i`` is
    ignored.  For expansion-based kernels the feature's scalar coefficient is
    attached to the step ``t == 0`` factor.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != (spec.d,):
        raise InputError(f"expected step value of shape ({spec.d},), got {y.shape}")
    if not 0 <= t < spec.T:
        raise InputError(f"step index t must lie in [0, {spec.T}), got {t}")
    n2 = float(y @ y)
    if isinstance(spec, GaussExpKernel):
        e = spec.u_coefficient() * n2
        if e > EXP_GUARD:
            raise OverflowError(f"kernel exponent {e:.3g} exceeds {EXP_GUARD:g}")
        return (1.0 + 2.0 * spec.alpha) ** (-0.5 * spec.d) * math.exp(e)
    if isinstance(spec, GaussPolyKernel):
        feats = gauss_poly_features(spec)
        return _gauss_poly_u(spec, feats[i], t, y[None])[0]
    if isinstance(spec, FeatureMapKernel):
        f = spec.features[i]
        return float(f.step_mean(t) * f.step_values(t, y[None])[0])
    raise InputError(f"unknown kernel spec {type(spec).__name__}")


def _gauss_poly_u(spec, feat, t, Y):
    """Vectorized U_{i,t} for a GaussPolyKernel feature; Y has shape (M, d)."""
    a = spec.alpha
    n2 = np.einsum("mc,mc->m", Y, Y)
    damp = np.exp(-(a / (1.0 + 2.0 * a)) * n2)
    shift = (2.0 * a / (1.0 + 2.0 * a)) * Y
    scale = (1.0 + 2.0 * a) ** -0.5
    mean_part = _expected_monomial_shifted(feat.powers[t], shift, scale)
    vals = damp * feat.step_values(t, Y) * (1.0 + 2.0 * a) ** (-0.5 * spec.d) * mean_part
    if t == 0:
        # step_values applied coef once; U needs coef^2 at the designated step
        vals = vals * feat.coef
    return vals


def tail_factor(spec, Y, t):
    """``prod_{s > t} U(Y_s)`` per path for the Gaussian-exponentiated kernel.

    Y: (M, d, T); returns (M,).  Only defined for the single-summand family;
    expansion-based kernels go through :func:`conditional_gram`.
    """
    if not isinstance(spec, GaussExpKernel):
        raise InputError("tail_factor applies to GaussExpKernel only")
    Y = as_paths(Y, spec.d, spec.T)
    k = spec.T - t
    if k == 0:
        return np.ones(Y.shape[0])
    n2 = np.einsum("mcs,mcs->m", Y[:, :, t:], Y[:, :, t:])
    e = spec.u_coefficient() * n2
    e += -0.5 * spec.d * k * math.log1p(2.0 * spec.alpha)
    return _guarded_exp(e, out=e)


def cond_expect(spec, prefix, y, t):
    """``E[k(X, y) | X_1..X_t = prefix]`` as a scalar.

    ``prefix`` holds the revealed steps, shape ``(d, t)`` (anything coercible;
    an empty prefix gives the full expectation, ``t = T`` gives ``k(x, y)``).
    """
    y = as_path(y, spec.d, spec.T)
    if not 0 <= t <= spec.T:
        raise InputError(f"t must lie in [0, {spec.T}], got {t}")
    pre = np.asarray(prefix, dtype=float).reshape(spec.d, t) if t else np.zeros((spec.d, 0))
    return float(conditional_gram(spec, pre[None], y[None], t)[0, 0])


def conditional_gram(spec, prefixes, Y, t):
    """Matrix of conditional expectations ``E[k(X, Y_j) | first t steps = prefix_i]``.

    ``prefixes``: (N, d, t) revealed steps (only the first ``t`` steps of a
    full (N, d, T) array are read).  ``Y``: (M, d, T) full paths.  Returns
    (N, M).  This is the workhorse behind value-process evaluation: column
    ``j`` at ``t = T`` is the plain kernel, at ``t = 0`` the full expectation.
    """
    Y = as_paths(Y, spec.d, spec.T)
    pre = np.asarray(prefixes, dtype=float)
    if pre.ndim == 2:
        pre = pre[None]
    if pre.ndim != 3 or pre.shape[1] != spec.d or pre.shape[2] < t:
        raise InputError(
            f"prefixes must have shape (N, {spec.d}, >= {t}), got {pre.shape}"
        )
    if not 0 <= t <= spec.T:
        raise InputError(f"t must lie in [0, {spec.T}], got {t}")

    if isinstance(spec, GaussExpKernel):
        P, nx, ny = _slice_products(pre, Y, t)
        e = (2.0 * spec.alpha + spec.beta) * P
        e -= spec.alpha * nx[:, None]
        e -= spec.alpha * ny[None, :]
        out = _guarded_exp(e, out=e)
        out *= tail_factor(spec, Y, t)[None, :]
        return out

    if isinstance(spec, FeatureMapKernel):
        cf = conditional_feature_matrix(spec, pre, t)
        return cf @ feature_matrix(spec, Y).T

    if isinstance(spec, GaussPolyKernel):
        feats = gauss_poly_features(spec)
        # Gaussian factor over revealed steps factors out of the feature sum.
        P, nx, ny = _slice_products(pre, Y, t)
        e = 2.0 * spec.alpha * P
        e -= spec.alpha * nx[:, None]
        e -= spec.alpha * ny[None, :]
        base = _guarded_exp(e, out=e)
        n, m = pre.shape[0], Y.shape[0]
        A = np.ones((n, len(feats)))
        B = np.ones((m, len(feats)))
        for i, f in enumerate(feats):
            av = np.ones(n)
            bv = np.ones(m)
            for s in range(t):
                av *= f.step_values(s, pre[:, :, s])
                bv *= f.step_values(s, Y[:, :, s])
            for s in range(t, spec.T):
                bv *= _gauss_poly_u(spec, f, s, Y[:, :, s])
            A[:, i] = av
            B[:, i] = bv
        return base * (A @ B.T)

    raise InputError(f"unknown kernel spec {type(spec).__name__}")


# ---------------------------------------------------------------------------
# feature-map side
# ---------------------------------------------------------------------------


def feature_vector(spec, x):
    """``phi(x)`` for a FeatureMapKernel (shape (m,))."""
    return feature_matrix(spec, as_path(x, spec.d, spec.T)[None])[0]


def feature_matrix(spec, X):
    """Design matrix ``phi_j(X_i)`` of shape (N, m)."""
    if not isinstance(spec, FeatureMapKernel):
        raise InputError("feature_matrix requires a FeatureMapKernel")
    X = as_paths(X, spec.d, spec.T)
    n = X.shape[0]
    out = np.empty((n, len(spec.features)))
    for i, f in enumerate(spec.features):
        v = np.ones(n)
        for s in range(spec.T):
            v = v * f.step_values(s, X[:, :, s])
        out[:, i] = v
    return out


def step_mean(spec, i, t):
    """``E[phi_{i,t}(X_t)]`` under the standard normal step law."""
    if not isinstance(spec, FeatureMapKernel):
        raise InputError("step_mean requires a FeatureMapKernel")
    return float(spec.features[i].step_mean(t))


def cond_expect_features(spec, prefix, t):
    """``E[phi(X) | first t steps = prefix]`` (shape (m,)).

    Revealed steps contribute their realized factors, future steps their
    Gaussian means; ``t = 0`` returns the vector of feature means.
    """
    pre = np.asarray(prefix, dtype=float).reshape(spec.d, t) if t else np.zeros((spec.d, 0))
    return conditional_feature_matrix(spec, pre[None], t)[0]


def conditional_feature_matrix(spec, prefixes, t):
    """Batched :func:`cond_expect_features`; prefixes (N, d, >= t) -> (N, m)."""
    if not isinstance(spec, FeatureMapKernel):
        raise InputError("conditional_feature_matrix requires a FeatureMapKernel")
    if not 0 <= t <= spec.T:
        raise InputError(f"t must lie in [0, {spec.T}], got {t}")
    pre = np.asarray(prefixes, dtype=float)
    if pre.ndim == 2:
        pre = pre[None]
    n = pre.shape[0]
    out = np.empty((n, len(spec.features)))
    for i, f in enumerate(spec.features):
        v = np.ones(n)
        for s in range(t):
            v = v * f.step_values(s, pre[:, :, s])
        for s in range(t, spec.T):
            v = v * f.step_mean(s)
        out[:, i] = v
    return out
