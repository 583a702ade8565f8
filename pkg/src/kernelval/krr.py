"""Regularized least-squares fitting of payoff functions.

Fits solve the tilted ridge problem on a weighted training sample: with
``f~ = f / sqrt(w)`` and ``k~(x, y) = k(x, y) / sqrt(w(x) w(y))``, the dual
route solves

    ((1/n) K~ + lambda I) g~ = f~,     K~_ij = k~(X_i, X_j),

and the fitted payoff function under the nominal measure is

    f_X(x) = (1/n) sum_j k(x, X_j) g~_j / sqrt(w_j).

The sorted variant groups bitwise-identical paths first (multiplicity
``|I_j|`` enters as a symmetric scaling), the primal variant solves the
``m x m`` normal equations of an explicit feature map.  All three agree on
their overlap and the tests pin that equivalence tightly.

Solves use a dense Cholesky factorization and fail loudly with the
estimated condition number; no silent jitter is ever added.  ``lambda = 0``
is admitted only when the reciprocal condition number exceeds 1e-12.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import kernels
from .errors import CapabilityError, InputError, SolverError
from .kernels import FeatureMapKernel, GaussExpKernel, GaussPolyKernel, MonomialFeature
from .sampling import content_hash

__all__ = [
    "Estimator",
    "fit_dual_unsorted",
    "fit_dual_sorted",
    "fit_primal",
    "fit",
    "predict",
    "normal_equation_residual",
    "regularization_path",
    "estimator_to_json",
    "estimator_from_json",
    "save_estimator",
    "load_estimator",
    "MAX_DUAL_SIZE",
    "RCOND_FLOOR",
]

MAX_DUAL_SIZE = 20_000
RCOND_FLOOR = 1e-12


@dataclass(frozen=True)
class Estimator:
    """Fitted payoff estimator; immutable once constructed.

    ``eval_coef`` is pre-divided so prediction is always
    ``(1/n_train) * k(x, paths) @ eval_coef`` in dual mode and
    ``phi(x) @ primal_coef`` in primal mode.
    """

    mode: str
    kernel: object
    lam: float
    n_train: int
    paths: np.ndarray
    eval_coef: np.ndarray | None = None
    dual_coef: np.ndarray | None = None
    weights: np.ndarray | None = None
    multiplicity: np.ndarray | None = None
    support_index: np.ndarray | None = None
    primal_coef: np.ndarray | None = None
    payoff_id: str = ""
    training_hash: str = ""
    residual: float = field(default=float("nan"), compare=False)

    def __post_init__(self):
        for arr in (self.paths, self.eval_coef, self.dual_coef, self.weights,
                    self.multiplicity, self.support_index, self.primal_coef):
            if arr is not None:
                arr.setflags(write=False)


def _check_fit_inputs(ts, spec, lam):
    if lam < 0:
        raise InputError(f"regularization parameter must be nonnegative, got {lam}")
    if ts.d != spec.d or ts.T != spec.T:
        raise InputError(
            f"training set is ({ts.d}, {ts.T}) but kernel expects ({spec.d}, {spec.T})"
        )
    if np.any(ts.weights <= 0) or not np.all(np.isfinite(ts.weights)):
        raise InputError("sampling weights must be positive and finite")


def _solve_spd(M, rhs, lam, what):
    """Cholesky solve of an SPD system; loud failure, no jitter.

    ``M`` already contains the ridge shift.  For ``lam == 0`` the reciprocal
    condition number is estimated first and the solve refused below
    ``RCOND_FLOOR``.
    """
    try:
        c, low = sla.cho_factor(M, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        ev = sla.eigvalsh(M, subset_by_index=[0, M.shape[0] - 1]) if M.shape[0] > 1 \
            else np.array([M[0, 0], M[0, 0]])
        cond = abs(ev[1] / ev[0]) if ev[0] != 0 else math.inf
        raise SolverError(
            f"{what}: Cholesky factorization failed (matrix not positive definite; "
            f"estimated condition number {cond:.3e})",
            condition_number=cond,
        ) from exc
    if lam == 0.0:
        anorm = np.abs(M).sum(axis=0).max()
        rcond, info = sla.lapack.dpocon(c, anorm, uplo=b"L" if low else b"U")
        if info != 0 or rcond <= RCOND_FLOOR:
            raise SolverError(
                f"{what}: lambda = 0 refused, reciprocal condition number "
                f"{rcond:.3e} <= {RCOND_FLOOR:g}",
                condition_number=1.0 / rcond if rcond > 0 else math.inf,
            )
    return sla.cho_solve((c, low), rhs, check_finite=False)


def _tilted_gram_from_weights(spec, paths, weights):
    """K~ from stored sampling weights (valid for any tilt, incl. mixtures)."""
    K = kernels.gram(spec, paths)
    inv = 1.0 / np.sqrt(weights)
    K *= inv[:, None]
    K *= inv[None, :]
    return K


def fit_dual_unsorted(ts, spec, lam, payoff_id=None):
    """Ridge fit in the dual: one coefficient per training path."""
    _check_fit_inputs(ts, spec, lam)
    if ts.n > MAX_DUAL_SIZE:
        raise CapabilityError(
            f"dual fit refuses n = {ts.n} > {MAX_DUAL_SIZE} (Gram matrix too large); "
            "use the primal route or subsample"
        )
    inv_sqrt_w = 1.0 / np.sqrt(ts.weights)
    M = _tilted_gram_from_weights(spec, ts.paths, ts.weights)
    M /= ts.n
    M[np.diag_indices_from(M)] += lam
    rhs = ts.payoff_values * inv_sqrt_w
    g = _solve_spd(M, rhs, lam, "dual fit")
    res = _relative_residual(M, g, rhs)
    return Estimator(
        mode="dual-unsorted",
        kernel=spec,
        lam=lam,
        n_train=ts.n,
        paths=np.array(ts.paths),
        eval_coef=g * inv_sqrt_w,
        dual_coef=g,
        weights=np.array(ts.weights),
        payoff_id=ts.payoff_id if payoff_id is None else payoff_id,
        training_hash=content_hash(ts),
        residual=res,
    )


def _group_paths(paths):
    """Bitwise-exact duplicate grouping; returns (first_index, inverse, counts)."""
    n = paths.shape[0]
    flat = np.ascontiguousarray(paths.reshape(n, -1))
    as_bits = flat.view(np.uint64)
    _, first, inverse, counts = np.unique(
        as_bits, axis=0, return_index=True, return_inverse=True, return_counts=True
    )
    return first, inverse.reshape(-1), counts


def fit_dual_sorted(ts, spec, lam, payoff_id=None):
    """Dual ridge fit on distinct paths with multiplicity scaling.

    Duplicate paths (bitwise-identical) are merged; the reduced system is
    ``((1/n) K + lambda) g = f`` with ``K_ij = sqrt(|I_i| |I_j|) k~`` and
    ``f_j = sqrt(|I_j|) f~_j``.  Equivalent to the unsorted fit but with one
    row per distinct path.
    """
    _check_fit_inputs(ts, spec, lam)
    first, inverse, counts = _group_paths(ts.paths)
    if first.shape[0] > MAX_DUAL_SIZE:
        raise CapabilityError(
            f"dual fit refuses n = {first.shape[0]} distinct paths > {MAX_DUAL_SIZE}"
        )
    # payoffs and weights are functions of the path, so take first occurrence
    sub_paths = ts.paths[first]
    sub_w = ts.weights[first]
    sub_f = ts.payoff_values[first]
    root_m = np.sqrt(counts.astype(float))
    M = _tilted_gram_from_weights(spec, sub_paths, sub_w)
    M *= root_m[:, None]
    M *= root_m[None, :]
    M /= ts.n
    M[np.diag_indices_from(M)] += lam
    rhs = root_m * sub_f / np.sqrt(sub_w)
    g = _solve_spd(M, rhs, lam, "dual fit (sorted)")
    res = _relative_residual(M, g, rhs)
    return Estimator(
        mode="dual-sorted",
        kernel=spec,
        lam=lam,
        n_train=ts.n,
        paths=np.array(sub_paths),
        eval_coef=root_m * g / np.sqrt(sub_w),
        dual_coef=g,
        weights=np.array(sub_w),
        multiplicity=counts.astype(np.int64),
        support_index=first.astype(np.int64),
        payoff_id=ts.payoff_id if payoff_id is None else payoff_id,
        training_hash=content_hash(ts),
        residual=res,
    )


def fit_primal(ts, spec, lam, payoff_id=None):
    """Ridge fit in an explicit feature basis (m x m normal equations)."""
    if not isinstance(spec, FeatureMapKernel):
        raise InputError("primal fitting requires a FeatureMapKernel")
    _check_fit_inputs(ts, spec, lam)
    inv_sqrt_w = 1.0 / np.sqrt(ts.weights)
    V = kernels.feature_matrix(spec, ts.paths) * inv_sqrt_w[:, None]
    M = V.T @ V / ts.n
    M[np.diag_indices_from(M)] += lam
    rhs = V.T @ (ts.payoff_values * inv_sqrt_w) / ts.n
    h = _solve_spd(M, rhs, lam, "primal fit")
    res = _relative_residual(M, h, rhs)
    return Estimator(
        mode="primal",
        kernel=spec,
        lam=lam,
        n_train=ts.n,
        paths=np.array(ts.paths),
        primal_coef=h,
        weights=np.array(ts.weights),
        payoff_id=ts.payoff_id if payoff_id is None else payoff_id,
        training_hash=content_hash(ts),
        residual=res,
    )


def fit(ts, spec, lam, mode="dual-unsorted", payoff_id=None):
    """Dispatch to one of the three fitting routes by name."""
    table = {
        "dual-unsorted": fit_dual_unsorted,
        "dual-sorted": fit_dual_sorted,
        "primal": fit_primal,
    }
    if mode not in table:
        raise InputError(f"unknown fit mode {mode!r}; known: {sorted(table)}")
    return table[mode](ts, spec, lam, payoff_id=payoff_id)


def predict(est, x):
    """Fitted payoff value(s) at new paths; scalar in, scalar out."""
    a = np.asarray(x, dtype=float)
    single = a.ndim == 1 or (a.ndim == 2 and a.shape == (est.kernel.d, est.kernel.T))
    X = kernels.as_paths(a, est.kernel.d, est.kernel.T)
    if est.mode == "primal":
        vals = kernels.feature_matrix(est.kernel, X) @ est.primal_coef
    else:
        vals = kernels.gram(est.kernel, X, est.paths) @ est.eval_coef / est.n_train
    return float(vals[0]) if single else vals


def _relative_residual(M, sol, rhs):
    num = np.linalg.norm(M @ sol - rhs)
    den = np.linalg.norm(rhs)
    return float(num / den) if den > 0 else float(num)


def normal_equation_residual(est, ts):
    """Relative residual of the fitted system, rebuilt from the training set."""
    if est.mode == "dual-unsorted":
        M = _tilted_gram_from_weights(est.kernel, ts.paths, ts.weights)
        M /= ts.n
        M[np.diag_indices_from(M)] += est.lam
        rhs = ts.payoff_values / np.sqrt(ts.weights)
        return _relative_residual(M, est.dual_coef, rhs)
    if est.mode == "dual-sorted":
        first, _, counts = _group_paths(ts.paths)
        root_m = np.sqrt(counts.astype(float))
        M = _tilted_gram_from_weights(est.kernel, ts.paths[first], ts.weights[first])
        M *= root_m[:, None]
        M *= root_m[None, :]
        M /= ts.n
        M[np.diag_indices_from(M)] += est.lam
        rhs = root_m * ts.payoff_values[first] / np.sqrt(ts.weights[first])
        return _relative_residual(M, est.dual_coef, rhs)
    if est.mode == "primal":
        V = kernels.feature_matrix(est.kernel, ts.paths) / np.sqrt(ts.weights)[:, None]
        M = V.T @ V / ts.n
        M[np.diag_indices_from(M)] += est.lam
        rhs = V.T @ (ts.payoff_values / np.sqrt(ts.weights)) / ts.n
        return _relative_residual(M, est.primal_coef, rhs)
    raise InputError(f"unknown estimator mode {est.mode!r}")


def regularization_path(ts, spec, lambdas, mode="primal", eval_paths=None):
    """Fits along a ridge path and measures drift from the ``lambda = 0`` fit.

    Returns ``(estimators, errors)`` where ``errors[i]`` is the RMS gap
    between fit ``i`` and the unregularized fit on the evaluation paths
    (training paths by default).  Requires the unregularized problem to be
    well conditioned, so this is a finite-dimensional (primal) tool first.
    """
    lambdas = [float(l) for l in lambdas]
    if any(l < 0 for l in lambdas):
        raise InputError("regularization parameters must be nonnegative")
    base = fit(ts, spec, 0.0, mode=mode)
    grid = ts.paths if eval_paths is None else eval_paths
    base_vals = predict(base, grid)
    ests, errs = [], []
    for l in lambdas:
        e = fit(ts, spec, l, mode=mode)
        ests.append(e)
        errs.append(float(np.sqrt(np.mean((predict(e, grid) - base_vals) ** 2))))
    return ests, errs


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _kernel_to_doc(spec):
    if isinstance(spec, GaussExpKernel):
        return {"family": "gauss-exp", "alpha": spec.alpha, "beta": spec.beta,
                "d": spec.d, "T": spec.T, "gamma": spec.gamma}
    if isinstance(spec, GaussPolyKernel):
        return {"family": "gauss-poly", "alpha": spec.alpha, "beta": spec.beta,
                "d": spec.d, "T": spec.T, "gamma": spec.gamma}
    if isinstance(spec, FeatureMapKernel):
        return {
            "family": "feature-map",
            "d": spec.d,
            "T": spec.T,
            "gamma": spec.gamma,
            "features": [
                {"powers": [list(p) for p in f.powers], "coef": f.coef}
                for f in spec.features
            ],
        }
    raise InputError(f"cannot serialize kernel of type {type(spec).__name__}")


def _kernel_from_doc(doc):
    fam = doc.get("family")
    if fam == "gauss-exp":
        return GaussExpKernel(alpha=doc["alpha"], beta=doc["beta"], d=doc["d"],
                              T=doc["T"], gamma=doc["gamma"])
    if fam == "gauss-poly":
        return GaussPolyKernel(alpha=doc["alpha"], beta=int(doc["beta"]), d=doc["d"],
                               T=doc["T"], gamma=doc["gamma"])
    if fam == "feature-map":
        feats = tuple(
            MonomialFeature(powers=tuple(tuple(int(k) for k in p) for p in f["powers"]),
                            coef=float(f["coef"]))
            for f in doc["features"]
        )
        return FeatureMapKernel(features=feats, d=doc["d"], T=doc["T"],
                                gamma=doc["gamma"])
    raise InputError(f"unknown kernel family {fam!r} in estimator document")


def _arr(a):
    return None if a is None else [float(v) for v in np.asarray(a).reshape(-1)]


def estimator_to_json(est):
    """Binary-free JSON document; training paths travel via the CSV hash."""
    doc = {
        "mode": est.mode,
        "lambda": est.lam,
        "n_train": est.n_train,
        "payoff_id": est.payoff_id,
        "kernel": _kernel_to_doc(est.kernel),
        "training_hash": est.training_hash,
        "coefficients": {
            "eval_coef": _arr(est.eval_coef),
            "dual_coef": _arr(est.dual_coef),
            "weights": _arr(est.weights),
            "multiplicity": None if est.multiplicity is None
            else [int(v) for v in est.multiplicity],
            "support_index": None if est.support_index is None
            else [int(v) for v in est.support_index],
            "primal_coef": _arr(est.primal_coef),
        },
        "residual": est.residual,
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def estimator_from_json(text, ts):
    """Rebuild an estimator from its JSON document plus the training set.

    The training set's content hash must match the document; support paths
    are taken from the set (via the stored support index for sorted fits).
    """
    doc = json.loads(text)
    h = content_hash(ts)
    if doc["training_hash"] != h:
        raise InputError(
            "training-set hash mismatch: document was fitted on different data"
        )
    co = doc["coefficients"]
    sup = co["support_index"]
    paths = ts.paths if sup is None else ts.paths[np.asarray(sup, dtype=int)]

    def arr(v):
        return None if v is None else np.asarray(v, dtype=float)

    return Estimator(
        mode=doc["mode"],
        kernel=_kernel_from_doc(doc["kernel"]),
        lam=float(doc["lambda"]),
        n_train=int(doc["n_train"]),
        paths=np.array(paths),
        eval_coef=arr(co["eval_coef"]),
        dual_coef=arr(co["dual_coef"]),
        weights=arr(co["weights"]),
        multiplicity=None if co["multiplicity"] is None
        else np.asarray(co["multiplicity"], dtype=np.int64),
        support_index=None if sup is None else np.asarray(sup, dtype=np.int64),
        primal_coef=arr(co["primal_coef"]),
        payoff_id=doc["payoff_id"],
        training_hash=doc["training_hash"],
        residual=float(doc.get("residual", float("nan"))),
    )


def save_estimator(est, path):
    with open(path, "w") as fh:
        fh.write(estimator_to_json(est))


def load_estimator(path, ts):
    with open(path) as fh:
        return estimator_from_json(fh.read(), ts)
