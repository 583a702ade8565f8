"""Closed-form evaluation of the learned value process and its error metrics.

A fitted estimator represents a payoff function ``f_X``; its value process is
``Vhat_t = E[f_X(X) | X_1..X_t]``.  Because the kernel factorizes over time
steps, the conditional expectation of every kernel section is available in
closed form, so ``Vhat_t`` along a path costs one conditional-Gram row per
time step and no inner simulation at all.

Error metrics mirror the experiment layout: relative L2 payoff error on a
fresh validation sample, per-time relative L1 value-process error against a
high-budget ground truth, and the repeat pipeline that reports means and
standard deviations over independent training samples.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DataError, InputError
from .sampling import MeasureSpec, build_training_set, derive_rng, draw_paths

__all__ = [
    "ValueSeries",
    "ErrorReport",
    "value_series",
    "value_series_many",
    "value_at_zero",
    "payoff_errors",
    "payoff_l2_error",
    "value_process_error",
    "repeat_experiment",
    "martingale_gap",
    "doob_check",
    "error_report_to_csv",
    "error_reports_to_csv",
    "trajectory_csv",
]


@dataclass(frozen=True)
class ValueSeries:
    """Value process of one evaluation path: values[t] = Vhat_t."""

    values: np.ndarray
    path: np.ndarray

    def __post_init__(self):
        self.values.setflags(write=False)
        self.path.setflags(write=False)
        if not np.all(np.isfinite(self.values)):
            raise DataError("value series contains non-finite entries")


@dataclass(frozen=True)
class ErrorReport:
    """Per-time relative L1 errors of a value-process estimator.

    ``mean_pct[t]`` and ``std_pct[t]`` are percentages of the time-0 value,
    aggregated over training repetitions.  ``times`` may omit t values for
    which the method produces no estimate.
    """

    payoff_id: str
    estimator: str
    times: tuple
    mean_pct: np.ndarray
    std_pct: np.ndarray
    l2_rel: float = float("nan")
    n_payoff_evals: int = 0

    def __post_init__(self):
        self.mean_pct.setflags(write=False)
        self.std_pct.setflags(write=False)
        if np.any(self.mean_pct < 0) or np.any(self.std_pct < 0):
            raise DataError("error report entries must be nonnegative")


def _dual_series(est, X, block):
    spec = est.kernel
    n, out = X.shape[0], np.empty((X.shape[0], spec.T + 1))
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        chunk = X[lo:hi]
        for t in range(spec.T + 1):
            G = kernels.conditional_gram(spec, chunk[:, :, :t], est.paths, t)
            out[lo:hi, t] = G @ est.eval_coef / est.n_train
    return out


def _primal_series(est, X, block):
    spec = est.kernel
    n, out = X.shape[0], np.empty((X.shape[0], spec.T + 1))
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        chunk = X[lo:hi]
        for t in range(spec.T + 1):
            F = kernels.conditional_feature_matrix(spec, chunk[:, :, :t], t)
            out[lo:hi, t] = F @ est.primal_coef
    return out


def value_series_many(est, X, block=2048):
    """Vhat_t for a batch of paths; returns shape (N, T+1)."""
    X = kernels.as_paths(X, est.kernel.d, est.kernel.T)
    if est.mode == "primal":
        return _primal_series(est, X, block)
    return _dual_series(est, X, block)


def value_series(est, x):
    """Value process along one path, terminal entry equals predict(est, x)."""
    p = kernels.as_path(x, est.kernel.d, est.kernel.T)
    vals = value_series_many(est, p[None])[0]
    return ValueSeries(values=vals, path=np.array(p))


def value_at_zero(est, order="forward"):
    """Time-0 value as an explicit weighted sum; reduction order selectable.

    The two orders must agree to reduction-roundoff levels; exposing both
    turns silent accumulation bugs into a checkable identity.
    """
    if order not in ("forward", "reverse"):
        raise InputError(f"unknown reduction order {order!r}")
    spec = est.kernel
    if est.mode == "primal":
        means = kernels.cond_expect_features(spec, np.zeros((spec.d, 0)), 0)
        terms = means * est.primal_coef
    else:
        G = kernels.conditional_gram(spec, np.zeros((1, spec.d, 0)), est.paths, 0)
        terms = G[0] * est.eval_coef / est.n_train
    if order == "reverse":
        terms = terms[::-1]
    return float(np.add.reduce(terms))


def payoff_errors(est, paths, values):
    """L2 gap between fitted and true payoff on a given sample.

    Returns absolute and relative gaps plus delta-method standard errors of
    the absolute gap, for use in one-sided bound checks.
    """
    paths = kernels.as_paths(paths, est.kernel.d, est.kernel.T)
    from .krr import predict

    pred = predict(est, paths)
    sq = (values - pred) ** 2
    mean_sq = float(np.mean(sq))
    denom_sq = float(np.mean(values**2))
    if denom_sq == 0.0:
        raise DataError("payoff norm estimate is zero; relative error undefined")
    abs_l2 = math.sqrt(mean_sq)
    se_mean_sq = float(np.std(sq, ddof=1)) / math.sqrt(len(sq)) if len(sq) > 1 else 0.0
    se_abs = se_mean_sq / (2 * abs_l2) if abs_l2 > 0 else math.sqrt(se_mean_sq)
    return {
        "abs": abs_l2,
        "rel": abs_l2 / math.sqrt(denom_sq),
        "se_abs": se_abs,
        "payoff_norm": math.sqrt(denom_sq),
        "n": len(sq),
    }


def payoff_l2_error(est, cfg, payoff_id, n_val, seed=None, stream=("validation",)):
    """Relative L2 payoff error on n_val fresh nominal-measure paths."""
    from .market import payoff_function

    if n_val < 1:
        raise InputError("n_val must be at least 1")
    nominal = MeasureSpec(gamma=0.0, d=est.kernel.d, T=est.kernel.T,
                          seed=0 if seed is None else seed)
    X = draw_paths(nominal, n_val, stream=stream, seed=seed)
    f = payoff_function(cfg, payoff_id)
    return payoff_errors(est, X, f(X))["rel"]


def value_process_error(est, gt, test_paths, block=2048):
    """Mean |V_t - Vhat_t| / V_0 per time step over the test paths."""
    X = kernels.as_paths(test_paths, est.kernel.d, est.kernel.T)
    truth = gt.v_series(X)
    v0 = truth[0, 0]
    if v0 == 0.0:
        raise DataError("ground-truth time-0 value is zero; relative error undefined")
    approx = value_series_many(est, X, block=block)
    # pairwise-stable reduction: np.mean sums pairwise for float64 arrays
    return np.mean(np.abs(truth - approx), axis=0) / v0


def martingale_gap(est, n=100_000, seed=0, stream=("martingale",), block=20_000):
    """Tower check at the root: MC mean of Vhat_1 against the exact Vhat_0.

    Returns (v0, mc_mean, se); a correct conditional-expectation stack keeps
    |v0 - mc_mean| within a few se.
    """
    spec = est.kernel
    rng = derive_rng(seed, *stream)
    x1 = rng.standard_normal((n, spec.d, 1))
    v0 = value_at_zero(est)
    vals = np.empty(n)
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        if est.mode == "primal":
            F = kernels.conditional_feature_matrix(spec, x1[lo:hi], 1)
            vals[lo:hi] = F @ est.primal_coef
        else:
            G = kernels.conditional_gram(spec, x1[lo:hi], est.paths, 1)
            vals[lo:hi] = G @ est.eval_coef / est.n_train
    se = float(np.std(vals, ddof=1)) / math.sqrt(n)
    return v0, float(np.mean(vals)), se


def doob_check(est, gt, test_paths, cfg=None, payoff_id=None, payoff_values=None):
    """Maximal-inequality consequence: half the L2 norm of the running maximum
    of |V_t - Vhat_t| must not exceed the terminal L2 payoff gap.

    Both sides are MC estimates on the same test paths; returns a dict with
    the two sides and their combined standard error.
    """
    X = kernels.as_paths(test_paths, est.kernel.d, est.kernel.T)
    truth = gt.v_series(X)
    approx = value_series_many(est, X)
    run_max = np.max(np.abs(truth - approx), axis=1)
    m2 = float(np.mean(run_max**2))
    lhs = 0.5 * math.sqrt(m2)
    se_m2 = float(np.std(run_max**2, ddof=1)) / math.sqrt(len(run_max))
    se_lhs = 0.5 * se_m2 / (2 * math.sqrt(m2)) if m2 > 0 else 0.0
    if payoff_values is None:
        from .market import payoff_function

        payoff_values = payoff_function(cfg, payoff_id)(X)
    gap = payoff_errors(est, X, payoff_values)
    rhs, se_rhs = gap["abs"], gap["se_abs"]
    return {
        "lhs": lhs,
        "rhs": rhs,
        "se": math.sqrt(se_lhs**2 + se_rhs**2),
        "holds_3se": lhs <= rhs + 3 * math.sqrt(se_lhs**2 + se_rhs**2),
    }


def repeat_experiment(cfg, payoff_id, spec, lam, sampler, n_train, test_paths, gt,
                      n_repeats=10, n_val=500, master_seed=0, mode="dual-unsorted",
                      return_fits=False):
    """Full error pipeline over independent training samples.

    Per repeat: draw a training sample from ``sampler``, fit, measure the
    value-process error on the shared test paths and the payoff L2 error on a
    fresh validation sample.  Reports per-time mean and standard deviation as
    percentages of the ground-truth time-0 value.
    """
    from .krr import fit
    from .market import payoff_function

    if n_repeats < 1:
        raise InputError("n_repeats must be at least 1")
    f = payoff_function(cfg, payoff_id)
    per_t, l2s, evals, fits = [], [], 0, []
    for r in range(n_repeats):
        ts = build_training_set(sampler, f, n_train, payoff_id,
                                stream=("repeat", r, "train"), seed=master_seed)
        est = fit(ts, spec, lam, mode=mode)
        per_t.append(value_process_error(est, gt, test_paths))
        if n_val > 0:
            l2s.append(payoff_l2_error(est, cfg, payoff_id, n_val, seed=master_seed,
                                       stream=("repeat", r, "validation")))
        evals += ts.n_payoff_evals + n_val
        if return_fits:
            fits.append(est)
    arr = 100.0 * np.asarray(per_t)
    report = ErrorReport(
        payoff_id=payoff_id,
        estimator="kernel",
        times=tuple(range(spec.T + 1)),
        mean_pct=arr.mean(axis=0),
        std_pct=arr.std(axis=0, ddof=1) if n_repeats > 1 else np.zeros(arr.shape[1]),
        l2_rel=float(np.mean(l2s)) if l2s else float("nan"),
        n_payoff_evals=evals,
    )
    return (report, fits) if return_fits else report


# ---------------------------------------------------------------------------
# CSV serialization
# ---------------------------------------------------------------------------


def error_reports_to_csv(reports):
    """Rows `payoff, estimator, t, mean_pct, std_pct`, one per (report, t)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["payoff", "estimator", "t", "mean_pct", "std_pct"])
    for rep in reports:
        for i, t in enumerate(rep.times):
            w.writerow([rep.payoff_id, rep.estimator, t,
                        repr(float(rep.mean_pct[i])), repr(float(rep.std_pct[i]))])
    return buf.getvalue()


def error_report_to_csv(report):
    return error_reports_to_csv([report])


def trajectory_csv(est, gt, test_paths, block=2048):
    """Per-path relative value gaps: rows `trajectory_id, t, (V_t - Vhat_t)/V0`."""
    X = kernels.as_paths(test_paths, est.kernel.d, est.kernel.T)
    truth = gt.v_series(X)
    approx = value_series_many(est, X, block=block)
    rel = (truth - approx) / truth[0, 0]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trajectory_id", "t", "rel_gap"])
    for i in range(rel.shape[0]):
        for t in range(rel.shape[1]):
            w.writerow([i, t, repr(float(rel[i, t]))])
    return buf.getvalue()
