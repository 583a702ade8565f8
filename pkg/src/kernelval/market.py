"""Discrete Black-Scholes market and payoff functionals.

The stock follows ``S_t = S_{t-1} exp(sigma X_t - sigma^2 / 2)`` for iid
standard normal increments ``X_t`` (d = 1), so the discounted price is a
martingale under the nominal measure and the cumulative cash flow of a
European-style claim is a single payoff at maturity.  All payoffs are
written on the discounted price; ``e^{r t} S_t`` is the nominal price and
the running maximum ``M_t = max_{0 <= s <= t} e^{r s} S_s`` includes the
starting point.

Ground truth for the value process comes in two strengths:

* :func:`ground_truth_value` - conditional Monte Carlo with a configurable
  inner budget (the reference protocol);
* :func:`value_quadrature` - deterministic tensor quadrature over the
  remaining Gaussian steps, exact to roughly 1e-7, used where MC noise at
  reasonable budgets would swamp the quantity being measured.

Both are cross-checked against each other in the test suite.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import CapabilityError, InputError, SolverError
from .sampling import derive_rng

__all__ = [
    "BSConfig",
    "PAYOFF_IDS",
    "stock_path",
    "payoff",
    "payoff_from_stocks",
    "payoff_function",
    "ground_truth_value",
    "value_quadrature",
    "GroundTruth",
    "NestedMC",
    "nested_mc_estimate",
    "var_es",
    "hedge_ratio",
]

PAYOFF_IDS = (
    "european_put",
    "asian_put",
    "up_and_out_call",
    "european_call",
    "asian_call",
    "lookback_float",
)


@dataclass(frozen=True)
class BSConfig:
    """Market parameters; ``T`` is the number of time steps."""

    s0: float = 1.0
    sigma: float = 0.2
    rate: float = 0.0
    T: int = 2
    strike: float = 1.0
    barrier: float = 2.24

    def __post_init__(self):
        if self.s0 <= 0 or self.sigma <= 0:
            raise InputError("s0 and sigma must be positive")
        if self.T < 1:
            raise InputError("need at least one time step")


def _increments(x, T):
    """Coerce noise input to shape (N, T)."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim == 3:
        if a.shape[1] != 1:
            raise InputError("market paths are one-dimensional (d == 1)")
        a = a[:, 0, :]
    if a.ndim != 2 or a.shape[1] != T:
        raise InputError(f"expected noise of shape (N, {T}), got {np.asarray(x).shape}")
    return a


def stock_path(cfg, x):
    """Discounted stock path ``(S_0, ..., S_T)`` from noise increments.

    Accepts ``(T,)``, ``(N, T)`` or ``(N, 1, T)``; returns ``(T+1,)`` or
    ``(N, T+1)`` accordingly.
    """
    single = np.asarray(x).ndim == 1
    a = _increments(x, cfg.T)
    log_steps = cfg.sigma * a - 0.5 * cfg.sigma**2
    logs = np.concatenate([np.zeros((a.shape[0], 1)), np.cumsum(log_steps, axis=1)], axis=1)
    S = cfg.s0 * np.exp(logs)
    return S[0] if single else S


def _nominal(cfg, S):
    """Nominal (undiscounted) prices e^{rt} S_t along the path."""
    t = np.arange(cfg.T + 1)
    return S * np.exp(cfg.rate * t)


def payoff_from_stocks(cfg, payoff_id, S):
    """Payoff from discounted stock paths ``S`` of shape ``(..., T+1)``."""
    S = np.asarray(S, dtype=float)
    if S.shape[-1] != cfg.T + 1:
        raise InputError(f"stock paths must have {cfg.T + 1} columns, got {S.shape[-1]}")
    disc_T = math.exp(-cfg.rate * cfg.T)
    A = cfg.strike
    if payoff_id == "european_put":
        return np.maximum(disc_T * A - S[..., -1], 0.0)
    if payoff_id == "european_call":
        return np.maximum(S[..., -1] - disc_T * A, 0.0)
    if payoff_id in ("asian_put", "asian_call"):
        nom = _nominal(cfg, S)
        avg = nom[..., 1:].mean(axis=-1)
        inner = (A - avg) if payoff_id == "asian_put" else (avg - A)
        return disc_T * np.maximum(inner, 0.0)
    if payoff_id == "up_and_out_call":
        nom = _nominal(cfg, S)
        alive = nom.max(axis=-1) <= cfg.barrier
        return np.maximum(S[..., -1] - disc_T * A, 0.0) * alive
    if payoff_id == "lookback_float":
        nom = _nominal(cfg, S)
        return disc_T * nom.max(axis=-1) - S[..., -1]
    raise InputError(f"unknown payoff id {payoff_id!r}; known: {PAYOFF_IDS}")


def payoff(cfg, payoff_id, x):
    """Payoff of one or many noise paths; scalar in, scalar out."""
    single = np.asarray(x).ndim == 1
    vals = payoff_from_stocks(cfg, payoff_id, stock_path(cfg, _increments(x, cfg.T)))
    return float(vals[0]) if single else vals


def payoff_function(cfg, payoff_id):
    """Vectorized closure ``paths -> values`` for use as a payoff oracle."""
    if payoff_id not in PAYOFF_IDS:
        raise InputError(f"unknown payoff id {payoff_id!r}; known: {PAYOFF_IDS}")
    return lambda x: payoff(cfg, payoff_id, x)


# ---------------------------------------------------------------------------
# ground truth
# ---------------------------------------------------------------------------


def _prefix_array(x_prefix, t):
    if t == 0:
        return np.zeros(0)
    a = np.asarray(x_prefix, dtype=float).reshape(-1)
    if a.shape[0] < t:
        raise InputError(f"prefix has {a.shape[0]} steps but t={t}")
    return a[:t]


def ground_truth_value(cfg, payoff_id, x_prefix, t, n_inner, seed=0, stream=("gt",)):
    """Conditional Monte Carlo value ``V_t`` given the first ``t`` increments.

    ``t = T`` returns the payoff itself (no simulation); ``t = 0`` is a plain
    MC mean over full paths.  Inner tails are standard normal under the
    nominal measure, from a Philox stream derived from ``seed`` and the
    stream tags.
    """
    if not 0 <= t <= cfg.T:
        raise InputError(f"t must lie in [0, {cfg.T}], got {t}")
    pre = _prefix_array(x_prefix, t)
    if t == cfg.T:
        return payoff(cfg, payoff_id, pre)
    if n_inner < 1:
        raise InputError("n_inner must be positive")
    rng = derive_rng(seed, *stream)
    tails = rng.standard_normal((n_inner, cfg.T - t))
    full = np.concatenate([np.broadcast_to(pre, (n_inner, t)), tails], axis=1)
    return float(payoff(cfg, payoff_id, full).mean())


def value_quadrature(cfg, payoff_id, x_prefix, t, n_nodes=2049, half_width=8.5):
    """Deterministic conditional value by trapezoid quadrature.

    Integrates the payoff against the standard normal density of the
    remaining increments on a tensor grid over ``[-half_width, half_width]``.
    Supports one or two remaining steps (the experiment configuration needs
    no more); use :func:`ground_truth_value` beyond that.
    """
    if not 0 <= t <= cfg.T:
        raise InputError(f"t must lie in [0, {cfg.T}], got {t}")
    pre = _prefix_array(x_prefix, t)
    k = cfg.T - t
    if k == 0:
        return payoff(cfg, payoff_id, pre)
    if k > 2:
        raise CapabilityError("quadrature ground truth supports at most two remaining steps")
    if k == 1:
        return float(_quad_one_step(cfg, payoff_id, pre[None, :], n_nodes, half_width)[0])
    z, wq = _normal_rule(n_nodes, half_width)
    # two remaining steps: integrate the one-step values over the first of them
    prefixes = np.concatenate(
        [np.broadcast_to(pre, (n_nodes, t)), z[:, None]], axis=1
    )
    inner = _quad_one_step(cfg, payoff_id, prefixes, n_nodes, half_width)
    return float(inner @ wq)


def _normal_rule(n_nodes, half_width):
    """Trapezoid nodes and standard normal weights on [-hw, hw]."""
    z = np.linspace(-half_width, half_width, n_nodes)
    dens = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    w = np.full(n_nodes, z[1] - z[0])
    w[0] *= 0.5
    w[-1] *= 0.5
    return z, dens * w


def _quad_one_step(cfg, payoff_id, prefixes, n_nodes, half_width, block=512):
    """Vectorized one-remaining-step quadrature; prefixes (N, T-1) -> (N,)."""
    n = prefixes.shape[0]
    z, wq = _normal_rule(n_nodes, half_width)
    out = np.empty(n)
    for lo in range(0, n, block):
        pre = prefixes[lo : lo + block]
        m = pre.shape[0]
        full = np.concatenate(
            [np.repeat(pre, n_nodes, axis=0), np.tile(z, m)[:, None]], axis=1
        )
        vals = payoff(cfg, payoff_id, full).reshape(m, n_nodes)
        out[lo : lo + block] = vals @ wq
    return out


class GroundTruth:
    """Value-process ground truth for every time step of a two-step market.

    ``method`` selects deterministic quadrature (default; noise-free at the
    resolutions used here) or conditional MC at ``n_inner`` per evaluation.
    Computed values are cached; the MC variant persists to the CSV layout
    ``t, x1, value, n_inner, seed``.
    """

    def __init__(self, cfg, payoff_id, method="quadrature", n_inner=10_000, seed=0,
                 n_nodes=2049):
        if payoff_id not in PAYOFF_IDS:
            raise InputError(f"unknown payoff id {payoff_id!r}")
        if method not in ("quadrature", "mc"):
            raise InputError(f"method must be 'quadrature' or 'mc', got {method!r}")
        self.cfg = cfg
        self.payoff_id = payoff_id
        self.method = method
        self.n_inner = int(n_inner)
        self.seed = int(seed)
        self.n_nodes = int(n_nodes)
        self._v0 = None
        self._v1_cache = {}

    def v0(self):
        if self._v0 is None:
            if self.method == "quadrature":
                self._v0 = value_quadrature(
                    self.cfg, self.payoff_id, (), 0, n_nodes=self.n_nodes
                )
            else:
                self._v0 = ground_truth_value(
                    self.cfg, self.payoff_id, (), 0, self.n_inner,
                    seed=self.seed, stream=("gt", self.payoff_id, 0),
                )
        return self._v0

    def v1(self, x1):
        """Conditional values after the first increment; vectorized."""
        if self.cfg.T < 1:
            raise InputError("v1 needs at least one step")
        arr = np.atleast_1d(np.asarray(x1, dtype=float))
        out = np.empty(arr.shape[0])
        if self.method == "quadrature" and self.cfg.T == 2:
            missing = [i for i, v in enumerate(arr) if float(v) not in self._v1_cache]
            if missing:
                vals = _quad_one_step(
                    self.cfg, self.payoff_id, arr[missing][:, None], self.n_nodes, 8.5
                )
                for i, v in zip(missing, vals):
                    self._v1_cache[float(arr[i])] = float(v)
            for i, v in enumerate(arr):
                out[i] = self._v1_cache[float(v)]
        else:
            for i, v in enumerate(arr):
                key = float(v)
                if key not in self._v1_cache:
                    if self.method == "quadrature":
                        val = value_quadrature(
                            self.cfg, self.payoff_id, [key], 1, n_nodes=self.n_nodes
                        )
                    else:
                        val = ground_truth_value(
                            self.cfg, self.payoff_id, [key], 1, self.n_inner,
                            seed=self.seed, stream=("gt", self.payoff_id, 1, i),
                        )
                    self._v1_cache[key] = float(val)
                out[i] = self._v1_cache[key]
        return out if np.asarray(x1).ndim else float(out[0])

    def v_series(self, paths):
        """True value process along noise paths: shape (N, T+1).

        Column 0 is the unconditional value, the last column the payoff.
        Intermediate columns require T == 2 (the experiment setting).
        """
        a = _increments(paths, self.cfg.T)
        n = a.shape[0]
        out = np.empty((n, self.cfg.T + 1))
        out[:, 0] = self.v0()
        out[:, -1] = payoff(self.cfg, self.payoff_id, a)
        if self.cfg.T == 2:
            out[:, 1] = self.v1(a[:, 0])
        elif self.cfg.T > 2:
            raise CapabilityError("intermediate ground truth implemented for T == 2 only")
        return out

    # -- CSV cache -----------------------------------------------------

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "x1", "value", "n_inner", "seed"])
        budget = self.n_inner if self.method == "mc" else 0
        if self._v0 is not None:
            w.writerow(["0", "", repr(float(self._v0)), str(budget), str(self.seed)])
        for x1 in sorted(self._v1_cache):
            w.writerow(["1", repr(x1), repr(self._v1_cache[x1]), str(budget), str(self.seed)])
        return buf.getvalue()

    def load_csv(self, text):
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if header != ["t", "x1", "value", "n_inner", "seed"]:
            raise InputError(f"unrecognized ground-truth cache header {header}")
        for row in reader:
            if not row:
                continue
            t = int(row[0])
            if t == 0:
                self._v0 = float(row[2])
            elif t == 1:
                self._v1_cache[float(row[1])] = float(row[2])
            else:
                raise InputError(f"cache rows must have t in {{0, 1}}, got {t}")
        return self

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_csv())

    def load(self, path):
        with open(path) as fh:
            return self.load_csv(fh.read())


# ---------------------------------------------------------------------------
# nested Monte Carlo baseline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NestedMC:
    """Nested-MC estimate: grand-mean value and per-outer-point conditionals."""

    v0_hat: float
    outer_x1: np.ndarray
    v1_hat: np.ndarray
    n_payoff_evals: int


def nested_mc_estimate(cfg, payoff_id, n_outer, n_inner, seed=0, stream=("nested",)):
    """Naive two-level Monte Carlo under the nominal measure.

    Draws ``n_outer`` first increments; from each, ``n_inner`` independent
    tails.  ``v1_hat[i]`` is the inner mean at outer point ``i`` and
    ``v0_hat`` the grand mean over all ``n_outer * n_inner`` payoffs.  The
    total budget is exactly ``n_outer * n_inner`` payoff evaluations.
    """
    if n_outer < 1 or n_inner < 1:
        raise InputError("n_outer and n_inner must be positive")
    rng = derive_rng(seed, *stream)
    x1 = rng.standard_normal(n_outer)
    tails = rng.standard_normal((n_outer, n_inner, cfg.T - 1))
    full = np.concatenate(
        [np.repeat(x1, n_inner).reshape(n_outer, n_inner, 1), tails], axis=2
    ).reshape(n_outer * n_inner, cfg.T)
    vals = payoff(cfg, payoff_id, full).reshape(n_outer, n_inner)
    v1 = vals.mean(axis=1)
    return NestedMC(
        v0_hat=float(vals.mean()),
        outer_x1=x1,
        v1_hat=v1,
        n_payoff_evals=n_outer * n_inner,
    )


# ---------------------------------------------------------------------------
# risk measures and hedging
# ---------------------------------------------------------------------------


def var_es(losses, level):
    """Value-at-risk and expected shortfall of a loss sample.

    VaR is the order statistic at index ``ceil(level * N)`` (higher
    convention); ES is the mean of the tail from that order statistic on.
    """
    a = np.sort(np.asarray(losses, dtype=float).reshape(-1))
    if a.size == 0:
        raise InputError("loss sample is empty")
    if not 0.0 < level < 1.0:
        raise InputError(f"level must lie in (0, 1), got {level}")
    k = max(1, math.ceil(level * a.size))
    var = float(a[k - 1])
    es = float(a[k - 1 :].mean())
    return var, es


def hedge_ratio(delta_g, delta_v):
    """Least-squares hedge of value moves ``delta_v`` with factor moves ``delta_g``.

    ``delta_g`` has shape (N,) or (N, k); returns a scalar or (k,) vector
    minimizing ``E[(delta_v - psi . delta_g)^2]``.
    """
    G = np.asarray(delta_g, dtype=float)
    v = np.asarray(delta_v, dtype=float).reshape(-1)
    single = G.ndim == 1
    if single:
        G = G[:, None]
    if G.shape[0] != v.shape[0]:
        raise InputError("delta_g and delta_v must have the same number of rows")
    A = G.T @ G
    b = G.T @ v
    try:
        psi = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise SolverError(
            f"hedge normal equations are singular: {exc}",
            condition_number=float(np.linalg.cond(A)),
        ) from exc
    return float(psi[0]) if single else psi
