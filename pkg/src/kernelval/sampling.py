"""Path simulation under importance-sampling measures.

Training paths are drawn not from the nominal white-noise measure (iid
standard normal entries) but from a tilted measure chosen to control the
kernel's diagonal.  Two samplers are provided:

* a Gaussian tilt with parameter ``gamma < 1/2``: every entry becomes
  ``N(0, 1/(1 - 2 gamma))``, with Radon-Nikodym weight
  ``w(x) = (1 - 2 gamma)^(dT/2) exp(gamma ||x||^2)``;
* a mixture sampler for feature-map kernels whose weight is proportional to
  the squared kernel diagonal (the variance-optimal choice).

Reproducibility
---------------
All randomness flows through counter-based Philox streams derived from a
64-bit master seed and a tuple of purpose tags:

    key = first 16 bytes of blake2s("<seed>|tag1|tag2|...")

Each logical task (a block of paths, a training repeat, a grid point) owns
one derived stream and fills its arrays in a single vectorized call, so
results are bit-identical no matter how tasks are scheduled across threads.
Re-deriving a stream with the same seed and tags replays it exactly.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .errors import CapabilityError, DataError, InputError
from .kernels import FeatureMapKernel, GaussExpKernel, MonomialFeature, as_paths, gauss_moment

__all__ = [
    "MeasureSpec",
    "MixtureSampler",
    "TrainingSet",
    "derive_rng",
    "derive_seed",
    "draw_paths",
    "rn_weight",
    "log_rn_weight",
    "optimal_gamma",
    "mixture_sampler",
    "build_training_set",
    "training_set_to_csv",
    "training_set_from_csv",
    "save_training_set",
    "load_training_set",
    "content_hash",
]

_TABLE_POINTS = 4096
_TABLE_HALF_WIDTH = 10.0  # in units of the step standard deviation


def derive_seed(master_seed, *tags):
    """128-bit child seed from a master seed and purpose tags (blake2s)."""
    label = "|".join([str(int(master_seed))] + [str(t) for t in tags])
    return int.from_bytes(hashlib.blake2s(label.encode()).digest()[:16], "big")


def derive_rng(master_seed, *tags):
    """Counter-based generator for one logical task.

    The same ``(master_seed, tags)`` pair always yields a generator that
    replays the same stream; distinct tags give statistically independent
    streams.
    """
    return np.random.Generator(np.random.Philox(key=derive_seed(master_seed, *tags)))


@dataclass(frozen=True)
class MeasureSpec:
    """Gaussian sampling measure: iid ``N(0, 1/(1 - 2 gamma))`` entries."""

    gamma: float
    d: int = 1
    T: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.gamma >= 0.5:
            raise InputError(f"gamma must be < 1/2, got {self.gamma}")
        if self.d < 1 or self.T < 1:
            raise InputError("d and T must be positive")

    @property
    def step_std(self):
        return 1.0 / math.sqrt(1.0 - 2.0 * self.gamma)

    def draw(self, n, rng):
        if n < 1:
            raise InputError(f"need at least one path, got n={n}")
        return rng.standard_normal((n, self.d, self.T)) * self.step_std

    def weight(self, paths):
        return rn_weight(self, paths)

    def log_weight(self, paths):
        return log_rn_weight(self, paths)


def draw_paths(measure, n, stream=("paths",), seed=None):
    """Draw ``n`` paths of shape ``(n, d, T)`` from the measure's own stream.

    ``stream`` tags select a substream of the measure seed (or ``seed`` if
    given), so callers can carve out independent blocks deterministically.
    """
    base = measure.seed if seed is None else seed
    rng = derive_rng(base, *stream)
    return measure.draw(n, rng)


def log_rn_weight(measure, x):
    """``log w(x)`` for the Gaussian tilt (vectorized over path batches)."""
    X = as_paths(x, measure.d, measure.T)
    n2 = np.einsum("ncs,ncs->n", X, X)
    out = 0.5 * measure.d * measure.T * math.log1p(-2.0 * measure.gamma)
    out = out + measure.gamma * n2
    if np.asarray(x).ndim <= 2 and X.shape[0] == 1:
        return float(out[0])
    return out


def rn_weight(measure, x):
    """Radon-Nikodym weight ``w = d(tilted)/d(nominal)`` at the given paths."""
    return np.exp(log_rn_weight(measure, x))


def optimal_gamma(kernel_spec):
    """Variance-optimal Gaussian tilt for a kernel, if one exists.

    For the Gaussian-exponentiated kernel the weight proportional to the
    squared diagonal ``exp(beta ||x||^2)`` is itself a Gaussian tilt with
    ``gamma = beta``; no other family admits one, so ``None`` is returned.
    """
    if isinstance(kernel_spec, GaussExpKernel):
        return kernel_spec.beta
    return None


# ---------------------------------------------------------------------------
# mixture sampler for feature-map kernels
# ---------------------------------------------------------------------------


class MixtureSampler:
    """Samples the measure whose weight is the normalized squared diagonal.

    For ``k(x, y) = phi(x).phi(y)`` the target weight is
    ``w = sum_i phi_i^2 / ||kappa||^2``; it factorizes into a mixture over
    features with component probabilities proportional to the product of
    squared per-step norms, each component being a product of per-step
    densities ``phi_{i,t}(x)^2`` times the standard normal density.

    Monomial steps are sampled exactly (``x^2`` is Gamma-distributed with a
    random sign); other steps fall back to inverse-CDF sampling on a
    4096-point table over ``[-10, 10]`` standard deviations (d == 1 only).
    """

    def __init__(self, spec, seed=0, force_tabulated=False):
        if not isinstance(spec, FeatureMapKernel):
            raise InputError("mixture sampling is defined for feature-map kernels")
        self.spec = spec
        self.seed = seed
        self.force_tabulated = force_tabulated
        norms = []
        for f in spec.features:
            prod = 1.0
            for t in range(spec.T):
                prod *= self._step_norm_sq(f, t)
            if prod <= 0:
                raise InputError(
                    "feature with zero L2 norm makes the mixture weight unnormalizable"
                )
            norms.append(prod)
        norms = np.asarray(norms)
        self.kappa_sq_norm = float(norms.sum())  # ||kappa||^2 under the nominal measure
        self.component_probs = norms / self.kappa_sq_norm
        self.d = spec.d
        self.T = spec.T

    @staticmethod
    def _step_norm_sq(feature, t):
        """||phi_{i,t}||^2 under the standard normal step law (monomials)."""
        val = math.prod(gauss_moment(2 * k) for k in feature.powers[t])
        if t == 0:
            val *= feature.coef**2
        return val

    def draw(self, n, rng):
        if n < 1:
            raise InputError(f"need at least one path, got n={n}")
        comp = rng.choice(len(self.component_probs), size=n, p=self.component_probs)
        out = np.empty((n, self.d, self.T))
        for i in np.unique(comp):
            mask = comp == i
            m = int(mask.sum())
            f = self.spec.features[i]
            block = np.empty((m, self.d, self.T))
            for t in range(self.T):
                for c in range(self.d):
                    k = f.powers[t][c]
                    if k == 0 and not self.force_tabulated:
                        block[:, c, t] = rng.standard_normal(m)
                    elif not self.force_tabulated:
                        # density prop. to x^(2k) exp(-x^2/2): x^2 ~ Gamma(k+1/2, 2)
                        r = rng.gamma(shape=k + 0.5, scale=2.0, size=m)
                        sign = rng.choice([-1.0, 1.0], size=m)
                        block[:, c, t] = sign * np.sqrt(r)
                    else:
                        if self.d != 1:
                            raise CapabilityError(
                                "tabulated mixture sampling supports d == 1 only"
                            )
                        block[:, c, t] = self._draw_tabulated(k, m, rng)
            out[mask] = block
        return out

    @staticmethod
    def _draw_tabulated(k, m, rng):
        grid = np.linspace(-_TABLE_HALF_WIDTH, _TABLE_HALF_WIDTH, _TABLE_POINTS)
        dens = grid ** (2 * k) * np.exp(-0.5 * grid**2)
        cdf = np.concatenate([[0.0], np.cumsum((dens[1:] + dens[:-1]) * 0.5 * np.diff(grid))])
        if cdf[-1] <= 0:
            raise CapabilityError("step density integrates to zero on the table grid")
        cdf /= cdf[-1]
        u = rng.random(m)
        return np.interp(u, cdf, grid)

    def weight(self, paths):
        X = as_paths(paths, self.d, self.T)
        phi = kernels.feature_matrix(self.spec, X)
        out = np.einsum("nm,nm->n", phi, phi) / self.kappa_sq_norm
        if np.asarray(paths).ndim <= 2 and X.shape[0] == 1:
            return float(out[0])
        return out

    def log_weight(self, paths):
        return np.log(self.weight(paths))


def mixture_sampler(spec, seed=0):
    """Build the variance-optimal mixture sampler for a feature-map kernel."""
    return MixtureSampler(spec, seed=seed)


# ---------------------------------------------------------------------------
# training sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingSet:
    """Simulated paths with payoff values and sampling weights.

    ``payoff_values[i] = f(paths[i])`` and ``weights[i] = w(paths[i])`` for
    the sampling measure's Radon-Nikodym weight ``w``.  ``n_payoff_evals``
    counts oracle calls (one per path); the payoff is the costly object in
    this setting, so budgets are tracked explicitly.
    """

    paths: np.ndarray
    payoff_values: np.ndarray
    weights: np.ndarray
    payoff_id: str
    gamma: float | None
    n_payoff_evals: int

    def __post_init__(self):
        for arr in (self.paths, self.payoff_values, self.weights):
            arr.setflags(write=False)

    @property
    def n(self):
        return self.paths.shape[0]

    def with_payoffs(self, values):
        """Same paths and weights, different payoff values (counts new evals)."""
        values = np.asarray(values, dtype=float).reshape(-1)
        if values.shape[0] != self.n:
            raise DataError(
                f"got {values.shape[0]} payoff values for {self.n} paths"
            )
        return TrainingSet(
            paths=self.paths,
            payoff_values=values,
            weights=self.weights,
            payoff_id=self.payoff_id,
            gamma=self.gamma,
            n_payoff_evals=self.n_payoff_evals + self.n,
        )

    @property
    def d(self):
        return self.paths.shape[1]

    @property
    def T(self):
        return self.paths.shape[2]


def build_training_set(sampler, payoff_fn, n, payoff_id="", stream=("train",), seed=None):
    """Draw ``n`` paths, evaluate the payoff once per path, attach weights.

    ``sampler`` is a :class:`MeasureSpec` or :class:`MixtureSampler`.  Raises
    :class:`DataError` listing offending row indices if the payoff returns
    non-finite values.
    """
    if n < 1:
        raise InputError(f"need at least one path, got n={n}")
    base = sampler.seed if seed is None else seed
    rng = derive_rng(base, *stream)
    paths = sampler.draw(n, rng)
    values = np.asarray(payoff_fn(paths), dtype=float).reshape(-1)
    if values.shape[0] != n:
        raise DataError(
            f"payoff returned {values.shape[0]} values for {n} paths"
        )
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise DataError(
            f"payoff produced non-finite values at rows {bad[:8].tolist()}"
            + ("..." if bad.size > 8 else ""),
            indices=bad,
        )
    weights = np.asarray(sampler.weight(paths), dtype=float).reshape(-1)
    gamma = getattr(sampler, "gamma", None)
    return TrainingSet(
        paths=paths,
        payoff_values=values,
        weights=weights,
        payoff_id=payoff_id,
        gamma=gamma,
        n_payoff_evals=n,
    )


# ---------------------------------------------------------------------------
# CSV serialization (shortest round-trip decimals)
# ---------------------------------------------------------------------------


def _fmt(v):
    return repr(float(v))


def training_set_to_csv(ts):
    """Render a TrainingSet as CSV text: path_id, x_1_1..x_d_T, payoff, weight."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["path_id"]
    for t in range(1, ts.T + 1):
        for c in range(1, ts.d + 1):
            header.append(f"x_{c}_{t}")
    header += ["payoff", "weight"]
    writer.writerow(header)
    for i in range(ts.n):
        row = [str(i)]
        for t in range(ts.T):
            for c in range(ts.d):
                row.append(_fmt(ts.paths[i, c, t]))
        row.append(_fmt(ts.payoff_values[i]))
        row.append(_fmt(ts.weights[i]))
        writer.writerow(row)
    return buf.getvalue()


def training_set_from_csv(text, payoff_id="", gamma=None):
    """Parse CSV text produced by :func:`training_set_to_csv`."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty training-set CSV") from None
    if header[0] != "path_id" or header[-2:] != ["payoff", "weight"]:
        raise DataError(f"unrecognized training-set header {header[:3]}...")
    coords = header[1:-2]
    dims = [tuple(int(p) for p in c.split("_")[1:]) for c in coords]
    d = max(c for c, _ in dims)
    T = max(t for _, t in dims)
    if len(coords) != d * T:
        raise DataError(f"expected {d * T} coordinate columns, found {len(coords)}")
    paths, values, weights = [], [], []
    for row in reader:
        if not row:
            continue
        xs = np.array([float(v) for v in row[1:-2]])
        paths.append(xs.reshape(T, d).T)
        values.append(float(row[-2]))
        weights.append(float(row[-1]))
    if not paths:
        raise DataError("training-set CSV has a header but no rows")
    return TrainingSet(
        paths=np.array(paths),
        payoff_values=np.array(values),
        weights=np.array(weights),
        payoff_id=payoff_id,
        gamma=gamma,
        n_payoff_evals=0,
    )


def save_training_set(ts, path):
    text = training_set_to_csv(ts)
    with open(path, "w") as fh:
        fh.write(text)
    return hashlib.sha256(text.encode()).hexdigest()


def load_training_set(path, payoff_id="", gamma=None):
    with open(path) as fh:
        text = fh.read()
    return training_set_from_csv(text, payoff_id=payoff_id, gamma=gamma)


def content_hash(ts):
    """sha256 of the canonical CSV rendering; stable estimator provenance key."""
    return hashlib.sha256(training_set_to_csv(ts).encode()).hexdigest()
