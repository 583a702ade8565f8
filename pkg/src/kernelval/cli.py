"""Experiment harness and command-line front end.

Reads a sectioned ``key = value`` configuration, runs the two-step market
experiments (hyperparameter grid search, repeated-fit error tables, figure
data, nested Monte Carlo baseline, bound diagnostics) and writes CSV/JSON
artifacts plus a manifest.  All randomness is derived from the master seed
through named streams, so re-runs are bit-identical regardless of the worker
thread count.

Exit codes: 0 success, 1 input/configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import os
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__, diagnostics, krr, valuation
from .errors import (CapabilityError, DataError, InputError, KernelvalError,
                     SolverError)
from .kernels import FeatureMapKernel, GaussExpKernel, monomial_features
from .market import (BSConfig, PAYOFF_IDS, GroundTruth, nested_mc_estimate,
                     payoff_function)
from .sampling import (MeasureSpec, build_training_set, draw_paths,
                       mixture_sampler, training_set_to_csv)
from .valuation import (ErrorReport, error_reports_to_csv, repeat_experiment,
                        trajectory_csv)

__all__ = [
    "ExperimentConfig",
    "GridResult",
    "load_config",
    "grid_search",
    "run_table2",
    "run_figures",
    "run_nested",
    "run_diagnostics",
    "main",
]


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


_DIAG_DEFAULTS = {
    "payoff": "european_put",
    "alpha": 4.0,
    "beta": 0.3,
    "lambda": 1e-5,
    "n": 1000,
    "n_ref": 4000,
    "n_repeats": 20,
    "conc_repeats": 100,
    "eps": 0.01,
    "clt_degree": 3,
    "clt_lambda": 1e-3,
    "clt_n": 2000,
    "clt_repeats": 200,
}

_SCHEMA = {
    "market": {"s0", "sigma", "rate", "steps", "strike", "barrier"},
    "kernel": {"family", "alphas", "betas", "lambdas"},
    "sampling": {"gamma", "n_train", "n_val", "n_test", "n_repeats", "mode"},
    "ground_truth": {"method", "n_inner", "nested_outer", "nested_inner"},
    "experiment": {"master_seed", "payoffs"},
    "fit": {"alpha", "beta", "lambda"},
    "diagnostics": set(_DIAG_DEFAULTS),
    "output": {"directory"},
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment run needs; defaults match the two-step study."""

    market: BSConfig = BSConfig()
    payoffs: tuple = PAYOFF_IDS
    family: str = "gauss-exp"
    alphas: tuple = (0.0, 2.0, 4.0, 6.0)
    betas: tuple = (0.0, 0.15, 0.3, 0.45)
    lambdas: tuple = (1e-9, 1e-7, 1e-5, 1e-3)
    gamma: float = 0.45
    n_train: int = 2000
    n_val: int = 500
    n_test: int = 5000
    n_repeats: int = 10
    mode: str = "dual-unsorted"
    gt_method: str = "quadrature"
    n_inner_gt: int = 10_000
    nested_outer: int = 200
    nested_inner: int = 10
    fit_alpha: float = 4.0
    fit_beta: float = 0.3
    fit_lambda: float = 1e-5
    master_seed: int = 2024
    out_dir: str = "out"
    threads: int = 1
    diag: dict = field(default_factory=lambda: dict(_DIAG_DEFAULTS))

    def __post_init__(self):
        if self.family != "gauss-exp":
            raise InputError(
                f"experiment harness supports family 'gauss-exp', got {self.family!r}"
            )
        if not (self.alphas and self.betas and self.lambdas):
            raise InputError("hyperparameter grid lists must be non-empty")
        for name in ("n_train", "n_val", "n_test", "n_repeats", "n_inner_gt",
                     "nested_outer", "nested_inner", "threads"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be at least 1")
        if not self.payoffs:
            raise InputError("payoff list must be non-empty")
        for p in self.payoffs:
            if p not in PAYOFF_IDS:
                raise InputError(f"unknown payoff id {p!r}; known: {PAYOFF_IDS}")
        if self.gt_method not in ("quadrature", "mc"):
            raise InputError(
                f"ground-truth method must be 'quadrature' or 'mc', got {self.gt_method!r}"
            )
        if self.mode not in ("dual-unsorted", "dual-sorted"):
            raise InputError(
                f"experiment mode must be a dual mode, got {self.mode!r}"
            )

    def grid_points(self):
        """Grid iteration order: alpha outer, beta middle, lambda inner.

        The pair (alpha, beta) = (0, 0) is excluded: it degenerates to the
        constant kernel.
        """
        return [
            (a, b, l)
            for a in self.alphas
            for b in self.betas
            if not (a == 0.0 and b == 0.0)
            for l in self.lambdas
        ]

    def measure(self):
        return MeasureSpec(gamma=self.gamma, d=1, T=self.market.T,
                           seed=self.master_seed)

    def nominal(self):
        return MeasureSpec(gamma=0.0, d=1, T=self.market.T,
                           seed=self.master_seed)

    def kernel_at(self, alpha, beta):
        return GaussExpKernel(alpha=alpha, beta=beta, d=1, T=self.market.T,
                              gamma=self.gamma)


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def load_config(path=None, text=None, overrides=None):
    """Build an ExperimentConfig from an INI-style file, text, or defaults.

    ``overrides`` maps ExperimentConfig field names to values (CLI flags).
    Unknown sections or keys raise :class:`InputError` to catch typos early.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if path is not None:
        if not os.path.isfile(path):
            raise InputError(f"config file not found: {path}")
        with open(path) as fh:
            text = fh.read()
    if text is not None:
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise InputError(f"malformed config: {exc}") from exc

    kw = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise InputError(
                f"unknown config section [{section}]; known: {sorted(_SCHEMA)}"
            )
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise InputError(
                    f"unknown key {key!r} in [{section}]; "
                    f"known: {sorted(_SCHEMA[section])}"
                )

    def get(section, key, cast, default=None):
        if parser.has_option(section, key):
            raw = parser.get(section, key)
            try:
                return cast(raw)
            except ValueError as exc:
                raise InputError(
                    f"bad value for {key!r} in [{section}]: {raw!r}"
                ) from exc
        return default

    market_kw = {}
    for key, cast in (("s0", float), ("sigma", float), ("rate", float),
                      ("strike", float), ("barrier", float)):
        v = get("market", key, cast)
        if v is not None:
            market_kw[key] = v
    steps = get("market", "steps", int)
    if steps is not None:
        market_kw["T"] = steps
    if market_kw:
        kw["market"] = BSConfig(**market_kw)

    for section, key, attr, cast in (
        ("kernel", "family", "family", str),
        ("kernel", "alphas", "alphas", _floats),
        ("kernel", "betas", "betas", _floats),
        ("kernel", "lambdas", "lambdas", _floats),
        ("sampling", "gamma", "gamma", float),
        ("sampling", "n_train", "n_train", int),
        ("sampling", "n_val", "n_val", int),
        ("sampling", "n_test", "n_test", int),
        ("sampling", "n_repeats", "n_repeats", int),
        ("sampling", "mode", "mode", str),
        ("ground_truth", "method", "gt_method", str),
        ("ground_truth", "n_inner", "n_inner_gt", int),
        ("ground_truth", "nested_outer", "nested_outer", int),
        ("ground_truth", "nested_inner", "nested_inner", int),
        ("experiment", "master_seed", "master_seed", int),
        ("fit", "alpha", "fit_alpha", float),
        ("fit", "beta", "fit_beta", float),
        ("fit", "lambda", "fit_lambda", float),
        ("output", "directory", "out_dir", str),
    ):
        v = get(section, key, cast)
        if v is not None:
            kw[attr] = v

    payoffs = get("experiment", "payoffs", str)
    if payoffs is not None:
        kw["payoffs"] = tuple(payoffs.replace(",", " ").split())

    if parser.has_section("diagnostics"):
        diag = dict(_DIAG_DEFAULTS)
        for key in parser["diagnostics"]:
            cast = type(_DIAG_DEFAULTS[key])
            diag[key] = get("diagnostics", key, cast)
        kw["diag"] = diag

    cfg = ExperimentConfig(**kw)
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg


# ---------------------------------------------------------------------------
# grid search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridResult:
    """Validation-error surface over the hyperparameter grid for one payoff."""

    payoff_id: str
    alpha: float
    beta: float
    lam: float
    surface: tuple  # rows (alpha, beta, lambda, rel_l2_error)
    n_payoff_evals: int
    max_residual: float = float("nan")  # worst normal-equation residual seen

    @property
    def best(self):
        return (self.alpha, self.beta, self.lam)

    def top(self, k):
        """Best k grid triples by validation error (stable order on ties)."""
        rows = sorted(self.surface, key=lambda r: r[3])
        return [(a, b, l) for a, b, l, _ in rows[:k]]

    def lambda_slice(self, alpha, beta):
        return [(l, e) for a, b, l, e in self.surface if a == alpha and b == beta]

    def surface_csv(self):
        lines = ["alpha,beta,lambda,rel_l2_error"]
        for a, b, l, e in self.surface:
            lines.append(f"{a!r},{b!r},{l!r},{e!r}")
        return "\n".join(lines) + "\n"


def _pool_map(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def grid_search(config, payoff_id):
    """Fixed-design search: one training and one validation sample per payoff.

    Fits every grid point on the shared training sample, scores relative
    payoff L2 error on the shared validation sample (drawn from the nominal
    measure), and returns the argmin with first-occurrence tie-breaking in
    grid iteration order.
    """
    cfg = config.market
    f = payoff_function(cfg, payoff_id)
    ts = build_training_set(config.measure(), f, config.n_train, payoff_id,
                            stream=("grid", payoff_id, "train"),
                            seed=config.master_seed)
    val_paths = draw_paths(config.nominal(), config.n_val,
                           stream=("grid", payoff_id, "val"),
                           seed=config.master_seed)
    val_values = f(val_paths)
    val_norm = float(np.linalg.norm(val_values))
    if val_norm == 0.0:
        raise DataError(f"payoff {payoff_id!r} vanishes on the validation sample")

    points = config.grid_points()

    def score(point):
        a, b, l = point
        try:
            est = krr.fit(ts, config.kernel_at(a, b), l, mode=config.mode)
        except (SolverError, OverflowError) as exc:
            return math.inf, str(exc), float("nan")
        pred = krr.predict(est, val_paths)
        err = float(np.linalg.norm(pred - val_values)) / val_norm
        return err, None, est.residual

    scored = _pool_map(score, points, config.threads)
    surface = tuple((a, b, l, err) for (a, b, l), (err, _, _) in zip(points, scored))
    failures = [msg for _, msg, _ in scored if msg is not None]
    if len(failures) == len(points):
        raise SolverError(
            f"every grid point failed to fit for {payoff_id!r}: {failures[0]}"
        )
    residuals = [r for _, msg, r in scored if msg is None]
    best = min(surface, key=lambda row: row[3])
    return GridResult(
        payoff_id=payoff_id,
        alpha=best[0], beta=best[1], lam=best[2],
        surface=surface,
        n_payoff_evals=ts.n_payoff_evals + config.n_val,
        max_residual=float(np.max(residuals)),
    )


# ---------------------------------------------------------------------------
# experiment drivers
# ---------------------------------------------------------------------------


def _shared_test_paths(config):
    return draw_paths(config.nominal(), config.n_test, stream=("test",),
                      seed=config.master_seed)


def _ground_truth(config, payoff_id):
    return GroundTruth(config.market, payoff_id, method=config.gt_method,
                       n_inner=config.n_inner_gt, seed=config.master_seed)


def run_nested(config, payoff_id, gt):
    """Nested-MC baseline errors at t in {0, 1} over independent repeats."""
    v0 = gt.v0()
    errs = np.empty((config.n_repeats, 2))
    evals = 0
    for r in range(config.n_repeats):
        est = nested_mc_estimate(config.market, payoff_id,
                                 config.nested_outer, config.nested_inner,
                                 seed=config.master_seed,
                                 stream=("nested", payoff_id, r))
        truth1 = gt.v1(est.outer_x1)
        errs[r, 0] = abs(est.v0_hat - v0) / v0
        errs[r, 1] = float(np.mean(np.abs(est.v1_hat - truth1))) / v0
        evals += est.n_payoff_evals
    arr = 100.0 * errs
    return ErrorReport(
        payoff_id=payoff_id,
        estimator="nested-mc",
        times=(0, 1),
        mean_pct=arr.mean(axis=0),
        std_pct=arr.std(axis=0, ddof=1) if config.n_repeats > 1
        else np.zeros(2),
        n_payoff_evals=evals,
    )


def _star_estimator(config, payoff_id, grid):
    """Refit the searched hyperparameters on the grid training sample."""
    f = payoff_function(config.market, payoff_id)
    ts = build_training_set(config.measure(), f, config.n_train, payoff_id,
                            stream=("grid", payoff_id, "train"),
                            seed=config.master_seed)
    spec = config.kernel_at(grid.alpha, grid.beta)
    return ts, krr.fit(ts, spec, grid.lam, mode=config.mode,
                       payoff_id=payoff_id)


def run_table2(config, payoff_ids=None):
    """Grid search + repeated-fit kernel rows + nested-MC rows per payoff.

    Returns ``{payoff: {"grid": GridResult, "kernel": ErrorReport,
    "nested": ErrorReport}}``; artifact writing is the caller's concern.
    """
    payoff_ids = tuple(payoff_ids or config.payoffs)
    test_paths = _shared_test_paths(config)

    def one(payoff_id):
        gt = _ground_truth(config, payoff_id)
        grid = grid_search(config, payoff_id)
        spec = config.kernel_at(grid.alpha, grid.beta)
        kernel_report, fits = repeat_experiment(
            config.market, payoff_id, spec, grid.lam, config.measure(),
            config.n_train, test_paths, gt,
            n_repeats=config.n_repeats, n_val=config.n_val,
            master_seed=config.master_seed, mode=config.mode,
            return_fits=True,
        )
        nested_report = run_nested(config, payoff_id, gt)
        return payoff_id, {
            "grid": grid,
            "kernel": kernel_report,
            "nested": nested_report,
            "gt": gt,
            "fits": fits,
        }

    return dict(_pool_map(one, payoff_ids, config.threads))


def run_figures(config, payoff_ids=None):
    """Figure data: (alpha, beta) cross-section, lambda sweep, trajectories.

    Returns ``{payoff: {"fig1": csv, "fig2": csv, "fig3": csv,
    "lambda_interior": bool}}``.  The lambda sweep at the searched
    (alpha*, beta*) must show an interior minimum for most payoffs; the
    caller enforces the 4-of-6 rule when all six are run.
    """
    payoff_ids = tuple(payoff_ids or config.payoffs)
    test_paths = _shared_test_paths(config)

    def one(payoff_id):
        grid = grid_search(config, payoff_id)
        fig1 = ["alpha,beta,rel_l2_error"]
        for a, b, l, e in grid.surface:
            if l == grid.lam:
                fig1.append(f"{a!r},{b!r},{e!r}")
        sweep = grid.lambda_slice(grid.alpha, grid.beta)
        fig2 = ["lambda,rel_l2_error"]
        for l, e in sweep:
            fig2.append(f"{l!r},{e!r}")
        errs = [e for _, e in sweep]
        interior = 0 < int(np.argmin(errs)) < len(errs) - 1
        gt = _ground_truth(config, payoff_id)
        _, est = _star_estimator(config, payoff_id, grid)
        fig3 = trajectory_csv(est, gt, test_paths)
        return payoff_id, {
            "grid": grid,
            "fig1": "\n".join(fig1) + "\n",
            "fig2": "\n".join(fig2) + "\n",
            "fig3": fig3,
            "lambda_interior": interior,
        }

    out = dict(_pool_map(one, payoff_ids, config.threads))
    if set(payoff_ids) == set(PAYOFF_IDS):
        interior = sum(1 for doc in out.values() if doc["lambda_interior"])
        if interior < 4:
            raise DataError(
                f"lambda sweep shows an interior minimum for only {interior} "
                "of 6 payoffs (expected at least 4)"
            )
    return out


def run_diagnostics(config):
    """Bound suite on the configured diagnostic problem; returns reports."""
    d = config.diag
    payoff_id = d["payoff"]
    if payoff_id not in PAYOFF_IDS:
        raise InputError(f"unknown diagnostics payoff {payoff_id!r}")
    spec = config.kernel_at(d["alpha"], d["beta"])
    meas = config.measure()
    lam, n = d["lambda"], d["n"]
    reference = diagnostics.reference_estimator(
        meas, payoff_function(config.market, payoff_id), spec, lam,
        n, d["n_ref"], payoff_id=payoff_id, seed=config.master_seed,
    )
    mse = diagnostics.mse_bound_check(
        config.market, payoff_id, spec, lam, n, d["n_repeats"], meas,
        seed=config.master_seed, reference=reference,
    )
    conc = diagnostics.concentration_check(
        config.market, payoff_id, spec, lam, n, d["conc_repeats"], meas,
        seed=config.master_seed, reference=reference,
    )
    feats = monomial_features(1, config.market.T,
                              max_total_degree=d["clt_degree"])
    fspec = FeatureMapKernel(features=feats, d=1, T=config.market.T)
    mix = mixture_sampler(fspec, seed=config.master_seed)
    clt = diagnostics.clt_experiment(
        fspec, config.market, payoff_id, d["clt_lambda"], d["clt_n"],
        d["clt_repeats"], mix, probe_z=(0.3, -0.5), seed=config.master_seed,
    )
    robust = diagnostics.robustness_check(
        config.market, payoff_id, spec, lam, n, d["n_repeats"], meas,
        eps=d["eps"], seed=config.master_seed,
    )
    return {"mse_bound": mse, "concentration": conc, "clt": clt,
            "robustness": robust}


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


def _git_commit():
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            capture_output=True, text=True, timeout=10,
            cwd=os.path.dirname(os.path.abspath(__file__)),
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _config_digest(path):
    if path is None or not os.path.isfile(path):
        return None
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _write(out_dir, name, text):
    os.makedirs(out_dir, exist_ok=True)
    dest = os.path.join(out_dir, name)
    with open(dest, "w") as fh:
        fh.write(text)
    return name


def write_manifest(config, command, config_path, outputs, payoff_evals,
                   extra=None):
    """Record inputs, seeds, and budgets next to the artifacts.

    Thread count is deliberately omitted: outputs must not depend on it.
    """
    doc = {
        "command": command,
        "package_version": __version__,
        "git_commit": _git_commit(),
        "config_path": config_path,
        "config_sha256": _config_digest(config_path),
        "master_seed": config.master_seed,
        "config": _manifest_config(config),
        "payoff_evaluations": payoff_evals,
        "outputs": sorted(outputs),
    }
    if extra:
        doc.update(extra)
    return _write(config.out_dir, "manifest.json",
                  json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _manifest_config(config):
    doc = asdict(config)
    doc.pop("threads", None)
    doc.pop("out_dir", None)
    return doc


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------


def _cmd_simulate(config, config_path):
    outputs, evals = [], {}
    for payoff_id in config.payoffs:
        f = payoff_function(config.market, payoff_id)
        ts = build_training_set(config.measure(), f, config.n_train, payoff_id,
                                stream=("fit", payoff_id, "train"),
                                seed=config.master_seed)
        outputs.append(_write(config.out_dir, f"train_{payoff_id}.csv",
                              training_set_to_csv(ts)))
        evals[payoff_id] = ts.n_payoff_evals
    outputs.append(write_manifest(config, "simulate", config_path, outputs, evals))
    return 0


def _fit_training_set(config, payoff_id):
    f = payoff_function(config.market, payoff_id)
    return build_training_set(config.measure(), f, config.n_train, payoff_id,
                              stream=("fit", payoff_id, "train"),
                              seed=config.master_seed)


def _cmd_fit(config, config_path):
    outputs, evals = [], {}
    spec = config.kernel_at(config.fit_alpha, config.fit_beta)
    for payoff_id in config.payoffs:
        ts = _fit_training_set(config, payoff_id)
        est = krr.fit(ts, spec, config.fit_lambda, mode=config.mode,
                      payoff_id=payoff_id)
        outputs.append(_write(config.out_dir, f"train_{payoff_id}.csv",
                              training_set_to_csv(ts)))
        outputs.append(_write(config.out_dir, f"estimator_{payoff_id}.json",
                              krr.estimator_to_json(est)))
        resid = krr.normal_equation_residual(est, ts)
        print(f"fit {payoff_id}: alpha={config.fit_alpha} beta={config.fit_beta} "
              f"lambda={config.fit_lambda} normal-eq residual={resid:.3e}")
        evals[payoff_id] = ts.n_payoff_evals
    outputs.append(write_manifest(config, "fit", config_path, outputs, evals))
    return 0


def _cmd_value(config, config_path):
    outputs, evals = [], {}
    test_paths = _shared_test_paths(config)
    for payoff_id in config.payoffs:
        est_path = os.path.join(config.out_dir, f"estimator_{payoff_id}.json")
        if not os.path.isfile(est_path):
            raise InputError(
                f"no saved estimator at {est_path}; run the fit command first"
            )
        ts = _fit_training_set(config, payoff_id)
        est = krr.load_estimator(est_path, ts)
        series = valuation.value_series_many(est, test_paths)
        lines = ["path_id,t,value"]
        for i in range(series.shape[0]):
            for t in range(series.shape[1]):
                lines.append(f"{i},{t},{float(series[i, t])!r}")
        outputs.append(_write(config.out_dir, f"value_{payoff_id}.csv",
                              "\n".join(lines) + "\n"))
        evals[payoff_id] = ts.n_payoff_evals
        print(f"value {payoff_id}: V0 = {float(series[0, 0])!r} "
              f"({series.shape[0]} paths x {series.shape[1]} times)")
    outputs.append(write_manifest(config, "value", config_path, outputs, evals))
    return 0


def _cmd_grid_search(config, config_path):
    outputs, evals, stars = [], {}, {}
    for payoff_id in config.payoffs:
        grid = grid_search(config, payoff_id)
        outputs.append(_write(config.out_dir, f"grid_{payoff_id}.csv",
                              grid.surface_csv()))
        evals[payoff_id] = grid.n_payoff_evals
        stars[payoff_id] = {"alpha": grid.alpha, "beta": grid.beta,
                            "lambda": grid.lam}
        print(f"grid-search {payoff_id}: alpha*={grid.alpha} "
              f"beta*={grid.beta} lambda*={grid.lam}")
    outputs.append(write_manifest(config, "grid-search", config_path, outputs,
                                  evals, extra={"optimal": stars}))
    return 0


def _cmd_table2(config, config_path):
    results = run_table2(config)
    outputs, evals, stars = [], {}, {}
    reports = []
    for payoff_id in config.payoffs:
        doc = results[payoff_id]
        grid, kernel, nested = doc["grid"], doc["kernel"], doc["nested"]
        reports += [kernel, nested]
        outputs.append(_write(config.out_dir, f"grid_{payoff_id}.csv",
                              grid.surface_csv()))
        ts, est = _star_estimator(config, payoff_id, grid)
        outputs.append(_write(config.out_dir, f"train_{payoff_id}.csv",
                              training_set_to_csv(ts)))
        outputs.append(_write(config.out_dir, f"estimator_{payoff_id}.json",
                              krr.estimator_to_json(est)))
        gt_name = f"gt_{payoff_id}.csv"
        doc["gt"].save(os.path.join(config.out_dir, gt_name))
        outputs.append(gt_name)
        evals[payoff_id] = (grid.n_payoff_evals + kernel.n_payoff_evals
                            + nested.n_payoff_evals)
        stars[payoff_id] = {"alpha": grid.alpha, "beta": grid.beta,
                            "lambda": grid.lam}
        means = ", ".join(f"{v:.3f}" for v in kernel.mean_pct)
        nmeans = ", ".join(f"{v:.3f}" for v in nested.mean_pct)
        print(f"table2 {payoff_id}: stars=({grid.alpha}, {grid.beta}, "
              f"{grid.lam}) kernel%=({means}) nested%=({nmeans})")
    outputs.append(_write(config.out_dir, "table2.csv",
                          error_reports_to_csv(reports)))
    outputs.append(write_manifest(config, "table2", config_path, outputs,
                                  evals, extra={"optimal": stars}))
    return 0


def _cmd_figures(config, config_path):
    results = run_figures(config)
    outputs, evals, interior = [], {}, {}
    for payoff_id in config.payoffs:
        doc = results[payoff_id]
        for fig in ("fig1", "fig2", "fig3"):
            outputs.append(_write(config.out_dir, f"{fig}_{payoff_id}.csv",
                                  doc[fig]))
        evals[payoff_id] = doc["grid"].n_payoff_evals
        interior[payoff_id] = doc["lambda_interior"]
        print(f"figures {payoff_id}: lambda minimum "
              f"{'interior' if doc['lambda_interior'] else 'on the boundary'}")
    outputs.append(write_manifest(config, "figures", config_path, outputs,
                                  evals, extra={"lambda_interior": interior}))
    return 0


def _cmd_nested_mc(config, config_path):
    outputs, evals, reports = [], {}, []
    for payoff_id in config.payoffs:
        gt = _ground_truth(config, payoff_id)
        rep = run_nested(config, payoff_id, gt)
        reports.append(rep)
        evals[payoff_id] = rep.n_payoff_evals
        means = ", ".join(f"{v:.2f}" for v in rep.mean_pct)
        stds = ", ".join(f"{v:.2f}" for v in rep.std_pct)
        print(f"nested-mc {payoff_id}: mean%=({means}) std%=({stds})")
    outputs.append(_write(config.out_dir, "nested.csv",
                          error_reports_to_csv(reports)))
    outputs.append(write_manifest(config, "nested-mc", config_path, outputs,
                                  evals))
    return 0


def _diag_evals(d):
    """Payoff-oracle calls of the bound suite, probe samples included."""
    return {
        "reference": d["n_ref"],
        "mse_bound": d["n_repeats"] * d["n"] + 100_000,
        "concentration": d["conc_repeats"] * d["n"] + 100_000,
        "clt": d["clt_repeats"] * d["clt_n"] + 100_000 + 3 * 1025**2,
        "robustness": d["n_repeats"] * d["n"],
    }


def _cmd_diagnostics(config, config_path):
    reports = run_diagnostics(config)
    outputs = []
    failed = []
    for name, rep in reports.items():
        outputs.append(_write(config.out_dir, f"diag_{name}.json",
                              rep.to_json() + "\n"))
        if name == "clt":
            ok = rep.mean_within_3se and rep.normality_accepted_1pct
        else:
            ok = not rep.violated
        if not ok:
            failed.append(name)
        print(f"diagnostics {name}: {'PASS' if ok else 'FAIL'}")
    outputs.append(write_manifest(config, "diagnostics", config_path, outputs,
                                  _diag_evals(config.diag)))
    if failed:
        raise DataError(f"bound checks failed: {', '.join(failed)}")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "grid-search": _cmd_grid_search,
    "value": _cmd_value,
    "table2": _cmd_table2,
    "figures": _cmd_figures,
    "nested-mc": _cmd_nested_mc,
    "diagnostics": _cmd_diagnostics,
}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser():
    parser = _Parser(
        prog="kernelval",
        description="Value-process regression experiments on a two-step market.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    for name in _COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} pipeline",
                           description=f"Run the {name} pipeline.")
        p.add_argument("--config", metavar="PATH",
                       help="configuration file (defaults cover the two-step study)")
        p.add_argument("--payoff", metavar="ID",
                       help=f"restrict to one payoff; known: {', '.join(PAYOFF_IDS)}")
        p.add_argument("--seed", type=int, metavar="U64",
                       help="override the master seed")
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument("--threads", type=int, metavar="N",
                       help="worker threads (outputs are thread-count invariant)")
        p.add_argument("--n-train", type=int, metavar="N", dest="n_train",
                       help="override the training sample size")
        p.add_argument("--n-inner-gt", type=int, metavar="N", dest="n_inner_gt",
                       help="override the MC ground-truth inner budget")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.n_train is not None:
        overrides["n_train"] = args.n_train
    if args.n_inner_gt is not None:
        overrides["n_inner_gt"] = args.n_inner_gt
    if args.payoff is not None:
        overrides["payoffs"] = (args.payoff,)
    try:
        config = load_config(path=args.config, overrides=overrides)
        return _COMMANDS[args.command](config, args.config)
    except InputError as exc:
        print(f"kernelval: input error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"kernelval: {exc}", file=sys.stderr)
        return 1
    except (SolverError, DataError, CapabilityError, OverflowError,
            FloatingPointError) as exc:
        print(f"kernelval: numerical failure: {exc}", file=sys.stderr)
        return 2
    except KernelvalError as exc:
        print(f"kernelval: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
