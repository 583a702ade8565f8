"""Kernel ridge regression for dynamic value processes.

Learns a portfolio payoff from simulated paths and evaluates the fitted
model's conditional expectations in closed form at every time step, giving
the whole value process of the cumulative cash flow from a single training
run.  Includes the two-step market experiments, a nested Monte Carlo
baseline, and empirical checks of the estimator's statistical error bounds.
"""

__version__ = "0.1.0"

from .errors import (CapabilityError, DataError, InputError, KernelvalError,
                     SolverError)
from .kernels import (FeatureMapKernel, GaussExpKernel, GaussPolyKernel,
                      MonomialFeature, cond_expect, gauss_poly_features, gram,
                      monomial_features, tilted_gram)
from .krr import (Estimator, fit, fit_dual_sorted, fit_dual_unsorted,
                  fit_primal, load_estimator, normal_equation_residual,
                  predict, regularization_path, save_estimator)
from .market import (BSConfig, GroundTruth, PAYOFF_IDS, nested_mc_estimate,
                     payoff, payoff_function, stock_path, var_es)
from .sampling import (MeasureSpec, MixtureSampler, TrainingSet,
                       build_training_set, draw_paths, mixture_sampler)
from .valuation import (ErrorReport, ValueSeries, martingale_gap,
                        payoff_l2_error, repeat_experiment, value_at_zero,
                        value_series, value_series_many)

__all__ = [
    "__version__",
    "KernelvalError", "InputError", "CapabilityError", "DataError",
    "SolverError",
    "GaussExpKernel", "GaussPolyKernel", "FeatureMapKernel", "MonomialFeature",
    "monomial_features", "gauss_poly_features", "gram", "tilted_gram",
    "cond_expect",
    "Estimator", "fit", "fit_dual_unsorted", "fit_dual_sorted", "fit_primal",
    "predict", "normal_equation_residual", "regularization_path",
    "save_estimator", "load_estimator",
    "BSConfig", "PAYOFF_IDS", "GroundTruth", "nested_mc_estimate", "payoff",
    "payoff_function", "stock_path", "var_es",
    "MeasureSpec", "MixtureSampler", "TrainingSet", "build_training_set",
    "draw_paths", "mixture_sampler",
    "ValueSeries", "ErrorReport", "value_series", "value_series_many",
    "value_at_zero", "martingale_gap", "payoff_l2_error", "repeat_experiment",
]
