"""Ridge solvers: hand-solved oracles, mode agreement, serialization."""

import dataclasses
import math

import numpy as np
import pytest

from kernelval import krr
from kernelval.errors import CapabilityError, DataError, InputError, SolverError
from kernelval.kernels import (FeatureMapKernel, GaussExpKernel, feature_matrix,
                               gram, monomial_features)
from kernelval.krr import (MAX_DUAL_SIZE, estimator_from_json,
                           estimator_to_json, fit, fit_dual_sorted,
                           fit_dual_unsorted, fit_primal, load_estimator,
                           normal_equation_residual, predict,
                           regularization_path, save_estimator)
from kernelval.market import BSConfig, payoff_function
from kernelval.sampling import MeasureSpec, TrainingSet, build_training_set
from support import (linear_rate_problem, loglog_slope, ridge_gradient_descent,
                     sqrt_rate_problem)

SPEC = GaussExpKernel(alpha=2.0, beta=0.3, d=1, T=2, gamma=0.45)
MEASURE = MeasureSpec(gamma=0.45, d=1, T=2, seed=314)
PAYOFF = payoff_function(BSConfig(), "european_put")


def _ts(n, seed=314, stream=("krr",)):
    m = dataclasses.replace(MEASURE, seed=seed)
    return build_training_set(m, PAYOFF, n, payoff_id="european_put",
                              stream=stream)


def test_three_point_system_solved_by_hand():
    ts = _ts(3)
    lam = 1e-3
    est = fit_dual_unsorted(ts, SPEC, lam)
    K = gram(SPEC, ts.paths)
    Kt = K / np.sqrt(np.outer(ts.weights, ts.weights))
    M = Kt / 3 + lam * np.eye(3)
    g = np.linalg.solve(M, ts.payoff_values / np.sqrt(ts.weights))
    assert np.allclose(est.dual_coef, g, rtol=1e-12)
    assert np.allclose(est.eval_coef, g / np.sqrt(ts.weights), rtol=1e-12)
    x = np.array([[0.25, -0.5]])
    manual = float((gram(SPEC, x[None], ts.paths) @ est.eval_coef)[0]) / 3
    assert predict(est, x) == pytest.approx(manual, rel=1e-13)


def test_single_point_scalar_formula():
    ts = _ts(1)
    lam = 0.01
    est = fit_dual_unsorted(ts, SPEC, lam)
    ktt = float(gram(SPEC, ts.paths, ts.paths)[0, 0]) / ts.weights[0]
    expect = (ts.payoff_values[0] / math.sqrt(ts.weights[0])) / (ktt + lam)
    assert est.dual_coef[0] == pytest.approx(expect, rel=1e-13)


def test_primal_matches_gradient_descent_reference():
    feats = monomial_features(1, 2, 2)
    spec = FeatureMapKernel(features=feats, d=1, T=2)
    m = MeasureSpec(gamma=0.0, d=1, T=2, seed=21)
    ts = build_training_set(m, PAYOFF, 200, stream=("gd",))
    lam = 1e-2
    est = fit_primal(ts, spec, lam)
    phi = feature_matrix(spec, ts.paths)  # weights are all 1 at gamma = 0
    ref = ridge_gradient_descent(phi, ts.payoff_values, lam)
    assert np.allclose(est.primal_coef, ref, atol=1e-8)


def test_near_interpolation_at_tiny_lambda():
    # flat weights keep the system well conditioned at the tiny ridge
    m = MeasureSpec(gamma=0.0, d=1, T=2, seed=314)
    ts = build_training_set(m, PAYOFF, 25, stream=("interp",))
    est = fit_dual_unsorted(ts, SPEC, 1e-12)
    pred = predict(est, ts.paths)
    assert np.max(np.abs(pred - ts.payoff_values)) < 1e-6


def test_fit_is_linear_in_the_payoff():
    ts = _ts(40)
    other = ts.with_payoffs(np.cos(ts.paths.sum(axis=(1, 2))))
    lam = 1e-4
    a, b = 2.0, -0.7
    combo = ts.with_payoffs(a * ts.payoff_values + b * other.payoff_values)
    x = np.linspace(-1, 1, 7).reshape(-1, 1) * np.ones((7, 2))
    x = x.reshape(7, 1, 2)
    pa = predict(fit_dual_unsorted(ts, SPEC, lam), x)
    pb = predict(fit_dual_unsorted(other, SPEC, lam), x)
    pc = predict(fit_dual_unsorted(combo, SPEC, lam), x)
    assert np.allclose(pc, a * pa + b * pb, rtol=1e-10, atol=1e-12)


def test_shrinkage_grows_with_lambda():
    ts = _ts(60)
    lambdas = [1e-8, 1e-5, 1e-3, 1e-1]
    _, gaps = regularization_path(ts, SPEC, lambdas, mode="dual-unsorted")
    assert all(g2 > g1 for g1, g2 in zip(gaps, gaps[1:]))


def test_dual_norm_bound():
    ts = _ts(50)
    for lam in (1e-4, 1e-2):
        est = fit_dual_unsorted(ts, SPEC, lam)
        rhs = ts.payoff_values / np.sqrt(ts.weights)
        assert np.linalg.norm(est.dual_coef) <= np.linalg.norm(rhs) / lam + 1e-9


def test_residual_reported_and_degraded_by_perturbation():
    ts = _ts(30)
    est = fit_dual_unsorted(ts, SPEC, 1e-5)
    assert est.residual < 1e-10
    assert normal_equation_residual(est, ts) == pytest.approx(est.residual,
                                                              rel=1e-6)
    bent = dataclasses.replace(est, dual_coef=est.dual_coef + 0.05)
    assert normal_equation_residual(bent, ts) > 100 * est.residual


def test_sorted_mode_merges_duplicates():
    base = _ts(12)
    reps = np.repeat(np.arange(12), 3)
    ts = TrainingSet(
        paths=base.paths[reps],
        payoff_values=base.payoff_values[reps],
        weights=base.weights[reps],
        payoff_id=base.payoff_id,
        gamma=base.gamma,
        n_payoff_evals=36,
    )
    lam = 1e-4
    sorted_est = fit_dual_sorted(ts, SPEC, lam)
    unsorted_est = fit_dual_unsorted(ts, SPEC, lam)
    assert sorted_est.paths.shape[0] == 12
    assert sorted_est.multiplicity.tolist() == [3] * 12
    x = np.linspace(-2, 2, 9).reshape(-1, 1, 1) * np.ones((9, 1, 2))
    pa = predict(sorted_est, x)
    pb = predict(unsorted_est, x)
    assert np.max(np.abs(pa - pb)) < 1e-9
    assert normal_equation_residual(sorted_est, ts) < 1e-10


def test_sorted_equals_unsorted_without_duplicates():
    ts = _ts(45)
    x = np.linspace(-2, 2, 11).reshape(-1, 1, 1) * np.ones((11, 1, 2))
    pa = predict(fit_dual_sorted(ts, SPEC, 1e-5), x)
    pb = predict(fit_dual_unsorted(ts, SPEC, 1e-5), x)
    assert np.max(np.abs(pa - pb)) < 1e-9


def test_primal_equals_dual_for_feature_kernels():
    feats = monomial_features(1, 2, 3)
    spec = FeatureMapKernel(features=feats, d=1, T=2)
    m = MeasureSpec(gamma=0.0, d=1, T=2, seed=77)
    ts = build_training_set(m, PAYOFF, 120, stream=("pd",))
    lam = 1e-4
    x = np.linspace(-2, 2, 13).reshape(-1, 1, 1) * np.ones((13, 1, 2))
    pp = predict(fit_primal(ts, spec, lam), x)
    pd = predict(fit_dual_unsorted(ts, spec, lam), x)
    assert np.max(np.abs(pp - pd)) < 1e-8


def test_zero_lambda_refused_on_singular_gram():
    base = _ts(8)
    reps = np.repeat(np.arange(8), 2)
    ts = TrainingSet(
        paths=base.paths[reps],
        payoff_values=base.payoff_values[reps],
        weights=base.weights[reps],
        payoff_id="",
        gamma=base.gamma,
        n_payoff_evals=16,
    )
    with pytest.raises(SolverError):
        fit_dual_unsorted(ts, SPEC, 0.0)


def test_gram_size_guard(monkeypatch):
    monkeypatch.setattr(krr, "MAX_DUAL_SIZE", 10)
    ts = _ts(11)
    with pytest.raises(CapabilityError):
        fit_dual_unsorted(ts, SPEC, 1e-3)
    assert MAX_DUAL_SIZE == 20_000  # the shipped limit itself


def test_input_validation():
    ts = _ts(5)
    with pytest.raises(InputError):
        fit_dual_unsorted(ts, SPEC, -1e-3)
    with pytest.raises(InputError):
        fit(ts, SPEC, 1e-3, mode="banana")
    wrong = GaussExpKernel(alpha=1.0, beta=0.1, d=1, T=3)
    with pytest.raises(InputError):
        fit_dual_unsorted(ts, wrong, 1e-3)
    with pytest.raises(InputError):
        fit_primal(ts, SPEC, 1e-3)  # no finite feature basis


def test_serialization_roundtrip(tmp_path):
    ts = _ts(20)
    for mode in ("dual-unsorted", "dual-sorted"):
        est = fit(ts, SPEC, 1e-5, mode=mode)
        doc = estimator_to_json(est)
        back = estimator_from_json(doc, ts)
        assert back.mode == est.mode and back.lam == est.lam
        x = np.linspace(-1, 1, 5).reshape(-1, 1, 1) * np.ones((5, 1, 2))
        assert np.array_equal(predict(back, x), predict(est, x))
    p = tmp_path / "est.json"
    est = fit(ts, SPEC, 1e-5)
    save_estimator(est, p)
    loaded = load_estimator(p, ts)
    assert loaded.training_hash == est.training_hash
    assert loaded.residual == est.residual


def test_serialization_rejects_foreign_training_set():
    ts = _ts(20)
    est = fit(ts, SPEC, 1e-5)
    other = _ts(20, seed=999)
    with pytest.raises(InputError):
        estimator_from_json(estimator_to_json(est), other)


def test_gap_slope_half_for_geometric_spectrum():
    ts, spec = sqrt_rate_problem()
    lambdas = np.logspace(-6.5, -2.5, 9)
    _, gaps = regularization_path(ts, spec, lambdas)
    assert loglog_slope(lambdas, gaps) == pytest.approx(0.5, abs=0.05)


def test_gap_slope_one_for_flat_spectrum():
    ts, spec = linear_rate_problem()
    lambdas = np.logspace(-6, -2, 9)
    _, gaps = regularization_path(ts, spec, lambdas)
    assert loglog_slope(lambdas, gaps) == pytest.approx(1.0, abs=0.01)
