"""Tests for ``cfrobust.models``: objectives, fitting and the shared classifier contract."""
from __future__ import annotations

import numpy as np
import pytest

from cfrobust.core import Dataset, continuous_schema
from cfrobust.datagen import MockSpec, make_latent
from cfrobust.errors import ParameterError, SingleClassError
from cfrobust.models import (
    BayesianLinearModel,
    LinearModel,
    accuracy,
    confusion_split,
    fit_bayes_logistic,
    fit_logistic,
    fit_mlp,
    fit_model,
    fit_random_forest,
)
from cfrobust.models.bayes import neg_log_posterior_hessian
from cfrobust.models.forest import best_split
from cfrobust.models.linear import logistic_gradient, logistic_hessian, logistic_objective
from cfrobust.models.mlp import init_params, loss_and_gradients
from cfrobust.tags import Group


# ===================================================================
# Fixtures
# ===================================================================

def blobs(n: int = 400, seed: int = 0) -> Dataset:
    return make_latent(MockSpec(n_samples=n, class_separation=3.0, seed=seed))


def line(n: int = 20) -> Dataset:
    x = np.arange(n, dtype=float)[:, None]
    return Dataset(x, (x[:, 0] >= n // 2).astype(int), np.arange(n), continuous_schema(["v"]))


def xor(n: int, seed: int = 0, spread: float | None = None) -> Dataset:
    """Label 1 where both coordinates share a sign.

    Points are uniform on the square, or four corner clusters when *spread* is given.
    """
    rng = np.random.default_rng(seed)
    if spread is None:
        x = rng.uniform(-1.0, 1.0, (n, 2))
    else:
        x = rng.choice([-1.0, 1.0], size=(n, 2)) + rng.normal(0.0, spread, (n, 2))
    y = (x[:, 0] * x[:, 1] > 0).astype(int)
    return Dataset(x, y, np.arange(n), continuous_schema(["x0", "x1"]))


def stump_impurity(x: np.ndarray, y: np.ndarray, feature: int, threshold: float) -> float:
    impurity = 0.0
    for side in (x[:, feature] <= threshold, x[:, feature] > threshold):
        n = side.sum()
        p = y[side].mean()
        impurity += n * 2.0 * p * (1.0 - p)
    return impurity / len(y)


def numeric_gradient(f, theta: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(theta)
    for i in range(len(theta)):
        step = np.zeros_like(theta)
        step[i] = eps
        g[i] = (f(theta + step) - f(theta - step)) / (2 * eps)
    return g


# ===================================================================
# Classifier contract
# ===================================================================

class TestClassifier:
    def test_single_row_returns_scalar(self):
        m = LinearModel(np.array([1.0, -1.0]), 0.5)
        assert isinstance(m.predict_proba([0.0, 0.0]), float)
        assert isinstance(m.predict([0.0, 0.0]), int)
        assert m.predict_proba(np.zeros((3, 2))).shape == (3,)

    def test_tie_goes_to_class_one(self):
        m = LinearModel(np.zeros(2), 0.0)
        assert m.predict_proba([3.0, 4.0]) == 0.5
        assert m.predict([3.0, 4.0]) == 1

    def test_rejects_tensors(self):
        with pytest.raises(ParameterError, match="vector or a matrix"):
            LinearModel(np.zeros(1), 0.0).predict(np.zeros((1, 1, 1)))


class TestEvaluation:
    def test_confusion_split(self):
        m = LinearModel(np.array([1.0]), 0.0)
        d = Dataset(np.array([[-1.0], [-2.0], [1.0], [2.0]]), np.array([0, 1, 1, 0]),
                    np.array([10, 11, 12, 13]), continuous_schema(["v"]))
        split = confusion_split(m, d)
        assert split.tn == {10} and split.fn == {11}
        assert split.tp == {12} and split.fp == {13}
        assert split.ids(Group.ALL) == [10, 11]
        assert split.group_of(11) == Group.FN
        assert split.group_of(12) is None
        assert accuracy(m, d) == 0.5

    def test_unknown_group(self):
        split = confusion_split(LinearModel(np.array([1.0]), 0.0), line())
        with pytest.raises(ParameterError, match="unknown group"):
            split.ids("TP")


# ===================================================================
# Logistic regression
# ===================================================================

class TestLogistic:
    def test_gradient_and_hessian(self):
        d = blobs(60)
        x, y = np.asarray(d.x), np.asarray(d.y, float)
        theta = np.array([0.3, -0.2, 0.1])
        for penalize in (False, True):
            f = lambda t: logistic_objective(t, x, y, 0.5, penalize)  # noqa: E731
            g = lambda t: logistic_gradient(t, x, y, 0.5, penalize)  # noqa: E731
            np.testing.assert_allclose(g(theta), numeric_gradient(f, theta), rtol=1e-5, atol=1e-8)
            numeric_h = np.column_stack(
                [numeric_gradient(lambda t: g(t)[i], theta) for i in range(3)]
            )
            np.testing.assert_allclose(
                logistic_hessian(theta, x, y, 0.5, penalize), numeric_h, rtol=1e-5, atol=1e-8
            )

    def test_fit_reaches_stationary_point(self):
        d = blobs()
        m = fit_logistic(d, l2=0.1)
        grad = logistic_gradient(m.theta, np.asarray(d.x), np.asarray(d.y, float), 0.1)
        assert np.linalg.norm(grad) < 1e-8
        assert accuracy(m, d) > 0.9

    @pytest.mark.parametrize("seed", range(5))
    def test_proba_monotone_along_weights(self, seed):
        rng = np.random.default_rng(seed)
        m = LinearModel(rng.normal(size=3), float(rng.normal()))
        x = rng.normal(size=3)
        t = np.linspace(-5.0, 5.0, 101)
        p = m.predict_proba(x + t[:, None] * m.weights)
        assert np.all(np.diff(p) >= 0.0)
        assert p[-1] > p[0]

    def test_stronger_penalty_shrinks_weights(self):
        d = blobs()
        strong, weak = fit_logistic(d, 10.0), fit_logistic(d, 0.1)
        assert np.linalg.norm(strong.weights) < np.linalg.norm(weak.weights)

    def test_dict_round_trip(self):
        m = fit_logistic(blobs(100))
        back = LinearModel.from_dict(m.to_dict())
        np.testing.assert_array_equal(back.theta, m.theta)

    def test_rejects_nonpositive_l2(self):
        with pytest.raises(ParameterError, match="l2 must be positive"):
            fit_logistic(blobs(50), l2=0.0)

    def test_single_class(self):
        d = blobs(50)
        with pytest.raises(SingleClassError, match="only class 0"):
            fit_logistic(d.with_y(np.zeros(d.n, dtype=int)))


# ===================================================================
# Bayesian logistic regression
# ===================================================================

class TestBayesLogistic:
    def test_map_matches_regularized_mle(self):
        d = blobs(200)
        pv = 2.0
        blr = fit_bayes_logistic(d, prior_variance=pv)
        lr = fit_logistic(d, l2=1.0 / (d.n * pv), penalize_bias=True)
        np.testing.assert_allclose(blr.posterior_mean, lr.theta, atol=1e-6)

    def test_covariance_is_inverse_hessian(self):
        d = blobs(200)
        blr = fit_bayes_logistic(d)
        x, y = np.asarray(d.x), np.asarray(d.y, float)
        h = neg_log_posterior_hessian(blr.posterior_mean, x, y, 1.0)
        np.testing.assert_allclose(blr.posterior_cov @ h, np.eye(3), atol=1e-8)
        assert blr.ridge == 0.0

    def test_draws_are_seeded(self):
        blr = fit_bayes_logistic(blobs(200))
        a = [m.theta for m in blr.draw(5, seed=3)]
        b = [m.theta for m in blr.draw(5, seed=3)]
        np.testing.assert_array_equal(np.array(a), np.array(b))

    def test_draws_center_on_mean(self):
        blr = fit_bayes_logistic(blobs(200))
        thetas = np.array([m.theta for m in blr.draw(4000, seed=0)])
        se = np.sqrt(np.diag(blr.posterior_cov) / 4000)
        assert np.all(np.abs(thetas.mean(axis=0) - blr.posterior_mean) < 5 * se)

    def test_mean_model_and_scaling(self):
        blr = fit_bayes_logistic(blobs(200))
        np.testing.assert_array_equal(blr.mean_model().theta, blr.posterior_mean)
        np.testing.assert_allclose(blr.scaled(4.0).posterior_cov, 4.0 * blr.posterior_cov)

    def test_rejects_indefinite_covariance(self):
        with pytest.raises(ParameterError, match="positive definite"):
            BayesianLinearModel(np.zeros(2), np.array([[1.0, 0.0], [0.0, -1.0]]))

    def test_dict_round_trip(self):
        blr = fit_bayes_logistic(blobs(100))
        back = BayesianLinearModel.from_dict(blr.to_dict())
        np.testing.assert_allclose(back.posterior_cov, blr.posterior_cov)


# ===================================================================
# Random forest
# ===================================================================

class TestForest:
    def test_best_split_prefers_earlier_feature(self):
        x = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]])
        assert best_split(x, np.array([0, 0, 1, 1]), np.array([0, 1]), 1) == (0, 2.5, 0.0)

    def test_best_split_none_on_constant(self):
        assert best_split(np.ones((4, 1)), np.array([0, 1, 0, 1]), np.array([0]), 1) is None

    def test_fits_threshold(self):
        d = line()
        rf = fit_random_forest(d, n_trees=3, max_depth=2, min_leaf=1, bootstrap=False)
        np.testing.assert_array_equal(rf.predict(d.x), d.y)

    @pytest.mark.parametrize("seed", range(5))
    def test_single_stump_is_exhaustive_best(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(40, 3))
        y = ((x[:, 1] + 0.8 * rng.normal(size=40)) > 0).astype(int)
        d = Dataset(x, y, np.arange(40), continuous_schema(["a", "b", "c"]))
        rf = fit_random_forest(d, n_trees=1, max_depth=1, min_leaf=1, bootstrap=False,
                               max_features=3)
        (tree,) = rf.trees
        best = min(
            stump_impurity(x, y, f, (lo + hi) / 2.0)
            for f in range(3)
            for lo, hi in zip(np.sort(x[:, f])[:-1], np.sort(x[:, f])[1:])
        )
        assert tree.feature[0] >= 0
        assert stump_impurity(x, y, int(tree.feature[0]), float(tree.threshold[0])) == (
            pytest.approx(best, abs=1e-12)
        )

    def test_learns_xor(self):
        train, test = xor(600, seed=0), xor(300, seed=1)
        rf = fit_random_forest(train, n_trees=50, max_depth=8, min_leaf=2, seed=0)
        assert accuracy(rf, test) > 0.9
        assert accuracy(fit_logistic(train), test) < 0.7

    def test_seeded(self):
        d = blobs(200)
        a = fit_random_forest(d, n_trees=10, max_depth=4, seed=7).predict_proba(d.x)
        b = fit_random_forest(d, n_trees=10, max_depth=4, seed=7).predict_proba(d.x)
        np.testing.assert_array_equal(a, b)

    def test_accuracy(self):
        d = blobs(300)
        assert accuracy(fit_random_forest(d, n_trees=20, max_depth=5), d) > 0.9

    def test_max_features_range(self):
        with pytest.raises(ParameterError, match="max_features"):
            fit_random_forest(line(), max_features=2)


# ===================================================================
# Multilayer perceptron
# ===================================================================

class TestMLP:
    def test_backprop_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        params = init_params([3, 4, 1], rng)
        x = rng.standard_normal((10, 3))
        y = (rng.random(10) < 0.5).astype(float)
        _, grads = loss_and_gradients(params, x, y)
        eps = 1e-6
        for layer, (w, _) in enumerate(params):
            for idx in [(0, 0), (w.shape[0] - 1, w.shape[1] - 1)]:
                plus = [(a.copy(), b.copy()) for a, b in params]
                minus = [(a.copy(), b.copy()) for a, b in params]
                plus[layer][0][idx] += eps
                minus[layer][0][idx] -= eps
                numeric = (loss_and_gradients(plus, x, y)[0]
                           - loss_and_gradients(minus, x, y)[0]) / (2 * eps)
                assert grads[layer][0][idx] == pytest.approx(numeric, rel=1e-4, abs=1e-7)

    def test_learns_blobs(self):
        d = blobs(300)
        m = fit_mlp(d, hidden_sizes=(8,), epochs=30, seed=1)
        assert accuracy(m, d) > 0.9

    def test_fits_xor(self):
        d = xor(200, seed=0, spread=0.15)
        m = fit_mlp(d, hidden_sizes=(8,), epochs=500, seed=0)
        assert accuracy(m, d) == 1.0

    def test_zero_learning_rate_keeps_initial_weights(self):
        d = blobs(100)
        m = fit_mlp(d, hidden_sizes=(4,), epochs=5, learning_rate=0.0, seed=3)
        initial = init_params([2, 4, 1], np.random.default_rng(3))
        for (w, b), (w0, b0) in zip(m.layers, initial):
            np.testing.assert_array_equal(w, w0)
            np.testing.assert_array_equal(b, b0)

    def test_seeded(self):
        d = blobs(100)
        a = fit_mlp(d, hidden_sizes=(4,), epochs=3, seed=2).predict_proba(d.x)
        b = fit_mlp(d, hidden_sizes=(4,), epochs=3, seed=2).predict_proba(d.x)
        np.testing.assert_array_equal(a, b)

    def test_rejects_empty_hidden_layer(self):
        with pytest.raises(ParameterError, match="hidden sizes"):
            fit_mlp(blobs(50), hidden_sizes=(0,))


# ===================================================================
# Dispatch
# ===================================================================

class TestFitModel:
    def test_dispatch(self):
        assert fit_model("lr", blobs(100), {"l2": 0.5}).kind == "lr"
        assert fit_model("blr", blobs(100)).kind == "blr"

    def test_unknown_kind(self):
        with pytest.raises(ParameterError, match="unknown model kind 'svm'"):
            fit_model("svm", blobs(50))

    def test_bad_hyperparameter(self):
        with pytest.raises(ParameterError, match="bad hyperparameters for model 'lr'"):
            fit_model("lr", blobs(50), {"depth": 3})
