import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from dpaudit.models import (BoundedDenseNet, ChebyshevFunction, EmpiricalRenyi, LogisticLoss,
                            OptimizerConfig, QuantileScaler, empirical_renyi_from_values,
                            make_function_model, make_objective)


def two_gaussians(n=2000, d=1, gap=1.0, seed=0):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(gap / 2, 0.5, (n, d)), rng.normal(-gap / 2, 0.5, (n, d))])
    y = np.r_[np.zeros(n), np.ones(n)]
    return X, y


def numeric_gradient(fn, theta, h=1e-6):
    grad = np.empty_like(theta)
    for i in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (fn(up) - fn(down)) / (2 * h)
    return grad


class TestObjectives:
    def test_renyi_frozen_value(self):
        # h(x) = x on X0 = [1], X1 = [0], alpha = 2: 2 * log e^1 - log e^0
        assert empirical_renyi_from_values([1.0], [0.0], 2.0) == pytest.approx(2.0, abs=1e-15)

    @given(st.floats(-5, 5), st.floats(1.01, 8.0), st.integers(1, 20), st.integers(1, 20))
    def test_constant_function_gives_exactly_zero(self, c, alpha, n0, n1):
        assert empirical_renyi_from_values(np.full(n0, c), np.full(n1, c), alpha) == 0.0

    def test_value_and_grad_matches_value(self):
        rng = np.random.default_rng(0)
        h = rng.normal(size=12)
        y = np.r_[np.zeros(5), np.ones(7)]
        obj = EmpiricalRenyi(1.7)
        value, grad = obj.value_and_grad(h, y)
        assert value == pytest.approx(obj.value(h[:5], h[5:]))
        np.testing.assert_allclose(
            grad, numeric_gradient(lambda v: obj.value_and_grad(v, y)[0], h), rtol=1e-6, atol=1e-9)

    def test_logistic_loss_gradient(self):
        rng = np.random.default_rng(1)
        z = rng.normal(size=9)
        y = (rng.random(9) > 0.5).astype(float)
        obj = LogisticLoss()
        _, grad = obj.value_and_grad(z, y)
        np.testing.assert_allclose(
            grad, numeric_gradient(lambda v: obj.value_and_grad(v, y)[0], z), rtol=1e-6, atol=1e-10)

    def test_unknown_objective(self):
        with pytest.raises(ValueError):
            make_objective("hinge")


MODEL_CASES = [
    (BoundedDenseNet, dict(hidden_layer_sizes=(6, 5)), 2),
    (ChebyshevFunction, dict(degree=6), 1),
]


class TestGradients:
    @pytest.mark.parametrize("cls,kwargs,d", MODEL_CASES)
    @pytest.mark.parametrize("objective", ["renyi", "logistic"])
    def test_parameter_gradient_matches_central_differences(self, cls, kwargs, d, objective):
        rng = np.random.default_rng(7)
        model = cls(bound=2.0, objective=objective, alpha=1.5, **kwargs)
        X = rng.uniform(-1, 1, (40, d))
        y = np.r_[np.zeros(20), np.ones(20)]
        obj = model._objective()
        for _ in range(5):
            theta = rng.normal(0, 0.5, model._init_params(d, rng).size)
            _, grad = model.value_and_grad(obj, X, y, theta)
            fd = numeric_gradient(lambda t: model.value_and_grad(obj, X, y, t)[0], theta)
            rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12)
            assert rel < 1e-4


class TestBoundedness:
    @pytest.mark.parametrize("cls,kwargs,d", MODEL_CASES)
    def test_outputs_inside_bound_on_a_million_probes(self, cls, kwargs, d):
        X, y = two_gaussians(500, d)
        model = cls(bound=0.5, epochs=2, random_state=0, **kwargs).fit(X, y)
        # push parameters far out so the squashing does the work
        model.params_ = model.params_ * 50.0
        probes = np.random.default_rng(1).normal(0, 100, (1_000_000, d))
        out = model.evaluate(probes)
        assert np.all(np.abs(out) <= 0.5)

    @settings(max_examples=15, deadline=None)
    @given(st.floats(0.01, 20.0), st.integers(0, 1000))
    def test_any_bound_any_weights(self, bound, seed):
        rng = np.random.default_rng(seed)
        model = BoundedDenseNet(bound=bound, hidden_layer_sizes=(4,))
        model.params_ = rng.normal(0, 10, model.n_params(1))
        model.n_features_in_ = 1
        out = model.evaluate(rng.normal(0, 1e3, (2000, 1)))
        assert np.all(np.abs(out) <= bound)


class TestChebyshev:
    def test_frozen_value(self):
        model = ChebyshevFunction(bound=10.0, degree=1)
        model.params_ = np.array([0.0, 1.0])
        model.n_features_in_ = 1
        # T_1(x) = x, so the output is 10 tanh(0.3)
        assert model.evaluate([[0.3]])[0] == pytest.approx(10 * math.tanh(0.3), abs=1e-12)
        assert model.evaluate([[0.3]])[0] == pytest.approx(2.9131, abs=1e-4)

    def test_input_is_clamped(self):
        model = ChebyshevFunction(bound=1.0, degree=3, input_range=(0.0, 2.0))
        model.params_ = np.array([0.1, 0.2, 0.3, 0.4])
        model.n_features_in_ = 1
        assert model.evaluate([[5.0]]) == pytest.approx(model.evaluate([[2.0]]))

    def test_rejects_multivariate_input(self):
        X, y = two_gaussians(50, d=2)
        with pytest.raises(ValueError, match="one-dimensional"):
            ChebyshevFunction().fit(X, y)

    def test_sgd_reaches_grid_maximum(self):
        X, y = two_gaussians(4000, gap=1.0, seed=3)
        model = ChebyshevFunction(bound=1.0, degree=1, input_range=(-3, 3), step_size=0.1,
                                  epochs=100, random_state=0).fit(X, y)
        obj = EmpiricalRenyi(1.5)
        X0, X1 = X[y == 0], X[y == 1]
        fitted = obj.value(model.evaluate(X0), model.evaluate(X1))
        grid = []
        probe = ChebyshevFunction(bound=1.0, degree=1, input_range=(-3, 3))
        probe.n_features_in_ = 1
        for w0 in np.linspace(-3, 3, 31):
            for w1 in np.linspace(-10, 10, 81):
                probe.params_ = np.array([w0, w1])
                grid.append(obj.value(probe.evaluate(X0), probe.evaluate(X1)))
        assert fitted >= max(grid) - 0.01
        assert fitted > 0.1


class TestFitting:
    def test_training_improves_objective(self):
        X, y = two_gaussians(3000, gap=1.5)
        model = BoundedDenseNet(bound=1.0, epochs=5, random_state=0).fit(X, y)
        hist = model.objective_history_
        assert len(hist) == 6
        assert max(hist) > hist[0]

    def test_classifier_separates(self):
        X, y = two_gaussians(3000, gap=3.0)
        clf = make_function_model("dense", 10.0, "logistic", epochs=10, random_state=1).fit(X, y)
        assert np.mean(clf.predict(X) == y) > 0.9
        proba = clf.predict_proba(X)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0)

    def test_seeded_fit_is_reproducible(self):
        X, y = two_gaussians(1000)
        a = BoundedDenseNet(random_state=4, epochs=2).fit(X, y).params_
        b = BoundedDenseNet(random_state=4, epochs=2).fit(X, y).params_
        np.testing.assert_array_equal(a, b)

    def test_sklearn_conventions(self):
        model = BoundedDenseNet(bound=0.3, hidden_layer_sizes=(8,))
        twin = clone(model)
        assert twin.get_params() == model.get_params()
        with pytest.raises(NotFittedError):
            model.evaluate([[0.0]])

    def test_label_validation(self):
        with pytest.raises(ValueError, match="0 or 1"):
            BoundedDenseNet().fit([[0.0], [1.0]], [0, 2])

    def test_single_class_fit_is_a_noop(self):
        model = BoundedDenseNet(random_state=0).fit([[0.0], [1.0]], [0, 0])
        assert model.objective_history_ == []

    def test_feature_count_checked(self):
        X, y = two_gaussians(100)
        model = BoundedDenseNet(epochs=1).fit(X, y)
        with pytest.raises(ValueError, match="features"):
            model.evaluate(np.zeros((3, 2)))

    @pytest.mark.parametrize("kwargs", [dict(epochs=0), dict(step_size=0.0),
                                        dict(method="lbfgs"), dict(dtype="int32")])
    def test_optimizer_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            OptimizerConfig(**kwargs)

    def test_adam_option(self):
        X, y = two_gaussians(2000, gap=1.5)
        model = BoundedDenseNet(optimizer="adam", step_size=0.001, epochs=2, random_state=0)
        model.fit(X, y)
        assert model.objective_history_[-1] >= model.objective_history_[0] - 1e-9

    def test_unknown_model_kind(self):
        with pytest.raises(ValueError):
            make_function_model("forest", 1.0, "renyi")


class TestQuantileScaler:
    def test_maps_to_signed_unit_interval(self):
        X = np.random.default_rng(0).standard_cauchy((1000, 1))
        Z = QuantileScaler().fit(X).transform(X)
        assert Z.min() >= -1 and Z.max() <= 1
        assert abs(np.median(Z)) < 0.01

    @given(st.lists(st.floats(-1e12, 1e12), min_size=2, max_size=40))
    def test_monotone(self, values):
        X = np.asarray(values)[:, None]
        scaler = QuantileScaler().fit(X)
        order = np.argsort(X[:, 0])
        Z = scaler.transform(X)[order, 0]
        assert np.all(np.diff(Z) >= 0)

    def test_reference_subsampled(self):
        X = np.arange(50000.0)[:, None]
        scaler = QuantileScaler(max_reference=1000, random_state=0).fit(X)
        assert scaler.reference_.shape == (1000, 1)
