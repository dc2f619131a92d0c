"""Bounded function classes and the first-order optimizer that fits them.

Both model kinds squash their raw output through ``C * tanh(.)`` so every
evaluation lies strictly inside ``(-C, C)``. Gradients are hand-derived; the
architectures are small and fixed.

The models follow the scikit-learn estimator API. ``fit(X, y)`` optimizes the
configured objective: for ``"renyi"``, ``y`` marks which distribution each row
was drawn from (0 for P, 1 for Q); for ``"logistic"``, ``y`` is the class label.
"""

from __future__ import annotations

import dataclasses
import time

import numpy as np
from numpy.polynomial import chebyshev
from scipy.special import expit
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y


class NonFiniteObjectiveError(FloatingPointError):
    pass


def logsumexp(z: np.ndarray) -> float:
    """``log(sum(exp(z)))`` for a 1-D array (lighter than scipy's on small batches)."""
    top = z.max()
    return float(top + np.log(np.exp(z - top).sum()))


# --------------------------------------------------------------------------- objectives

@dataclasses.dataclass(frozen=True)
class EmpiricalRenyi:
    """Empirical variational Renyi objective on samples of P (label 0) and Q (label 1)."""

    alpha: float = 1.5
    maximize = True

    def value(self, h0: np.ndarray, h1: np.ndarray) -> float:
        return empirical_renyi_from_values(h0, h1, self.alpha)

    def value_and_grad(self, h: np.ndarray, y: np.ndarray):
        a = self.alpha
        m0, m1 = y == 0, y == 1
        z0 = (a - 1.0) * h[m0]
        z1 = a * h[m1]
        l0, l1 = logsumexp(z0), logsumexp(z1)
        value = a / (a - 1.0) * (l0 - np.log(z0.size)) - (l1 - np.log(z1.size))
        grad = np.zeros_like(h)
        grad[m0] = a * np.exp(z0 - l0)
        grad[m1] = -a * np.exp(z1 - l1)
        return float(value), grad


@dataclasses.dataclass(frozen=True)
class LogisticLoss:
    """Mean binary cross-entropy of ``sigmoid(logit)`` against 0/1 labels."""

    maximize = False

    def value_and_grad(self, logit: np.ndarray, y: np.ndarray):
        # log(1 + e^z) - y z, stable for both signs
        value = np.mean(np.logaddexp(0.0, logit) - y * logit)
        grad = (expit(logit) - y) / logit.size
        return float(value), grad


def empirical_renyi_from_values(h0, h1, alpha: float) -> float:
    """``alpha/(alpha-1) log mean e^{(alpha-1) h0} - log mean e^{alpha h1}``."""
    h0 = np.asarray(h0, dtype=float).ravel()
    h1 = np.asarray(h1, dtype=float).ravel()
    if h0.size == 0 or h1.size == 0:
        raise ValueError("empirical Renyi objective needs non-empty samples")
    # the objective is invariant to shifting h; shifting by one of its values
    # makes a constant h evaluate to exactly zero
    shift = h0[0]
    h0, h1 = h0 - shift, h1 - shift
    first = logsumexp((alpha - 1.0) * h0) - np.log(h0.size)
    second = logsumexp(alpha * h1) - np.log(h1.size)
    return float(alpha / (alpha - 1.0) * first - second)


def make_objective(name: str, alpha: float = 1.5):
    if name == "renyi":
        return EmpiricalRenyi(alpha)
    if name == "logistic":
        return LogisticLoss()
    raise ValueError(f"unknown objective {name!r}")


# --------------------------------------------------------------------------- optimizer

@dataclasses.dataclass(frozen=True)
class OptimizerConfig:
    epochs: int = 5
    batch_size: int = 256
    step_size: float = 0.01
    method: str = "sgd"
    monitor_size: int = 8192
    dtype: str = "float32"

    def __post_init__(self):
        if (self.epochs < 1 or self.batch_size < 1 or not self.step_size > 0
                or self.monitor_size < 1):
            raise ValueError("epochs, batch_size and step_size must be positive")
        if np.dtype(self.dtype) not in (np.float32, np.float64):
            raise ValueError("training dtype must be float32 or float64")
        if self.method not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.method!r}")


def maximize(model, objective, X: np.ndarray, y: np.ndarray, config: OptimizerConfig,
             rng: np.random.Generator):
    """Mini-batch first-order optimization of ``objective`` over ``model``'s parameters.

    Ascends for maximization objectives and descends for losses. The returned
    model carries the parameters with the best objective seen at an epoch
    boundary (initialization included), measured on a fixed subsample of at
    most ``config.monitor_size`` training rows, so training never ends worse
    than it started on that subsample.
    """
    sign = 1.0 if objective.maximize else -1.0
    n = X.shape[0]
    work = np.dtype(config.dtype)
    X, y = np.asarray(X, dtype=work), np.asarray(y, dtype=work)
    theta = np.asarray(model.params_, dtype=work)
    # the epoch-level best is tracked on a fixed subsample to keep epochs cheap
    monitor = rng.choice(n, config.monitor_size, replace=False) if n > config.monitor_size else None
    if monitor is not None and np.unique(y[monitor]).size < np.unique(y).size:
        monitor = None
    Xm, ym = (X, y) if monitor is None else (X[monitor], y[monitor])

    def full_value(params):
        out, _ = model._forward(Xm, params)
        value, _ = objective.value_and_grad(model._squash(out), ym)
        if not np.isfinite(value):
            raise NonFiniteObjectiveError("objective became non-finite during training")
        return sign * value

    best_theta, best_value = theta.copy(), full_value(theta)
    history = [best_value]
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2, tiny = 0.9, 0.999, 1e-8
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            yb = y[idx]
            if objective.maximize and (np.all(yb == 0) or np.all(yb == 1)):
                continue
            _, g = model.value_and_grad(objective, X[idx], yb, theta)
            g = sign * g
            if not np.all(np.isfinite(g)):
                raise NonFiniteObjectiveError("gradient became non-finite during training")
            step += 1
            if config.method == "sgd":
                theta = theta + config.step_size * g
            else:
                m = b1 * m + (1 - b1) * g
                v = b2 * v + (1 - b2) * g * g
                mhat = m / (1 - b1**step)
                vhat = v / (1 - b2**step)
                theta = theta + config.step_size * mhat / (np.sqrt(vhat) + tiny)
        value = full_value(theta)
        history.append(value)
        if value >= best_value:
            best_theta, best_value = theta.copy(), value
    model.params_ = best_theta.astype(np.float64)
    model.objective_history_ = [sign * h for h in history]
    return model


# --------------------------------------------------------------------------- models

class _BoundedModel(BaseEstimator):
    """Shared fit/evaluate plumbing; subclasses define ``_init_params`` and ``_forward``."""

    def _squash(self, raw):
        return self.bound * np.tanh(raw)

    def _objective(self):
        return make_objective(self.objective, self.alpha)

    def _config(self):
        return OptimizerConfig(self.epochs, self.batch_size, self.step_size, self.optimizer)

    def value_and_grad(self, objective, X, y, params=None):
        """Objective value and its gradient with respect to the flat parameter vector."""
        params = self.params_ if params is None else params
        raw, cache = self._forward(X, params)
        t = np.tanh(raw)
        value, dh = objective.value_and_grad(self.bound * t, y)
        draw = dh * self.bound * (1.0 - t * t)
        return value, self._backward(cache, draw, params)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        y = y.astype(float)
        if not set(np.unique(y)) <= {0.0, 1.0}:
            raise ValueError("labels must be 0 or 1")
        rng = np.random.default_rng(self.random_state)
        self.n_features_in_ = X.shape[1]
        self._validate_input_dim(X.shape[1])
        self.params_ = self._init_params(X.shape[1], rng)
        start = time.perf_counter()
        if np.unique(y).size < 2:
            # a single class (or a single sample of P/Q) gives nothing to fit
            self.objective_history_ = []
        else:
            maximize(self, self._objective(), X, y, self._config(), rng)
        self.fit_seconds_ = time.perf_counter() - start
        return self

    def evaluate(self, X) -> np.ndarray:
        """Model output, strictly inside ``(-bound, bound)``."""
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        raw, _ = self._forward(X, self.params_)
        return self._squash(raw)

    decision_function = evaluate

    def predict_proba(self, X) -> np.ndarray:
        p1 = expit(self.evaluate(X))
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X) -> np.ndarray:
        return (self.evaluate(X) > 0).astype(int)

    def _validate_input_dim(self, d: int) -> None:
        pass


class BoundedDenseNet(_BoundedModel):
    """Fully connected tanh network with output ``bound * tanh(raw)``.

    Parameters
    ----------
    bound : float
        Output bound ``C``.
    hidden_layer_sizes : tuple of int
        Widths of the hidden layers.
    objective : {"renyi", "logistic"}
    alpha : float
        Renyi order, used by the ``"renyi"`` objective only.
    epochs, batch_size, step_size, optimizer
        Optimizer settings; see ``OptimizerConfig``.
    random_state : int or None
        Seed for initialization and batch shuffling.
    """

    def __init__(self, bound=1.0, hidden_layer_sizes=(32, 32), objective="renyi", alpha=1.5,
                 epochs=5, batch_size=256, step_size=0.01, optimizer="sgd",
                 random_state=None):
        self.bound = bound
        self.hidden_layer_sizes = hidden_layer_sizes
        self.objective = objective
        self.alpha = alpha
        self.epochs = epochs
        self.batch_size = batch_size
        self.step_size = step_size
        self.optimizer = optimizer
        self.random_state = random_state

    def _shapes(self, d):
        widths = [d, *self.hidden_layer_sizes, 1]
        return [(a, b) for a, b in zip(widths[:-1], widths[1:])]

    def n_params(self, d: int) -> int:
        return sum(a * b + b for a, b in self._shapes(d))

    def _init_params(self, d, rng):
        chunks = []
        for a, b in self._shapes(d):
            chunks.append(rng.normal(0.0, np.sqrt(1.0 / a), size=a * b))
            chunks.append(np.zeros(b))
        return np.concatenate(chunks)

    def _layout(self, d):
        """``(weight slice, weight shape, bias slice)`` per layer, cached per input width."""
        key = (d, tuple(self.hidden_layer_sizes))
        cached = getattr(self, "_layout_cache", None)
        if cached is None or cached[0] != key:
            layout, pos = [], 0
            for a, b in self._shapes(d):
                layout.append((slice(pos, pos + a * b), (a, b), slice(pos + a * b, pos + a * b + b)))
                pos += a * b + b
            self._layout_cache = cached = (key, layout)
        return cached[1]

    def _unpack(self, params, d):
        return [(params[w].reshape(shape), params[b]) for w, shape, b in self._layout(d)]

    def _forward(self, X, params):
        layers = self._unpack(params, X.shape[1])
        acts = [X]
        a = X
        for W, c in layers[:-1]:
            a = np.tanh(a @ W + c)
            acts.append(a)
        W, c = layers[-1]
        return (a @ W + c).ravel(), (layers, acts)

    def _backward(self, cache, draw, params):
        layers, acts = cache
        layout = self._layout(acts[0].shape[1])
        grad = np.empty_like(params)
        delta = draw[:, None]
        for i in range(len(layers) - 1, -1, -1):
            w_slice, _, b_slice = layout[i]
            a_in = acts[i]
            grad[w_slice] = (a_in.T @ delta).ravel()
            grad[b_slice] = delta.sum(axis=0)
            if i:
                delta = (delta @ layers[i][0].T) * (1.0 - a_in * a_in)
        return grad


class ChebyshevFunction(_BoundedModel):
    """``bound * tanh(sum_j w_j T_j(x~))`` for scalar inputs.

    ``x~`` maps ``input_range`` affinely onto ``[-1, 1]`` and is clamped there.
    """

    def __init__(self, bound=1.0, degree=10, input_range=(-1.0, 1.0), objective="renyi",
                 alpha=1.5, epochs=5, batch_size=256, step_size=0.01, optimizer="sgd",
                 random_state=None):
        self.bound = bound
        self.degree = degree
        self.input_range = input_range
        self.objective = objective
        self.alpha = alpha
        self.epochs = epochs
        self.batch_size = batch_size
        self.step_size = step_size
        self.optimizer = optimizer
        self.random_state = random_state

    def _validate_input_dim(self, d):
        if d != 1:
            raise ValueError("ChebyshevFunction supports one-dimensional inputs only")

    def _init_params(self, d, rng):
        return np.zeros(self.degree + 1)

    def basis(self, X) -> np.ndarray:
        lo, hi = self.input_range
        x = np.clip((2.0 * np.asarray(X, float)[:, 0] - (lo + hi)) / (hi - lo), -1.0, 1.0)
        return chebyshev.chebvander(x, self.degree)

    def _forward(self, X, params):
        V = self.basis(X)
        return V @ params, V

    def _backward(self, cache, draw, params):
        return cache.T @ draw


class QuantileScaler(TransformerMixin, BaseEstimator):
    """Per-feature empirical CDF mapped to ``[-1, 1]`` (mid-rank for ties).

    A fixed monotone transform once fitted, so bounded functions of the
    scaled input remain bounded measurable functions of the raw output.
    """

    def __init__(self, max_reference=20000, random_state=None):
        self.max_reference = max_reference
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        if X.shape[0] > self.max_reference:
            rng = np.random.default_rng(self.random_state)
            X = X[rng.choice(X.shape[0], self.max_reference, replace=False)]
        self.reference_ = np.sort(X, axis=0)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "reference_")
        X = check_array(X, dtype=float)
        n = self.reference_.shape[0]
        out = np.empty_like(X)
        for j in range(X.shape[1]):
            col = self.reference_[:, j]
            left = np.searchsorted(col, X[:, j], side="left")
            right = np.searchsorted(col, X[:, j], side="right")
            out[:, j] = (left + right) / n - 1.0
        return out


def make_function_model(kind: str, bound: float, objective: str, alpha: float = 1.5,
                        epochs: int = 5, batch_size: int = 256, step_size: float = 0.01,
                        optimizer: str = "sgd", hidden_layer_sizes=(32, 32), degree: int = 10,
                        random_state=None):
    common = dict(bound=bound, objective=objective, alpha=alpha, epochs=epochs,
                  batch_size=batch_size, step_size=step_size, optimizer=optimizer,
                  random_state=random_state)
    if kind == "dense":
        return BoundedDenseNet(hidden_layer_sizes=tuple(hidden_layer_sizes), **common)
    if kind == "chebyshev":
        return ChebyshevFunction(degree=degree, **common)
    raise ValueError(f"unknown function model {kind!r}")
