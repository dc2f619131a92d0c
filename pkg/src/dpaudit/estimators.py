"""Sample-based lower-bound estimators of divergences between mechanism outputs.

Every estimator exposes ``estimate(sample_p, sample_q, rng) -> float`` where the
samplers draw ``(n, d)`` batches, plus ``threshold(prop)`` mapping the privacy
property under test to the value the estimate is compared against. With
probability at least ``1 - beta`` the returned value does not exceed the true
divergence (for MMD: does not exceed ``delta`` when the pair is
``(epsilon, delta)``-indistinguishable).
"""

from __future__ import annotations

import math
import time

import numpy as np
from scipy.spatial.distance import pdist
from sklearn.base import BaseEstimator
from sklearn.pipeline import Pipeline

from .core import Approximate, PrivacyProperty, Pure, Renyi, Sampler
from .models import QuantileScaler, empirical_renyi_from_values, make_function_model


class InfeasibleSampleSizeError(ValueError):
    pass


class IncompatibleInputError(ValueError):
    """The estimator cannot handle the mechanism's output type."""


def _validate_beta(beta: float) -> None:
    if not 0 < beta < 1:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")


# --------------------------------------------------------------------------- Renyi

def empirical_renyi(h, X0, X1, alpha: float) -> float:
    """Empirical variational Renyi objective of the function ``h`` on two batches.

    ``h`` is a callable mapping an ``(n, d)`` batch to ``n`` values (for example a
    fitted model's ``evaluate``), or a precomputed pair of value arrays.
    """
    if not alpha > 1:
        raise ValueError("alpha must exceed 1")
    if callable(h):
        return empirical_renyi_from_values(h(X0), h(X1), alpha)
    h0, h1 = h
    return empirical_renyi_from_values(h0, h1, alpha)


def eta_from_n(n: int, alpha: float, bound: float, beta: float) -> float:
    """Accuracy ``eta`` of the Renyi bound at sample size ``n``; must be at most 1."""
    if n < 1:
        raise ValueError("n must be >= 1")
    _validate_beta(beta)
    const = max(3.0 * math.exp(2.0 * (alpha - 1.0) * bound), 2.0 * math.exp(alpha * bound))
    eta = math.sqrt(const * math.log(2.0 / beta) / n)
    if eta > 1.0:
        raise InfeasibleSampleSizeError(
            f"sample size {n} too small for alpha={alpha}, C={bound}, beta={beta} "
            f"(eta={eta:.3g} > 1)")
    return eta


def renyi_correction(eta: float) -> float:
    return math.log((1.0 + eta) / (1.0 - eta)) if eta < 1.0 else math.inf


def renyi_threshold(prop: PrivacyProperty, alpha: float) -> float:
    if isinstance(prop, Renyi):
        return prop.epsilon
    if isinstance(prop, Pure):
        return min(prop.epsilon, 2.0 * alpha * prop.epsilon**2)
    raise TypeError("the Renyi tester checks pure or Renyi DP, not approximate DP")


def _approximate_threshold(prop: PrivacyProperty) -> float:
    if not isinstance(prop, Approximate):
        raise TypeError(f"this tester checks approximate DP, got {type(prop).__name__}")
    return prop.delta


def _make_pipeline(model, scale_inputs: bool, seed: int) -> Pipeline:
    steps = [("scale", QuantileScaler(random_state=seed))] if scale_inputs else []
    return Pipeline(steps + [("model", model)])


class RenyiEstimator(BaseEstimator):
    """Lower bound on ``R_alpha(P || Q)`` from a bounded function fitted on fresh samples.

    Trains ``h`` on ``n`` draws of each distribution, evaluates the empirical
    objective on ``n`` new draws and subtracts ``log((1 + eta) / (1 - eta))``.

    Args:
      alpha: Renyi order.
      bound: output bound ``C`` of the function class.
      beta: failure probability.
      n: samples per distribution, for training and again for evaluation.
      model: ``"dense"`` or ``"chebyshev"``.
      scale_inputs: map outputs through their training-sample empirical CDF
        before the model; keeps heavy-tailed outputs trainable.
    """

    name = "renyi"

    def __init__(self, alpha=1.5, bound=0.5, beta=1 / 3, n=50000, model="dense",
                 epochs=5, batch_size=256, step_size=0.01, optimizer="sgd",
                 hidden_layer_sizes=(32, 32), degree=10, scale_inputs=True):
        self.alpha = alpha
        self.bound = bound
        self.beta = beta
        self.n = n
        self.model = model
        self.epochs = epochs
        self.batch_size = batch_size
        self.step_size = step_size
        self.optimizer = optimizer
        self.hidden_layer_sizes = hidden_layer_sizes
        self.degree = degree
        self.scale_inputs = scale_inputs
        self.fit_seconds_ = 0.0

    def threshold(self, prop: PrivacyProperty) -> float:
        return renyi_threshold(prop, self.alpha)

    def fit_function(self, X0, X1, rng: np.random.Generator) -> Pipeline:
        """Maximize the empirical objective over the function class on ``(X0, X1)``."""
        seed = int(rng.integers(2**31))
        model = make_function_model(
            self.model, self.bound, "renyi", alpha=self.alpha, epochs=self.epochs,
            batch_size=self.batch_size, step_size=self.step_size, optimizer=self.optimizer,
            hidden_layer_sizes=self.hidden_layer_sizes, degree=self.degree, random_state=seed)
        if self.model == "chebyshev" and not self.scale_inputs:
            lo = float(min(X0.min(), X1.min()))
            hi = float(max(X0.max(), X1.max()))
            model.set_params(input_range=(lo, hi if hi > lo else lo + 1.0))
        pipe = _make_pipeline(model, self.scale_inputs, seed)
        X = np.vstack([X0, X1])
        y = np.concatenate([np.zeros(len(X0)), np.ones(len(X1))])
        start = time.perf_counter()
        pipe.fit(X, y)
        self.fit_seconds_ += time.perf_counter() - start
        return pipe

    def estimate(self, sample_p: Sampler, sample_q: Sampler, rng: np.random.Generator) -> float:
        eta = eta_from_n(self.n, self.alpha, self.bound, self.beta)
        X0, X1 = sample_p(self.n, rng), sample_q(self.n, rng)
        h = self.fit_function(X0, X1, rng)
        Z0, Z1 = sample_p(self.n, rng), sample_q(self.n, rng)
        value = empirical_renyi(h.decision_function, Z0, Z1, self.alpha)
        self.last_details_ = {"heldout_objective": value, "eta": eta}
        return value - renyi_correction(eta)


# --------------------------------------------------------------------------- histogram

def histogram_lambda(universe: int, epsilon: float, beta: float, eta: float) -> float:
    growth = 1.0 + math.exp(2.0 * epsilon)
    return max(4.0 * universe * growth / beta**2, 12.0 * growth / eta**2)


def histogram_statistic(x_counts, y_counts, r: int, epsilon: float) -> float:
    """``sum_j max(0, (x_j - e^eps y_j) / r)`` over the universe."""
    z = (np.asarray(x_counts, float) - math.exp(epsilon) * np.asarray(y_counts, float)) / r
    return float(np.maximum(0.0, z).sum())


def histogram_divergence(sample_p: Sampler, sample_q: Sampler, universe: int, epsilon: float,
                         beta: float, eta: float, rng: np.random.Generator,
                         to_bins=None) -> float:
    """Poissonized histogram lower bound on the hockey-stick divergence.

    ``to_bins`` maps a ``(r, 1)`` batch to integer bins in ``[0, universe)``;
    by default outputs are taken as integers ``1..universe``.
    """
    _validate_beta(beta)
    if not eta > 0:
        raise ValueError("eta must be positive")
    lam = histogram_lambda(universe, epsilon, beta, eta)
    r = int(rng.poisson(lam))
    if r == 0:
        r = int(rng.poisson(lam))
        if r == 0:
            raise RuntimeError("Poisson sample size was zero twice")
    X, Y = sample_p(r, rng), sample_q(r, rng)
    if X.shape[1] != 1:
        raise IncompatibleInputError("the histogram tester needs one-dimensional outputs")
    if to_bins is None:
        def to_bins(batch):
            idx = np.rint(batch[:, 0]).astype(int) - 1
            if idx.min() < 0 or idx.max() >= universe:
                raise ValueError(f"outputs must be integers in 1..{universe}")
            return idx
    x_counts = np.bincount(to_bins(X), minlength=universe)
    y_counts = np.bincount(to_bins(Y), minlength=universe)
    return -eta + histogram_statistic(x_counts, y_counts, r, epsilon)


def quantile_bin_edges(pilot: np.ndarray, universe: int) -> np.ndarray:
    """Interior edges splitting the pilot sample into ``universe`` equal-mass bins."""
    edges = np.quantile(pilot, np.linspace(0.0, 1.0, universe + 1)[1:-1])
    return np.unique(edges)


class HistogramEstimator(BaseEstimator):
    """Hockey-stick lower bound from Poissonized histograms of one-dimensional outputs.

    Continuous outputs are binned into at most ``universe`` bins whose edges are
    quantiles of a pilot sample pooled from both distributions; the pilot draws
    are independent of the estimation sample.
    """

    name = "histogram"

    def __init__(self, epsilon=1.0, beta=1 / 3, eta=0.15, universe=100, pilot_size=2000,
                 discrete=False):
        self.epsilon = epsilon
        self.beta = beta
        self.eta = eta
        self.universe = universe
        self.pilot_size = pilot_size
        self.discrete = discrete
        self.fit_seconds_ = 0.0

    def threshold(self, prop: PrivacyProperty) -> float:
        return _approximate_threshold(prop)

    def estimate(self, sample_p: Sampler, sample_q: Sampler, rng: np.random.Generator) -> float:
        if self.discrete:
            to_bins = None
        else:
            half = max(1, self.pilot_size // 2)
            pilot = np.vstack([sample_p(half, rng), sample_q(half, rng)])
            if pilot.shape[1] != 1:
                raise IncompatibleInputError("the histogram tester needs one-dimensional outputs")
            edges = quantile_bin_edges(pilot[:, 0], self.universe)

            def to_bins(batch):
                return np.searchsorted(edges, batch[:, 0], side="right")
        return histogram_divergence(sample_p, sample_q, self.universe, self.epsilon, self.beta,
                                    self.eta, rng, to_bins=to_bins)


# --------------------------------------------------------------------------- hockey-stick

def build_mixture_sample(sample_p: Sampler, sample_q: Sampler, epsilon: float, m: int,
                         rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Labelled mixture: label 0 (a Q draw) w.p. ``e^eps / (1 + e^eps)``, else label 1 (P)."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    p0 = 1.0 / (1.0 + math.exp(-epsilon))
    labels = (rng.random(m) >= p0).astype(int)
    n1 = int(labels.sum())
    xq = sample_q(m - n1, rng) if m - n1 else None
    xp = sample_p(n1, rng) if n1 else None
    d = (xq if xq is not None else xp).shape[1]
    X = np.empty((m, d))
    if xq is not None:
        X[labels == 0] = xq
    if xp is not None:
        X[labels == 1] = xp
    return X, labels


def hoeffding_gamma(m: int, beta: float) -> float:
    return math.sqrt(math.log(1.0 / beta) / (2.0 * m))


def hockey_stick_from_accuracy(accuracy: float, epsilon: float, m: int, beta: float) -> float:
    e = math.exp(epsilon)
    return (1.0 + e) * (accuracy - hoeffding_gamma(m, beta)) - e


class HockeyStickEstimator(BaseEstimator):
    """Hockey-stick lower bound from the held-out accuracy of a trained classifier.

    Args:
      epsilon: order ``e^epsilon`` of the divergence.
      beta: failure probability of the Hoeffding bound.
      m: size of each of the training and evaluation mixture samples.
      logit_bound: bound on the classifier's logit.
    """

    name = "hockey_stick"

    def __init__(self, epsilon=1.0, beta=1 / 3, m=50000, model="dense", epochs=30,
                 batch_size=256, step_size=0.01, optimizer="sgd", hidden_layer_sizes=(32, 32),
                 degree=10, logit_bound=10.0, scale_inputs=True):
        self.epsilon = epsilon
        self.beta = beta
        self.m = m
        self.model = model
        self.epochs = epochs
        self.batch_size = batch_size
        self.step_size = step_size
        self.optimizer = optimizer
        self.hidden_layer_sizes = hidden_layer_sizes
        self.degree = degree
        self.logit_bound = logit_bound
        self.scale_inputs = scale_inputs
        self.fit_seconds_ = 0.0

    def threshold(self, prop: PrivacyProperty) -> float:
        return _approximate_threshold(prop)

    def fit_classifier(self, X, y, rng):
        seed = int(rng.integers(2**31))
        if np.unique(y).size < 2:
            majority = int(y[0]) if y.size else 0
            return lambda Z: np.full(len(Z), majority)
        model = make_function_model(
            self.model, self.logit_bound, "logistic", epochs=self.epochs,
            batch_size=self.batch_size, step_size=self.step_size, optimizer=self.optimizer,
            hidden_layer_sizes=self.hidden_layer_sizes, degree=self.degree, random_state=seed)
        pipe = _make_pipeline(model, self.scale_inputs, seed)
        start = time.perf_counter()
        pipe.fit(X, y)
        self.fit_seconds_ += time.perf_counter() - start
        # predict_proba > 1/2 is equivalent to a positive logit
        return pipe.predict

    def estimate(self, sample_p: Sampler, sample_q: Sampler, rng: np.random.Generator) -> float:
        _validate_beta(self.beta)
        X, y = build_mixture_sample(sample_p, sample_q, self.epsilon, self.m, rng)
        g = self.fit_classifier(X, y, rng)
        Xe, ye = build_mixture_sample(sample_p, sample_q, self.epsilon, self.m, rng)
        accuracy = float(np.mean(g(Xe) == ye))
        self.last_details_ = {"accuracy": accuracy}
        return hockey_stick_from_accuracy(accuracy, self.epsilon, self.m, self.beta)


# --------------------------------------------------------------------------- MMD

def gaussian_kernel_rows(A: np.ndarray, B: np.ndarray, bandwidth: float) -> np.ndarray:
    """Row-paired Gaussian kernel values ``k(A_i, B_i)``."""
    sq = np.sum((A - B) ** 2, axis=1)
    return np.exp(-sq / (2.0 * bandwidth**2))


def median_bandwidth(pilot: np.ndarray, floor: float = 1e-6) -> float:
    if len(pilot) < 2:
        return 1.0
    return max(floor, float(np.median(pdist(pilot))))


def mmd_statistics(h: np.ndarray) -> tuple[float, float]:
    """Mean and (biased) variance of the paired MMD terms."""
    mu = float(np.mean(h))
    return mu, max(0.0, float(np.mean(h * h)) - mu * mu)


def mmd_delta_from_terms(h: np.ndarray, epsilon: float, beta: float) -> float:
    """Lower-bound ``delta`` implied by the paired terms ``h_i`` (the Bernstein step)."""
    n = len(h)
    if n < 2:
        raise ValueError("the MMD estimator needs n >= 2")
    _validate_beta(beta)
    mu, var = mmd_statistics(h)
    log_term = math.log(2.0 / beta)
    m_hat = (mu - math.sqrt(2.0 * var * log_term / n) - 28.0 * log_term / (3.0 * (n - 1))
             - (math.exp(epsilon) - 1.0) ** 2)
    a = math.exp(epsilon) - math.exp(-epsilon)
    b = 1.0 + math.exp(-epsilon)
    return (math.sqrt(max(0.0, a * a + b * m_hat)) - a) / b


class MMDEstimator(BaseEstimator):
    """Lower bound on ``delta`` from a Bernstein bound on the linear-time MMD statistic.

    The Gaussian kernel bandwidth is ``bandwidth`` when given, otherwise the
    median pairwise distance of a pilot sample pooled from both distributions.
    """

    name = "mmd"

    def __init__(self, epsilon=1.0, beta=1 / 3, n=50000, bandwidth=None, pilot_size=500):
        self.epsilon = epsilon
        self.beta = beta
        self.n = n
        self.bandwidth = bandwidth
        self.pilot_size = pilot_size
        self.fit_seconds_ = 0.0

    def threshold(self, prop: PrivacyProperty) -> float:
        return _approximate_threshold(prop)

    def estimate(self, sample_p: Sampler, sample_q: Sampler, rng: np.random.Generator) -> float:
        if self.n < 2:
            raise ValueError("the MMD estimator needs n >= 2")
        bw = self.bandwidth
        if bw is None:
            half = max(1, self.pilot_size // 2)
            bw = median_bandwidth(np.vstack([sample_p(half, rng), sample_q(half, rng)]))
        X, X2 = sample_p(self.n, rng), sample_p(self.n, rng)
        Y, Y2 = sample_q(self.n, rng), sample_q(self.n, rng)
        h = (gaussian_kernel_rows(X, X2, bw) - 2.0 * gaussian_kernel_rows(X, Y, bw)
             + gaussian_kernel_rows(Y, Y2, bw))
        self.last_details_ = {"bandwidth": bw, "mmd2_mean": float(np.mean(h))}
        return mmd_delta_from_terms(h, self.epsilon, self.beta)


ESTIMATORS = {
    "renyi": RenyiEstimator,
    "hockey_stick": HockeyStickEstimator,
    "mmd": MMDEstimator,
    "histogram": HistogramEstimator,
}


def make_estimator(name: str, prop: PrivacyProperty | None = None, **params):
    """Build a registered estimator; ``epsilon`` defaults to the property's when relevant."""
    if name not in ESTIMATORS:
        raise KeyError(f"unknown estimator {name!r}; choose from {sorted(ESTIMATORS)}")
    cls = ESTIMATORS[name]
    if name != "renyi" and prop is not None and "epsilon" not in params:
        params["epsilon"] = prop.epsilon
    return cls(**params)
