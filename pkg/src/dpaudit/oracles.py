"""Reference divergences for analytically tractable distribution pairs.

These are independent of the sample-based estimators and serve as ground
truth in the test suite and the ``oracle`` CLI command.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Union

import numpy as np
from scipy import integrate, stats

_QUAD_RTOL = 1e-8
_WINDOW = 12.0


@dataclasses.dataclass(frozen=True)
class Laplace:
    mu: float
    b: float

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError("Laplace scale must be positive")

    def pdf(self, x):
        return stats.laplace.pdf(x, self.mu, self.b)

    def logpdf(self, x):
        return stats.laplace.logpdf(x, self.mu, self.b)

    def window(self) -> tuple[float, float]:
        return self.mu - _WINDOW * self.b, self.mu + _WINDOW * self.b

    def sample(self, n, rng):
        return rng.laplace(self.mu, self.b, size=n)


@dataclasses.dataclass(frozen=True)
class Gaussian:
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("Gaussian sigma must be positive")

    def pdf(self, x):
        return stats.norm.pdf(x, self.mu, self.sigma)

    def logpdf(self, x):
        return stats.norm.logpdf(x, self.mu, self.sigma)

    def window(self) -> tuple[float, float]:
        return self.mu - _WINDOW * self.sigma, self.mu + _WINDOW * self.sigma

    def sample(self, n, rng):
        return rng.normal(self.mu, self.sigma, size=n)


@dataclasses.dataclass(frozen=True)
class Discrete:
    """Probability vector over the support points ``support`` (default 0..k-1)."""

    probs: tuple[float, ...]
    support: tuple[float, ...] | None = None

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("discrete probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "probs", tuple(float(v) for v in p))
        if self.support is None:
            object.__setattr__(self, "support", tuple(float(i) for i in range(p.size)))
        elif len(self.support) != p.size:
            raise ValueError("support and probabilities differ in length")

    @property
    def p(self) -> np.ndarray:
        return np.asarray(self.probs)

    @property
    def points(self) -> np.ndarray:
        return np.asarray(self.support, dtype=float)

    def sample(self, n, rng):
        return rng.choice(self.points, size=n, p=self.p)


AnalyticDistribution = Union[Laplace, Gaussian, Discrete]


def _aligned(P: Discrete, Q: Discrete) -> tuple[np.ndarray, np.ndarray]:
    pts = sorted(set(P.support) | set(Q.support))
    p = np.zeros(len(pts))
    q = np.zeros(len(pts))
    for v, w in zip(P.support, P.probs):
        p[pts.index(v)] += w
    for v, w in zip(Q.support, Q.probs):
        q[pts.index(v)] += w
    return p, q


def _check_kinds(P, Q):
    if isinstance(P, Discrete) != isinstance(Q, Discrete):
        raise TypeError("cannot mix discrete and continuous distributions")


def _integrate(fn, P, Q) -> float:
    lo = min(P.window()[0], Q.window()[0])
    hi = max(P.window()[1], Q.window()[1])
    # split at both centres so the quadrature sees the Laplace kinks; the
    # infinite end pieces carry the tails beyond the windows
    cuts = [-math.inf, *sorted({lo, hi, P.mu, Q.mu}), math.inf]
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        val, _ = integrate.quad(fn, a, b, epsrel=_QUAD_RTOL, epsabs=0.0, limit=500)
        total += val
    return total


def renyi_oracle(P: AnalyticDistribution, Q: AnalyticDistribution, alpha: float) -> float:
    """Renyi divergence ``R_alpha(P || Q)``."""
    if not alpha > 1:
        raise ValueError("alpha must exceed 1")
    _check_kinds(P, Q)
    if isinstance(P, Discrete):
        p, q = _aligned(P, Q)
        if np.any((p > 0) & (q == 0)):
            raise ValueError("support of Q does not cover the support of P")
        mask = p > 0
        terms = p[mask] ** alpha * q[mask] ** (1.0 - alpha)
        return float(math.log(terms.sum()) / (alpha - 1.0))

    def integrand(x):
        with np.errstate(invalid="ignore"):
            log_ratio = alpha * P.logpdf(x) + (1.0 - alpha) * Q.logpdf(x)
        # far out in the tails both log-densities underflow to -inf
        return math.exp(log_ratio) if math.isfinite(log_ratio) else 0.0

    return math.log(_integrate(integrand, P, Q)) / (alpha - 1.0)


def hockey_stick_oracle(P: AnalyticDistribution, Q: AnalyticDistribution,
                        epsilon: float) -> float:
    """``E_Q[max(0, dP/dQ - e^epsilon)]``."""
    _check_kinds(P, Q)
    e = math.exp(epsilon)
    if isinstance(P, Discrete):
        p, q = _aligned(P, Q)
        return float(np.maximum(0.0, p - e * q).sum())

    def integrand(x):
        return max(0.0, P.pdf(x) - e * Q.pdf(x))

    return _integrate(integrand, P, Q)


def hockey_stick_hahn(P: Discrete, Q: Discrete, epsilon: float) -> float:
    """``P(A) - e^epsilon Q(A)`` on the positive set ``A = {dP/dQ >= e^epsilon}``."""
    e = math.exp(epsilon)
    p, q = _aligned(P, Q)
    positive = p >= e * q
    return float(p[positive].sum() - e * q[positive].sum())


def bayes_accuracy(P: Discrete, Q: Discrete, epsilon: float) -> float:
    """Best accuracy on the mixture labelling Q-draws 0 (weight e^eps) and P-draws 1."""
    e = math.exp(epsilon)
    p, q = _aligned(P, Q)
    w1, w0 = 1.0 / (1.0 + e), e / (1.0 + e)
    return float(np.maximum(w1 * p, w0 * q).sum())


def gaussian_kernel(bandwidth: float = 1.0):
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")

    def k(x, y):
        d = np.subtract.outer(np.asarray(x, float), np.asarray(y, float))
        return np.exp(-d**2 / (2.0 * bandwidth**2))

    k.bandwidth = bandwidth
    return k


def _expected_kernel(A, B, bandwidth: float) -> float:
    """``E k(X, Y)`` for independent ``X ~ A``, ``Y ~ B`` under a Gaussian kernel."""
    if isinstance(A, Discrete) and isinstance(B, Discrete):
        K = gaussian_kernel(bandwidth)(A.points, B.points)
        return float(A.p @ K @ B.p)
    if isinstance(A, Gaussian) and isinstance(B, Gaussian):
        s2 = bandwidth**2 + A.sigma**2 + B.sigma**2
        return float(bandwidth / math.sqrt(s2) * math.exp(-(A.mu - B.mu)**2 / (2 * s2)))
    if isinstance(A, Discrete) and isinstance(B, Gaussian):
        return sum(w * _expected_kernel(Gaussian(v, 1e-300), B, bandwidth)
                   for v, w in zip(A.support, A.probs))
    if isinstance(A, Gaussian) and isinstance(B, Discrete):
        return _expected_kernel(B, A, bandwidth)
    raise TypeError("closed-form kernel expectations need discrete or Gaussian inputs")


def mmd_oracle(P: AnalyticDistribution, Q: AnalyticDistribution, kernel=None,
               bandwidth: float = 1.0) -> float:
    """Maximum mean discrepancy ``sqrt(E k(X,X') - 2 E k(X,Y) + E k(Y,Y'))``.

    A custom ``kernel(x, y) -> matrix`` is accepted for discrete inputs; its Gram
    matrix on the joint support must be positive semi-definite.
    """
    if kernel is not None:
        if not (isinstance(P, Discrete) and isinstance(Q, Discrete)):
            raise TypeError("custom kernels are supported for discrete inputs only")
        p, q = _aligned(P, Q)
        pts = np.asarray(sorted(set(P.support) | set(Q.support)))
        K = np.asarray(kernel(pts, pts), dtype=float)
        if not np.allclose(K, K.T) or np.linalg.eigvalsh(K).min() < -1e-10:
            raise ValueError("kernel Gram matrix is not positive semi-definite")
        w = p - q
        return float(math.sqrt(max(0.0, w @ K @ w)))
    sq = (_expected_kernel(P, P, bandwidth) - 2 * _expected_kernel(P, Q, bandwidth)
          + _expected_kernel(Q, Q, bandwidth))
    return float(math.sqrt(max(0.0, sq)))


def dp_bound_check(epsilon: float, delta: float) -> float:
    """Largest MMD (unit-bounded kernel) an (epsilon, delta)-DP pair can have."""
    return math.exp(epsilon) - 1.0 + (1.0 + math.exp(-epsilon)) * delta


def randomized_response_pair(epsilon: float) -> tuple[Discrete, Discrete]:
    """Output distributions of randomized response on input bits 1 and 0."""
    keep = math.exp(epsilon) / (1.0 + math.exp(epsilon))
    return Discrete((1.0 - keep, keep)), Discrete((keep, 1.0 - keep))


def renyi_pure_dp_ceiling(epsilon: float, alpha: float) -> float:
    return min(epsilon, 2.0 * alpha * epsilon**2)
