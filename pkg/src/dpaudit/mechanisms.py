"""Correct and deliberately broken mechanisms used as audit targets.

Every mechanism is a pure function of ``(dataset, parameters, rng)``. The
``sample`` methods draw ``n`` independent outputs at once and return an
``(n, d)`` array.
"""

from __future__ import annotations

import dataclasses
import math
from collections.abc import Callable, Sequence

import numpy as np

from dpaudit.core import (DEFAULT_HI, DEFAULT_LO, Approximate, PrivacyProperty,
                          Pure, Renyi, as_sample_batch)

DENOMINATOR_FLOOR = 1e-12
HALTED = -1.0


def _records(dataset) -> np.ndarray:
    return np.asarray(list(dataset), dtype=float)


def _bounds(dataset) -> tuple[float, float]:
    return getattr(dataset, "lo", DEFAULT_LO), getattr(dataset, "hi", DEFAULT_HI)


def _noisy_count(n_records: int, epsilon: float, rng, size) -> np.ndarray:
    tau = rng.laplace(0.0, 2.0 / epsilon, size=size)
    return np.maximum(DENOMINATOR_FLOOR, n_records + tau)


def dp_laplace_mean(dataset, epsilon: float, rng: np.random.Generator, size=None):
    """Mean with a privatized denominator and noise scaled by it."""
    x = _records(dataset)
    n_tilde = _noisy_count(x.size, epsilon, rng, size)
    rho1 = rng.laplace(0.0, 2.0 / (n_tilde * epsilon))
    return x.sum() / n_tilde + rho1


def non_dp_laplace1(dataset, epsilon: float, rng: np.random.Generator, size=None):
    """True mean plus noise scaled by the true count (leaks the count)."""
    x = _records(dataset)
    if x.size == 0:
        raise ValueError("non_dp_laplace1 divides by the true record count; empty dataset")
    rho2 = rng.laplace(0.0, 2.0 / (x.size * epsilon), size=size)
    return x.sum() / x.size + rho2


def non_dp_laplace2(dataset, epsilon: float, rng: np.random.Generator, size=None):
    """True mean plus noise scaled by a privatized count."""
    x = _records(dataset)
    if x.size == 0:
        raise ValueError("non_dp_laplace2 divides by the true record count; empty dataset")
    n_tilde = _noisy_count(x.size, epsilon, rng, size)
    rho1 = rng.laplace(0.0, 2.0 / (n_tilde * epsilon))
    return x.sum() / x.size + rho1


def gaussian_sigma(sensitivity, alpha: float, epsilon: float):
    """Noise std giving (alpha, epsilon)-Renyi DP at the given L2 sensitivity."""
    return sensitivity * np.sqrt(alpha / (2.0 * epsilon))


def non_dp_gaussian1(dataset, alpha: float, epsilon: float, rng: np.random.Generator,
                     size=None):
    x = _records(dataset)
    if x.size == 0:
        raise ValueError("non_dp_gaussian1 divides by the true record count; empty dataset")
    sigma = gaussian_sigma(2.0 / x.size, alpha, epsilon)
    return x.sum() / x.size + rng.normal(0.0, sigma, size=size)


def non_dp_gaussian2(dataset, alpha: float, epsilon: float, rng: np.random.Generator,
                     size=None):
    x = _records(dataset)
    if x.size == 0:
        raise ValueError("non_dp_gaussian2 divides by the true record count; empty dataset")
    n_tilde = _noisy_count(x.size, epsilon, rng, size)
    sigma = gaussian_sigma(2.0 / n_tilde, alpha, epsilon)
    return x.sum() / x.size + rng.normal(0.0, 1.0, size=size) * sigma


def query_battery(dataset, m: int = 10) -> np.ndarray:
    """Cosine moment queries ``q_j(D) = sum_i cos(j * pi * u_i)``.

    ``u_i`` is record ``i`` rescaled to ``[0, 1]``. Each record moves every
    query by at most 1, so the battery has L-infinity sensitivity 1 under
    add/remove, and a single record can push queries in opposite directions.
    ``q_0`` is the record count.
    """
    if m < 1:
        raise ValueError("query battery needs at least one query")
    lo, hi = _bounds(dataset)
    x = _records(dataset)
    u = (x - lo) / (hi - lo)
    j = np.arange(m)
    return np.cos(np.pi * np.outer(u, j)).sum(axis=0) if x.size else np.zeros(m)


# (threshold scale, query scale, resample threshold after a top, halts, emits value)
# scales are multiples of 1/epsilon; "c" marks a factor of max_count.
_SVT_VARIANTS = {
    1: dict(rho=(2.0, False), nu=(4.0, True), resample=False, halts=True, value=False),
    2: dict(rho=(2.0, True), nu=(4.0, True), resample=True, halts=True, value=False),
    3: dict(rho=(2.0, False), nu=(2.0, True), resample=False, halts=True, value=True),
    4: dict(rho=(4.0, False), nu=(4.0 / 3.0, False), resample=False, halts=True, value=False),
    5: dict(rho=(2.0, False), nu=None, resample=False, halts=False, value=False),
    6: dict(rho=(2.0, False), nu=(2.0, False), resample=False, halts=False, value=False),
}


def svt_noise_scales(variant: int, epsilon: float, max_count: int) -> tuple[float, float]:
    """Laplace scales ``(threshold, query)`` of an SVT variant; 0 means noiseless."""
    variant_cfg = _SVT_VARIANTS[variant]
    rho_mult, rho_c = variant_cfg["rho"]
    rho = rho_mult * (max_count if rho_c else 1) / epsilon
    if variant_cfg["nu"] is None:
        return rho, 0.0
    nu_mult, nu_c = variant_cfg["nu"]
    return rho, nu_mult * (max_count if nu_c else 1) / epsilon


def svt(variant: int, dataset, epsilon: float, threshold: float = 1.0, max_count: int = 1,
        rng: np.random.Generator | None = None, size: int = 1, m: int = 10) -> np.ndarray:
    """Sparse vector technique variants 1-6 over the cosine query battery.

    Symbols are encoded as 0 (below), 1 (above), -1 (halted); variant 3 emits
    the noisy query value instead of 1. Returns an ``(size, m)`` array.
    """
    if variant not in _SVT_VARIANTS:
        raise ValueError(f"unknown SVT variant {variant}")
    if m < 1:
        raise ValueError("SVT needs at least one query")
    if max_count < 1:
        raise ValueError("max_count must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    variant_cfg = _SVT_VARIANTS[variant]
    rho_scale, nu_scale = svt_noise_scales(variant, epsilon, max_count)
    q = query_battery(dataset, m)

    out = np.zeros((size, m))
    rho = rng.laplace(0.0, rho_scale, size=size)
    nu = rng.laplace(0.0, nu_scale, size=(size, m)) if nu_scale > 0 else np.zeros((size, m))
    # redraws are consumed only when variant 2 resamples after a top
    redraws = rng.laplace(0.0, rho_scale, size=(size, m)) if variant_cfg["resample"] else None
    count = np.zeros(size, dtype=int)
    active = np.ones(size, dtype=bool)
    for j in range(m):
        noisy_q = q[j] + nu[:, j]
        top = active & (noisy_q >= threshold + rho)
        out[active & ~top, j] = 0.0
        out[top, j] = noisy_q[top] if variant_cfg["value"] else 1.0
        out[~active, j] = HALTED
        count += top
        if variant_cfg["resample"]:
            rho = np.where(top, redraws[:, j], rho)
        if variant_cfg["halts"]:
            active &= count < max_count
    return out


def noisy_max(dataset, epsilon: float, bins: int = 10, rng: np.random.Generator | None = None,
              size: int = 1) -> np.ndarray:
    """Index of the largest Laplace-noised bin count (lowest index on ties)."""
    if bins < 2:
        raise ValueError("noisy_max needs at least two bins")
    rng = rng if rng is not None else np.random.default_rng()
    counts = bin_counts(dataset, bins)
    noisy = counts + rng.laplace(0.0, 2.0 / epsilon, size=(size, bins))
    return np.argmax(noisy, axis=1).astype(float)


def bin_counts(dataset, bins: int) -> np.ndarray:
    lo, hi = _bounds(dataset)
    x = _records(dataset)
    idx = np.clip(((x - lo) / (hi - lo) * bins).astype(int), 0, bins - 1)
    return np.bincount(idx, minlength=bins).astype(float)


def scaled_gd(dataset, sigma_theory: float, scale: float, clip: float = 1.0, steps: int = 1,
              learning_rate: float = 1.0, rng: np.random.Generator | None = None,
              size: int = 1, add_noise: bool = True) -> np.ndarray:
    """Noisy gradient descent on squared loss whose noise is ``scale`` times too small.

    Per-example gradients ``theta - x_i`` are clipped to ``clip`` and averaged;
    the step adds ``N(0, (scale * sigma_theory * clip / n)^2)`` noise.
    """
    if not 0 < scale <= 1:
        raise ValueError("scale must lie in (0, 1]")
    if clip <= 0:
        raise ValueError("clip must be positive")
    rng = rng if rng is not None else np.random.default_rng()
    x = _records(dataset)
    n = x.size
    theta = np.zeros(size)
    for _ in range(steps):
        if n:
            grads = np.clip(theta[:, None] - x[None, :], -clip, clip)
            mean_grad = grads.mean(axis=1)
        else:
            mean_grad = np.zeros(size)
        if add_noise:
            std = scale * sigma_theory * clip / max(n, 1)
            mean_grad = mean_grad + rng.normal(0.0, std, size=size)
        theta = theta - learning_rate * mean_grad
    return theta


def scaled_gd_claimed_epsilon(alpha: float, sigma_theory: float, steps: int = 1) -> float:
    return steps * alpha / (2.0 * sigma_theory**2)


def randomized_response(dataset, epsilon: float, rng: np.random.Generator | None = None,
                        size: int = 1) -> np.ndarray:
    """Randomized response on the bit ``[sum(D) > 0]``; exactly epsilon-DP."""
    rng = rng if rng is not None else np.random.default_rng()
    bit = float(_records(dataset).sum() > 0)
    keep = rng.random(size) < math.exp(epsilon) / (1.0 + math.exp(epsilon))
    return np.where(keep, bit, 1.0 - bit)


@dataclasses.dataclass(frozen=True)
class Mechanism:
    """A named mechanism with its claimed guarantee and a batched sampler."""

    name: str
    claimed_property: PrivacyProperty
    output_dimension: int
    parameters: dict
    _draw: Callable = dataclasses.field(repr=False, compare=False)

    def sample(self, dataset, n: int, rng: np.random.Generator) -> np.ndarray:
        out = self._draw(dataset, int(n), rng)
        return as_sample_batch(np.reshape(out, (int(n), self.output_dimension)),
                               self.output_dimension)

    def tested_property(self, tester: str, delta: float = 0.01) -> PrivacyProperty:
        """Property a tester checks: the claim itself for Renyi, (eps, delta) otherwise."""
        claim = self.claimed_property
        if tester == "renyi":
            return claim
        return Approximate(claim.epsilon, delta)


def _laplace_family(name: str, fn) -> Callable[..., Mechanism]:
    def build(epsilon: float = 0.01, **_) -> Mechanism:
        return Mechanism(name, Pure(epsilon), 1, {"epsilon": epsilon},
                         lambda d, n, rng: fn(d, epsilon, rng, size=n))
    return build


def _gaussian_family(name: str, fn) -> Callable[..., Mechanism]:
    def build(epsilon: float = 0.01, alpha: float = 1.5, **_) -> Mechanism:
        return Mechanism(name, Renyi(alpha, epsilon), 1, {"alpha": alpha, "epsilon": epsilon},
                         lambda d, n, rng: fn(d, alpha, epsilon, rng, size=n))
    return build


def _svt_family(variant: int) -> Callable[..., Mechanism]:
    def build(epsilon: float = 1.0, threshold: float = 1.0, max_count: int = 5,
              queries: int = 10, **_) -> Mechanism:
        params = {"epsilon": epsilon, "threshold": threshold, "max_count": max_count,
                  "queries": queries}
        return Mechanism(f"svt{variant}", Pure(epsilon), queries, params,
                         lambda d, n, rng: svt(variant, d, epsilon, threshold, max_count,
                                               rng, size=n, m=queries))
    return build


def _noisy_max_builder(epsilon: float = 1.0, bins: int = 10, **_) -> Mechanism:
    return Mechanism("noisy_max", Pure(epsilon), 1, {"epsilon": epsilon, "bins": bins},
                     lambda d, n, rng: noisy_max(d, epsilon, bins, rng, size=n))


def _scaled_gd_builder(alpha: float = 1.5, sigma_theory: float = 2.0, scale: float = 1.0,
                       clip: float = 1.0, steps: int = 1, learning_rate: float = 1.0,
                       **_) -> Mechanism:
    claimed = scaled_gd_claimed_epsilon(alpha, sigma_theory, steps)
    params = {"alpha": alpha, "sigma_theory": sigma_theory, "scale": scale, "clip": clip,
              "steps": steps, "learning_rate": learning_rate}
    return Mechanism("scaled_gd", Renyi(alpha, claimed), 1, params,
                     lambda d, n, rng: scaled_gd(d, sigma_theory, scale, clip, steps,
                                                 learning_rate, rng, size=n))


def _randomized_response_builder(epsilon: float = 1.0, **_) -> Mechanism:
    return Mechanism("randomized_response", Pure(epsilon), 1, {"epsilon": epsilon},
                     lambda d, n, rng: randomized_response(d, epsilon, rng, size=n))


MECHANISMS: dict[str, Callable[..., Mechanism]] = {
    "dp_laplace": _laplace_family("dp_laplace", dp_laplace_mean),
    "non_dp_laplace1": _laplace_family("non_dp_laplace1", non_dp_laplace1),
    "non_dp_laplace2": _laplace_family("non_dp_laplace2", non_dp_laplace2),
    "non_dp_gaussian1": _gaussian_family("non_dp_gaussian1", non_dp_gaussian1),
    "non_dp_gaussian2": _gaussian_family("non_dp_gaussian2", non_dp_gaussian2),
    **{f"svt{k}": _svt_family(k) for k in range(1, 7)},
    "noisy_max": _noisy_max_builder,
    "scaled_gd": _scaled_gd_builder,
}

# private reference mechanisms used for false-positive checks
REFERENCE_MECHANISMS: dict[str, Callable[..., Mechanism]] = {
    "randomized_response": _randomized_response_builder,
}


def make_mechanism(name: str, **params) -> Mechanism:
    registry = {**MECHANISMS, **REFERENCE_MECHANISMS}
    if name not in registry:
        raise KeyError(f"unknown mechanism {name!r}; choose from {sorted(registry)}")
    return registry[name](**params)


def mechanism_names(include_reference: bool = False) -> Sequence[str]:
    names = list(MECHANISMS)
    return names + list(REFERENCE_MECHANISMS) if include_reference else names
