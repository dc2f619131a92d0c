"""Dataset-pair finders: grid search, random search and a GP-UCB bandit.

All finders search a common encoding ``e in [lo, hi]^(L+1)``: the first ``L``
coordinates are the base dataset, the last is the record that distinguishes
the two neighbours.
"""

from __future__ import annotations

import dataclasses
import enum
import logging
import math

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .core import Dataset, derive_rng

logger = logging.getLogger(__name__)


class NeighborConstruction(str, enum.Enum):
    APPEND_RECORD = "append_record"
    REMOVE_LAST = "remove_last"
    SWAP_LAST = "swap_last"


@dataclasses.dataclass(frozen=True)
class SearchSpace:
    base_length: int = 5
    lo: float = -1.0
    hi: float = 1.0
    construction: NeighborConstruction = NeighborConstruction.APPEND_RECORD

    def __post_init__(self):
        if self.base_length < 1:
            raise ValueError("base_length must be >= 1")
        if not self.lo < self.hi:
            raise ValueError("search space needs lo < hi")
        object.__setattr__(self, "construction", NeighborConstruction(self.construction))

    @property
    def dimension(self) -> int:
        return self.base_length + 1

    def decode(self, encoding) -> tuple[Dataset, Dataset]:
        e = [float(v) for v in np.clip(np.asarray(encoding, float), self.lo, self.hi)]
        if len(e) != self.dimension:
            raise ValueError(f"encoding must have length {self.dimension}")
        base, extra = e[:-1], e[-1]
        kind = self.construction
        if kind is NeighborConstruction.APPEND_RECORD:
            d0, d1 = base, base + [extra]
        elif kind is NeighborConstruction.REMOVE_LAST:
            d0, d1 = base + [extra], base
        else:
            d0, d1 = base, base[:-1] + [extra]
        return Dataset(d0, self.lo, self.hi), Dataset(d1, self.lo, self.hi)

    def uniform(self, rng: np.random.Generator, size=None) -> np.ndarray:
        shape = (self.dimension,) if size is None else (size, self.dimension)
        return rng.uniform(self.lo, self.hi, size=shape)

    def normalize(self, encodings) -> np.ndarray:
        return (np.asarray(encodings, float) - self.lo) / (self.hi - self.lo)

    def to_dict(self) -> dict:
        return {"base_length": self.base_length, "lo": self.lo, "hi": self.hi,
                "construction": self.construction.value}


class _Finder:
    """History bookkeeping shared by all finders."""

    def __init__(self, space: SearchSpace | None = None, seed: int = 0):
        self.space = space or SearchSpace()
        self.seed = seed
        self.history: list[tuple[np.ndarray, float]] = []
        self._proposed: dict[int, np.ndarray] = {}
        self._observed: set[int] = set()

    def _encoding(self, t: int) -> np.ndarray:
        raise NotImplementedError

    def propose(self, t: int) -> tuple[Dataset, Dataset]:
        if t < 1:
            raise ValueError("trial index t must be >= 1")
        if t not in self._proposed:
            self._proposed[t] = np.asarray(self._encoding(t), float)
        return self.space.decode(self._proposed[t])

    def observe(self, t: int, value: float) -> None:
        if t in self._observed:
            raise ValueError(f"trial {t} already observed")
        if t not in self._proposed:
            raise ValueError(f"trial {t} was never proposed")
        if not math.isfinite(value):
            finite = [v for _, v in self.history]
            value = (min(finite) if finite else 0.0) - 1.0
        self._observed.add(t)
        self.history.append((self._proposed[t], float(value)))


class GridFinder(_Finder):
    """Row-major enumeration of a lattice with ``resolution`` points per axis.

    When ``resolution`` is omitted it is the smallest value (at least 2) whose
    lattice holds ``trials`` points.
    """

    name = "grid"

    def __init__(self, space: SearchSpace | None = None, seed: int = 0, trials: int = 10,
                 resolution: int | None = None):
        super().__init__(space, seed)
        if resolution is None:
            resolution = 2
            while resolution ** self.space.dimension < trials:
                resolution += 1
        if resolution < 2:
            raise ValueError("grid resolution must be >= 2")
        self.resolution = resolution
        self._axis = np.linspace(self.space.lo, self.space.hi, resolution)

    @property
    def size(self) -> int:
        return self.resolution ** self.space.dimension

    def _encoding(self, t):
        index = t - 1
        if index >= self.size:
            logger.warning("grid of %d points exhausted at trial %d; wrapping around",
                           self.size, t)
            index %= self.size
        digits = np.unravel_index(index, (self.resolution,) * self.space.dimension)
        return self._axis[list(digits)]


class RandomFinder(_Finder):
    """I.i.d. uniform encodings; observed values are ignored."""

    name = "random"

    def __init__(self, space: SearchSpace | None = None, seed: int = 0, **_):
        super().__init__(space, seed)
        self._rng = derive_rng(seed, ("finder", 0))

    def _encoding(self, t):
        return self.space.uniform(self._rng)


class GPBanditFinder(_Finder):
    """GP-UCB over encodings normalized to the unit cube.

    The first ``n_initial`` proposals are uniform. Afterwards a zero-mean GP
    with an RBF kernel is fitted to the standardized history and the candidate
    with the largest upper confidence bound is proposed. Candidates are
    ``n_candidates`` fresh uniform draws plus ``n_local`` Gaussian perturbations
    of the best encoding observed so far.
    """

    name = "gp_bandit"

    def __init__(self, space: SearchSpace | None = None, seed: int = 0, length_scale: float = 0.2,
                 noise: float = 1e-4, signal_variance: float = 1.0, ucb_coefficient: float = 2.0,
                 n_candidates: int = 64, n_initial: int = 3, n_local: int = 64,
                 local_scale: float = 0.1, **_):
        super().__init__(space, seed)
        self.length_scale = length_scale
        self.noise = noise
        self.signal_variance = signal_variance
        self.ucb_coefficient = ucb_coefficient
        self.n_candidates = n_candidates
        self.n_initial = n_initial
        self.n_local = n_local
        self.local_scale = local_scale
        self._rng = derive_rng(seed, ("finder", 0))

    def _kernel(self, A, B):
        sq = np.sum((A[:, None, :] - B[None, :, :]) ** 2, axis=-1)
        return self.signal_variance * np.exp(-sq / (2.0 * self.length_scale**2))

    def posterior(self, encodings) -> tuple[np.ndarray, np.ndarray]:
        """GP posterior mean and standard deviation at raw (unnormalized) encodings."""
        Z = self.space.normalize(np.atleast_2d(encodings))
        if not self.history:
            return np.zeros(len(Z)), np.full(len(Z), math.sqrt(self.signal_variance))
        X = self.space.normalize(np.array([e for e, _ in self.history]))
        y = np.array([v for _, v in self.history])
        # standardize so the unit prior variance matches the data's spread
        offset = y.mean()
        spread = y.std() if y.std() > 0 else 1.0
        K = self._kernel(X, X) + self.noise * np.eye(len(X))
        factor = cho_factor(K, lower=True)
        Ks = self._kernel(Z, X)
        mean = offset + spread * (Ks @ cho_solve(factor, (y - offset) / spread))
        var = self.signal_variance - np.sum(Ks * cho_solve(factor, Ks.T).T, axis=1)
        return mean, spread * np.sqrt(np.maximum(var, 0.0))

    def acquisition(self, encodings) -> np.ndarray:
        mean, std = self.posterior(encodings)
        return mean + self.ucb_coefficient * std

    def _encoding(self, t):
        if t <= self.n_initial or not self.history:
            return self.space.uniform(self._rng)
        candidates = self.space.uniform(self._rng, size=self.n_candidates)
        if self.n_local:
            best = max(self.history, key=lambda item: item[1])[0]
            width = self.local_scale * (self.space.hi - self.space.lo)
            local = best + self._rng.normal(0.0, width, size=(self.n_local, best.size))
            candidates = np.vstack([candidates, np.clip(local, self.space.lo, self.space.hi)])
        return candidates[int(np.argmax(self.acquisition(candidates)))]


FINDERS = {"grid": GridFinder, "random": RandomFinder, "gp_bandit": GPBanditFinder}


def make_finder(name: str, space: SearchSpace | None = None, seed: int = 0, **params):
    if name not in FINDERS:
        raise KeyError(f"unknown finder {name!r}; choose from {sorted(FINDERS)}")
    return FINDERS[name](space, seed, **params)
