"""Domain types, neighbouring relations, RNG derivation and the generic test loop."""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import logging
import math
import time
from collections.abc import Callable, Sequence
from typing import Protocol, Union

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_LO = -1.0
DEFAULT_HI = 1.0


class Dataset(tuple):
    """An immutable ordered sequence of real-valued records in ``[lo, hi]``."""

    lo: float
    hi: float

    def __new__(cls, records: Sequence[float] = (), lo: float = DEFAULT_LO,
                hi: float = DEFAULT_HI):
        if not lo < hi:
            raise ValueError(f"record range must satisfy lo < hi, got [{lo}, {hi}]")
        values = tuple(float(r) for r in records)
        for r in values:
            if not (lo <= r <= hi):
                raise ValueError(f"record {r} outside [{lo}, {hi}]")
        obj = super().__new__(cls, values)
        obj.lo = float(lo)
        obj.hi = float(hi)
        return obj

    def __repr__(self) -> str:
        return f"Dataset({list(self)!r})"

    def to_array(self) -> np.ndarray:
        return np.asarray(self, dtype=float)


class NeighborRelation(str, enum.Enum):
    ADD_REMOVE = "add_remove"
    SWAP = "swap"


def is_neighbor(d0: Sequence[float], d1: Sequence[float],
                rel: NeighborRelation = NeighborRelation.ADD_REMOVE) -> bool:
    """Whether ``d0`` and ``d1`` differ by exactly one record under ``rel``.

    Add/remove compares datasets as ordered sequences: the longer one must be
    the shorter one with a single record inserted at some position.
    """
    a, b = list(d0), list(d1)
    if NeighborRelation(rel) is NeighborRelation.SWAP:
        if len(a) != len(b):
            return False
        return sum(x != y for x, y in zip(a, b)) == 1
    if abs(len(a) - len(b)) != 1:
        return False
    short, long_ = (a, b) if len(a) < len(b) else (b, a)
    return any(long_[:i] + long_[i + 1:] == short for i in range(len(long_)))


@dataclasses.dataclass(frozen=True)
class Pure:
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


@dataclasses.dataclass(frozen=True)
class Approximate:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 <= self.delta < 1:
            raise ValueError(f"delta must lie in [0, 1), got {self.delta}")


@dataclasses.dataclass(frozen=True)
class Renyi:
    alpha: float
    epsilon: float

    def __post_init__(self):
        if not self.alpha > 1:
            raise ValueError(f"alpha must exceed 1, got {self.alpha}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


PrivacyProperty = Union[Pure, Approximate, Renyi]


def property_to_dict(prop: PrivacyProperty) -> dict:
    return {"kind": type(prop).__name__.lower(), **dataclasses.asdict(prop)}


def property_from_dict(data: dict) -> PrivacyProperty:
    data = dict(data)
    kind = data.pop("kind")
    classes = {"pure": Pure, "approximate": Approximate, "renyi": Renyi}
    if kind not in classes:
        raise ValueError(f"unknown privacy property kind {kind!r}")
    return classes[kind](**data)


def as_sample_batch(points, dimension: int | None = None) -> np.ndarray:
    """Validate mechanism outputs as a finite ``(n, d)`` float array."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[1] < 1:
        raise ValueError(f"sample batch must be (n, d) with d >= 1, got {arr.shape}")
    if dimension is not None and arr.shape[1] != dimension:
        raise ValueError(f"expected dimension {dimension}, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("sample batch contains non-finite values")
    return arr


def _label_words(labels: Sequence[tuple[str, int]]) -> list[int]:
    words = []
    for name, index in labels:
        digest = hashlib.blake2b(f"{name}\x00{int(index)}".encode(), digest_size=8).digest()
        words.append(int.from_bytes(digest, "little"))
    return words


def derive_rng(base_seed: int, *labels: tuple[str, int]) -> np.random.Generator:
    """Derive an independent generator for the consumer identified by ``labels``.

    The same ``(base_seed, labels)`` always yields the same stream; distinct
    label paths map to distinct ``SeedSequence`` spawn keys.
    """
    seq = np.random.SeedSequence(entropy=int(base_seed), spawn_key=tuple(_label_words(labels)))
    return np.random.Generator(np.random.PCG64(seq))


def child_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63 - 1))


@dataclasses.dataclass(frozen=True)
class TrialRecord:
    trial_index: int
    pair: tuple[tuple[float, ...], tuple[float, ...]]
    estimate_forward: float
    estimate_backward: float
    threshold: float
    violation: bool
    seed: int

    def __post_init__(self):
        expected = max(self.estimate_forward, self.estimate_backward) > self.threshold
        if expected != self.violation:
            raise ValueError("violation flag inconsistent with estimates and threshold")

    def to_dict(self) -> dict:
        return {
            "trial_index": self.trial_index,
            "pair": [list(self.pair[0]), list(self.pair[1])],
            "estimate_forward": self.estimate_forward,
            "estimate_backward": self.estimate_backward,
            "threshold": self.threshold,
            "violation": self.violation,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrialRecord":
        return cls(
            trial_index=int(data["trial_index"]),
            pair=(tuple(data["pair"][0]), tuple(data["pair"][1])),
            estimate_forward=float(data["estimate_forward"]),
            estimate_backward=float(data["estimate_backward"]),
            threshold=float(data["threshold"]),
            violation=bool(data["violation"]),
            seed=int(data["seed"]),
        )


VIOLATION_VERDICT = "not private with probability 1-beta"
NO_VIOLATION_VERDICT = "could not find privacy violation in {T} trials"


@dataclasses.dataclass
class AuditReport:
    """Outcome of one run of the generalized test loop.

    The verdict never asserts that a mechanism is private; passing only means
    no violation was found within the trial budget.
    """

    trials: list[TrialRecord]
    verdict: str
    violation: bool
    config: dict = dataclasses.field(default_factory=dict)
    metadata: dict = dataclasses.field(default_factory=dict)
    timings: dict = dataclasses.field(default_factory=dict)

    @property
    def trials_run(self) -> int:
        return len(self.trials)

    @property
    def first_violation(self) -> int | None:
        for rec in self.trials:
            if rec.violation:
                return rec.trial_index
        return None

    def to_dict(self, include_timings: bool = True) -> dict:
        out = {
            "config": self.config,
            "metadata": self.metadata,
            "trials": [t.to_dict() for t in self.trials],
            "verdict": self.verdict,
            "violation": self.violation,
        }
        if include_timings:
            out["timings"] = self.timings
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "AuditReport":
        return cls(
            trials=[TrialRecord.from_dict(t) for t in data["trials"]],
            verdict=data["verdict"],
            violation=bool(data["violation"]),
            config=data.get("config", {}),
            metadata=data.get("metadata", {}),
            timings=data.get("timings", {}),
        )


Sampler = Callable[[int, np.random.Generator], np.ndarray]


class DivergenceEstimator(Protocol):
    """Lower-bound estimator of a divergence between two output distributions."""

    def estimate(self, sample_p: Sampler, sample_q: Sampler,
                 rng: np.random.Generator) -> float: ...


class DatasetFinder(Protocol):
    def propose(self, t: int) -> tuple[Dataset, Dataset]: ...

    def observe(self, t: int, value: float) -> None: ...


class TrialError(RuntimeError):
    """An estimator failure, annotated with the trial that raised it."""

    def __init__(self, trial_index: int, cause: Exception):
        super().__init__(f"trial {trial_index}: {type(cause).__name__}: {cause}")
        self.trial_index = trial_index
        self.cause = cause


class PhaseTimer:
    """Accumulates wall-clock seconds per named phase."""

    def __init__(self):
        self.totals: dict[str, float] = {}

    def add(self, phase: str, seconds: float) -> None:
        self.totals[phase] = self.totals.get(phase, 0.0) + max(0.0, seconds)

    def timed(self, phase: str, fn, *args, **kwargs):
        start = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        finally:
            self.add(phase, time.perf_counter() - start)


def run_generalized_test(mechanism, trials: int, finder: DatasetFinder,
                         estimator: DivergenceEstimator, threshold: float,
                         base_seed: int = 0, *,
                         continue_after_violation: bool = False) -> AuditReport:
    """Search neighbouring pairs for a divergence estimate above ``threshold``.

    Args:
      mechanism: object exposing ``sample(dataset, n, rng)``.
      trials: maximum number of dataset pairs to test.
      finder: proposes pairs and receives the max-direction estimate back.
      estimator: lower-bound divergence estimator.
      threshold: privacy threshold the estimates are compared against.
      base_seed: root of every random stream used by the run.
      continue_after_violation: keep running all trials after a violation.

    Returns:
      An ``AuditReport`` with one ``TrialRecord`` per trial run.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not math.isfinite(threshold):
        raise ValueError("threshold must be finite")

    timer = PhaseTimer()
    fit_before = getattr(estimator, "fit_seconds_", 0.0)
    records: list[TrialRecord] = []
    found = False
    for t in range(1, trials + 1):
        d0, d1 = finder.propose(t)
        estimates = []
        for direction, (a, b) in enumerate(((d0, d1), (d1, d0))):
            rng = derive_rng(base_seed, ("trial", t), ("direction", direction))
            sample_p = _timed_sampler(mechanism, a, timer)
            sample_q = _timed_sampler(mechanism, b, timer)
            start = time.perf_counter()
            try:
                value = float(estimator.estimate(sample_p, sample_q, rng))
            except Exception as exc:  # noqa: BLE001 - re-raised with trial context
                raise TrialError(t, exc) from exc
            timer.add("estimation", time.perf_counter() - start)
            estimates.append(value)
        best = max(estimates)
        violation = best > threshold
        records.append(TrialRecord(
            trial_index=t, pair=(tuple(d0), tuple(d1)),
            estimate_forward=estimates[0], estimate_backward=estimates[1],
            threshold=float(threshold), violation=violation, seed=int(base_seed),
        ))
        finder.observe(t, best if math.isfinite(best) else float("nan"))
        logger.debug("trial %d: forward=%.5g backward=%.5g tau=%.5g", t, *estimates, threshold)
        if violation:
            found = True
            if not continue_after_violation:
                break

    # estimation time includes sampling and fitting; report it exclusive of both
    fit = getattr(estimator, "fit_seconds_", 0.0) - fit_before
    timings = dict(timer.totals)
    timings.setdefault("sampling", 0.0)
    timings["fitting"] = float(fit)
    timings["estimation"] = max(0.0, timings.get("estimation", 0.0)
                                - timings["sampling"] - timings["fitting"])
    verdict = VIOLATION_VERDICT if found else NO_VIOLATION_VERDICT.format(T=trials)
    return AuditReport(trials=records, verdict=verdict, violation=found, timings=timings)


def _timed_sampler(mechanism, dataset, timer: PhaseTimer) -> Sampler:
    def sample(n: int, rng: np.random.Generator) -> np.ndarray:
        return timer.timed("sampling", mechanism.sample, dataset, n, rng)
    return sample
