"""Audit configuration, component wiring, report I/O and experiment drivers."""

from __future__ import annotations

import copy
import csv
import dataclasses
import io
import json
import math
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from . import __version__
from .core import (Approximate, AuditReport, Dataset, Pure, Renyi, is_neighbor,
                   property_from_dict, property_to_dict, run_generalized_test)
from .estimators import ESTIMATORS, make_estimator
from .finders import FINDERS, SearchSpace, make_finder
from .mechanisms import MECHANISMS, REFERENCE_MECHANISMS, make_mechanism

TOP_LEVEL_KEYS = ("mechanism", "estimator", "finder", "property", "trials", "seed", "output")

DEFAULT_BETA = 1 / 3
DEFAULT_ALPHA = 1.5
DEFAULT_DELTA = 0.01

# Neighbouring pairs on which each mechanism's flaw (if any) is known to show.
ADVERSARIAL_PAIRS: dict[str, tuple[tuple[float, ...], tuple[float, ...]]] = {
    # count-dependent noise: the one-record dataset against two records of opposite sign
    "dp_laplace": ((1.0,), (1.0, -1.0)),
    "non_dp_laplace1": ((1.0,), (1.0, -1.0)),
    "non_dp_laplace2": ((1.0,), (1.0, -1.0)),
    "non_dp_gaussian1": ((1.0,), (1.0, -1.0)),
    "non_dp_gaussian2": ((1.0,), (1.0, -1.0)),
    # adding the record 1.0 moves every cosine query of the SVT battery by up to 1
    **{f"svt{v}": ((), (1.0,)) for v in range(1, 7)},
    "noisy_max": ((), (1.0,)),
    # with an empty dataset the gradient step is pure noise; the extra record shifts it by G
    "scaled_gd": ((), (1.0,)),
    "randomized_response": ((), (1.0,)),
}

BETA_NOTE = ("beta is spent once per direction per trial; no multiple-comparison "
             "correction is applied across directions or trials")


class ConfigError(ValueError):
    """Malformed or inconsistent audit configuration; message names the field."""


@dataclasses.dataclass
class AuditConfig:
    mechanism: dict
    estimator: dict
    finder: dict
    property: dict | None = None
    trials: int = 10
    seed: int = 0
    output: str | None = None
    continue_after_violation: bool = False

    def to_dict(self) -> dict:
        trials: Any = self.trials
        if self.continue_after_violation:
            trials = {"count": self.trials, "continue_after_violation": True}
        return {"mechanism": self.mechanism, "estimator": self.estimator,
                "finder": self.finder, "property": self.property, "trials": trials,
                "seed": self.seed, "output": self.output}

    @classmethod
    def from_dict(cls, data: dict) -> "AuditConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(data) - set(TOP_LEVEL_KEYS)
        if unknown:
            raise ConfigError(f"unknown top-level field(s): {', '.join(sorted(unknown))}")
        for key in ("mechanism", "estimator"):
            if key not in data:
                raise ConfigError(f"field '{key}' is required")
        mech = _component(data["mechanism"], "mechanism")
        est = _component(data["estimator"], "estimator")
        finder = _component(data.get("finder", {"name": "random"}), "finder")
        trials = data.get("trials", 10)
        cont = False
        if isinstance(trials, dict):
            cont = bool(trials.get("continue_after_violation", False))
            trials = trials.get("count")
        if not isinstance(trials, int) or isinstance(trials, bool) or trials < 1:
            raise ConfigError("field 'trials' must be a positive integer")
        seed = data.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError("field 'seed' must be a non-negative integer")
        prop = data.get("property")
        if prop is not None and not isinstance(prop, dict):
            raise ConfigError("field 'property' must be an object")
        output = data.get("output")
        if output is not None and not isinstance(output, str):
            raise ConfigError("field 'output' must be a path string")
        return cls(mech, est, finder, prop, trials, seed, output, cont)


def _component(value, field: str) -> dict:
    if isinstance(value, str):
        value = {"name": value}
    if not isinstance(value, dict) or not isinstance(value.get("name"), str):
        raise ConfigError(f"field '{field}' must be a name or an object with a 'name'")
    params = value.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError(f"field '{field}.params' must be an object")
    return copy.deepcopy(value)


def load_config(path: str | Path) -> AuditConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return AuditConfig.from_dict(data)


@dataclasses.dataclass
class AuditComponents:
    mechanism: Any
    estimator: Any
    finder: Any
    property: Any
    threshold: float


class FixedPairFinder:
    """Proposes the same neighbouring pair every trial."""

    name = "fixed"

    def __init__(self, d0, d1, lo: float = -1.0, hi: float = 1.0):
        self.pair = (Dataset(d0, lo, hi), Dataset(d1, lo, hi))
        if not is_neighbor(*self.pair):
            raise ConfigError("field 'finder.pair': datasets are not add/remove neighbours")
        self.history: list[tuple[int, float]] = []

    def propose(self, t: int):
        return self.pair

    def observe(self, t: int, value: float) -> None:
        self.history.append((t, value))


def resolve_property(config: AuditConfig, mechanism, tester: str):
    if config.property is not None:
        try:
            return property_from_dict(config.property)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"field 'property': {exc}") from exc
    delta = config.estimator.get("params", {}).get("delta", DEFAULT_DELTA)
    return mechanism.tested_property(tester, delta)


def build_components(config: AuditConfig) -> AuditComponents:
    mname = config.mechanism["name"]
    if mname not in MECHANISMS and mname not in REFERENCE_MECHANISMS:
        raise ConfigError(f"field 'mechanism.name': unknown mechanism {mname!r}")
    try:
        mechanism = make_mechanism(mname, **config.mechanism.get("params", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"field 'mechanism.params': {exc}") from exc

    tester = config.estimator["name"]
    if tester not in ESTIMATORS:
        raise ConfigError(f"field 'estimator.name': unknown estimator {tester!r}")
    prop = resolve_property(config, mechanism, tester)
    if tester == "renyi" and isinstance(prop, Approximate):
        raise ConfigError("field 'property': the renyi tester checks pure or renyi DP")
    if tester != "renyi" and not isinstance(prop, Approximate):
        raise ConfigError(f"field 'property': the {tester} tester checks approximate DP")

    params = dict(config.estimator.get("params", {}))
    params.pop("delta", None)
    if tester == "renyi":
        params.setdefault("alpha", prop.alpha if isinstance(prop, Renyi) else DEFAULT_ALPHA)
        if isinstance(prop, Renyi) and not math.isclose(params["alpha"], prop.alpha):
            raise ConfigError("field 'estimator.params.alpha' must match the Renyi property's alpha")
    params.setdefault("beta", DEFAULT_BETA)
    try:
        estimator = make_estimator(tester, prop, **params)
        threshold = estimator.threshold(prop)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"field 'estimator.params': {exc}") from exc

    fconf = config.finder
    try:
        if "pair" in fconf:
            d0, d1 = fconf["pair"]
            finder = FixedPairFinder(d0, d1)
        else:
            if fconf["name"] not in FINDERS:
                raise ConfigError(f"field 'finder.name': unknown finder {fconf['name']!r}")
            space = SearchSpace(**fconf.get("space", {}))
            fparams = dict(fconf.get("params", {}))
            if fconf["name"] == "grid":
                fparams.setdefault("trials", config.trials)
            finder = make_finder(fconf["name"], space, config.seed, **fparams)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"field 'finder': {exc}") from exc
    return AuditComponents(mechanism, estimator, finder, prop, threshold)


def run_audit(config: AuditConfig) -> AuditReport:
    parts = build_components(config)
    report = run_generalized_test(parts.mechanism, config.trials, parts.finder, parts.estimator,
                                  parts.threshold, config.seed,
                                  continue_after_violation=config.continue_after_violation)
    report.config = config.to_dict()
    report.metadata = {
        "version": __version__,
        "tester": config.estimator["name"],
        "estimator_params": _jsonable(parts.estimator.get_params()),
        "mechanism_params": _jsonable(parts.mechanism.parameters),
        "property": property_to_dict(parts.property),
        "threshold": parts.threshold,
        "beta_note": BETA_NOTE,
    }
    return report


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def report_to_json(report: AuditReport, include_timings: bool = False) -> str:
    """Canonical JSON text; without timings it is a pure function of config and seed."""
    return json.dumps(report.to_dict(include_timings=include_timings), sort_keys=True,
                      indent=2, ensure_ascii=False) + "\n"


def report_from_json(text: str) -> AuditReport:
    return AuditReport.from_dict(json.loads(text))


def timings_path(output: str | Path) -> Path:
    output = Path(output)
    return output.with_name(output.stem + ".timings.json")


def write_report(report: AuditReport, output: str | Path) -> Path:
    """Write the report and, next to it, a ``*.timings.json`` with wall-clock phases."""
    output = Path(output)
    output.parent.mkdir(parents=True, exist_ok=True)
    output.write_text(report_to_json(report), encoding="utf-8")
    side = timings_path(output)
    side.write_text(json.dumps(report.timings, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")
    return side


# --------------------------------------------------------------------------- experiments

CSV_HEADER = ("mechanism", "tester", "finder", "epsilon", "n", "value")


@dataclasses.dataclass(frozen=True)
class Cell:
    mechanism: str
    tester: str
    epsilon: float
    n: int = 50000
    finder: str = "fixed"
    mechanism_params: tuple = ()
    estimator_params: tuple = ()


def _sample_param(tester: str) -> str:
    return "m" if tester == "hockey_stick" else "n"


def is_compatible(mechanism: str, tester: str, **mechanism_params) -> bool:
    mech = make_mechanism(mechanism, **mechanism_params)
    return not (tester == "histogram" and mech.output_dimension > 1)


def cell_config(cell: Cell, seed: int, trials: int = 1, pair=None) -> AuditConfig:
    mparams = {"epsilon": cell.epsilon, **dict(cell.mechanism_params)}
    if cell.mechanism == "scaled_gd":
        mparams.pop("epsilon")
    eparams = dict(cell.estimator_params)
    if cell.tester != "histogram":
        eparams.setdefault(_sample_param(cell.tester), cell.n)
    if cell.finder == "fixed":
        d0, d1 = pair if pair is not None else ADVERSARIAL_PAIRS[cell.mechanism]
        finder = {"name": "fixed", "pair": [list(d0), list(d1)]}
    else:
        finder = {"name": cell.finder}
    return AuditConfig(mechanism={"name": cell.mechanism, "params": mparams},
                       estimator={"name": cell.tester, "params": eparams},
                       finder=finder, trials=trials, seed=seed)


def detection_rate_experiment(cells: Iterable[Cell], runs: int = 10, base_seed: int = 0,
                              pairs: dict | None = None) -> list[dict]:
    """Detections out of ``runs`` per cell on a fixed adversarial pair; '-' if incompatible."""
    rows = []
    for cell in cells:
        row = {"mechanism": cell.mechanism, "tester": cell.tester, "finder": "fixed",
               "epsilon": cell.epsilon, "n": cell.n}
        if not is_compatible(cell.mechanism, cell.tester, **dict(cell.mechanism_params)):
            row["value"] = "-"
        else:
            pair = (pairs or {}).get(cell.mechanism)
            hits = sum(run_audit(cell_config(cell, base_seed + r, 1, pair)).violation
                       for r in range(runs))
            row["value"] = hits
        rows.append(row)
    return rows


def finder_experiment(cells: Iterable[Cell], repeats: int = 10, max_trials: int = 50,
                      base_seed: int = 0) -> list[dict]:
    """Average trials to the first violation over ``repeats``; ``max_trials`` when none."""
    rows = []
    for cell in cells:
        row = {"mechanism": cell.mechanism, "tester": cell.tester, "finder": cell.finder,
               "epsilon": cell.epsilon, "n": cell.n}
        if not is_compatible(cell.mechanism, cell.tester, **dict(cell.mechanism_params)):
            row["value"] = "-"
        else:
            counts = []
            for r in range(repeats):
                report = run_audit(cell_config(cell, base_seed + r, max_trials))
                first = report.first_violation
                counts.append(first if first is not None else max_trials)
            row["value"] = float(np.mean(counts))
        rows.append(row)
    return rows


def rows_to_csv(rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_HEADER, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row[k] for k in CSV_HEADER})
    return buf.getvalue()


TABLE1_CELLS = (
    [Cell(m, t, eps) for eps in (0.01,) for m in ("dp_laplace", "non_dp_laplace1",
                                                   "non_dp_laplace2", "non_dp_gaussian1",
                                                   "non_dp_gaussian2")
     for t in ESTIMATORS]
    + [Cell(f"svt{v}", t, 1.0) for v in range(1, 7) for t in ESTIMATORS]
)

TABLE2_CELLS = tuple(
    Cell(m, t, 0.01, n=200000, finder=f)
    for m in ("non_dp_laplace1", "non_dp_gaussian1") for t in ESTIMATORS for f in FINDERS
)


def property_for(kind: str, epsilon: float, alpha: float = DEFAULT_ALPHA,
                 delta: float = DEFAULT_DELTA):
    return {"pure": lambda: Pure(epsilon), "approximate": lambda: Approximate(epsilon, delta),
            "renyi": lambda: Renyi(alpha, epsilon)}[kind]()
