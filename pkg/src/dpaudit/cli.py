"""Command-line interface: ``dpaudit {audit,estimate,oracle,list}``.

Exit codes: 0 completed without a violation, 2 violation found, 1 error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import oracles
from .core import TrialError
from .estimators import ESTIMATORS
from .finders import FINDERS
from .harness import (AuditConfig, ConfigError, cell_config, Cell, load_config, report_to_json,
                      run_audit, write_report)
from .mechanisms import mechanism_names

EXIT_OK, EXIT_ERROR, EXIT_VIOLATION = 0, 1, 2

logger = logging.getLogger("dpaudit")


def _parse_dataset(text: str) -> list[float]:
    text = text.strip().strip("[]")
    return [float(v) for v in text.split(",") if v.strip()]


def _parse_distribution(text: str):
    """``laplace:mu,b``, ``gaussian:mu,sigma`` or ``discrete:p1,p2,...``."""
    kind, _, args = text.partition(":")
    values = [float(v) for v in args.split(",") if v.strip()]
    kind = kind.strip().lower()
    if kind == "laplace":
        return oracles.Laplace(*values)
    if kind == "gaussian":
        return oracles.Gaussian(*values)
    if kind == "discrete":
        return oracles.Discrete(tuple(values))
    raise ValueError(f"unknown distribution {kind!r}")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mechanism")
    p.add_argument("--tester", choices=sorted(ESTIMATORS))
    p.add_argument("--epsilon", type=float, help="mechanism epsilon (sets the claim)")
    p.add_argument("--delta", type=float, help="delta for approximate-DP testers")
    p.add_argument("--alpha", type=float, help="Renyi order")
    p.add_argument("--samples", type=int, help="sample size n (m for hockey_stick)")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpaudit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    audit = sub.add_parser("audit", help="search for a privacy violation")
    _add_common(audit)
    audit.add_argument("--finder", choices=sorted(FINDERS))
    audit.add_argument("--trials", type=int)
    audit.add_argument("--config", help="JSON config; flags override its values")
    audit.add_argument("--output", help="report path (default: stdout)")
    audit.add_argument("--continue-after-violation", action="store_true", default=None)

    est = sub.add_parser("estimate", help="estimate a divergence on one dataset pair")
    _add_common(est)
    est.add_argument("--d0", required=True, help="comma-separated records, e.g. '1'")
    est.add_argument("--d1", required=True, help="comma-separated records, e.g. '1,-1'")

    orc = sub.add_parser("oracle", help="evaluate a reference divergence")
    orc.add_argument("divergence", choices=["renyi", "hockey_stick", "mmd"])
    orc.add_argument("--p", required=True, help="e.g. laplace:0,1 or discrete:0.9,0.1")
    orc.add_argument("--q", required=True)
    orc.add_argument("--alpha", type=float, default=1.5)
    orc.add_argument("--epsilon", type=float, default=0.0)
    orc.add_argument("--bandwidth", type=float, default=1.0)

    sub.add_parser("list", help="print registered mechanisms, estimators and finders")
    return parser


def _apply_overrides(config: AuditConfig, args) -> AuditConfig:
    if args.mechanism:
        config.mechanism = {"name": args.mechanism, "params": {}}
    if args.tester:
        config.estimator = {"name": args.tester, "params": {}}
    mparams = config.mechanism.setdefault("params", {})
    eparams = config.estimator.setdefault("params", {})
    tester = config.estimator["name"]
    if args.epsilon is not None:
        mparams["epsilon"] = args.epsilon
    if args.alpha is not None:
        eparams["alpha"] = args.alpha
        if config.mechanism["name"] in ("non_dp_gaussian1", "non_dp_gaussian2", "scaled_gd"):
            mparams["alpha"] = args.alpha
    if args.delta is not None:
        eparams["delta"] = args.delta
    if args.samples is not None:
        if tester == "histogram":
            logger.warning("--samples is ignored by the histogram tester (its sample size "
                           "follows from universe, epsilon, beta and eta)")
        else:
            eparams["m" if tester == "hockey_stick" else "n"] = args.samples
    if args.seed is not None:
        config.seed = args.seed
    if getattr(args, "finder", None):
        config.finder = {"name": args.finder}
    if getattr(args, "trials", None) is not None:
        config.trials = args.trials
    if getattr(args, "output", None):
        config.output = args.output
    if getattr(args, "continue_after_violation", None):
        config.continue_after_violation = True
    return config


def _audit(args) -> int:
    if args.config:
        config = load_config(args.config)
    else:
        if not (args.mechanism and args.tester):
            raise ConfigError("--mechanism and --tester are required without --config")
        config = AuditConfig(mechanism={"name": args.mechanism},
                             estimator={"name": args.tester}, finder={"name": "random"})
    config = _apply_overrides(config, args)
    config = AuditConfig.from_dict(config.to_dict())
    report = run_audit(config)
    if config.output:
        side = write_report(report, config.output)
        logger.info("report written to %s (timings in %s)", config.output, side)
    else:
        sys.stdout.write(report_to_json(report))
    print(report.verdict, file=sys.stderr)
    return EXIT_VIOLATION if report.violation else EXIT_OK


def _estimate(args) -> int:
    if not (args.mechanism and args.tester):
        raise ConfigError("--mechanism and --tester are required")
    cell = Cell(args.mechanism, args.tester, args.epsilon if args.epsilon is not None else 1.0)
    pair = (_parse_dataset(args.d0), _parse_dataset(args.d1))
    config = cell_config(cell, args.seed or 0, trials=1, pair=pair)
    config.mechanism["params"] = {}
    config.estimator["params"] = {}
    config = _apply_overrides(config, args)
    report = run_audit(config)
    rec = report.trials[0]
    print(json.dumps({"forward": rec.estimate_forward, "backward": rec.estimate_backward,
                      "threshold": rec.threshold, "violation": rec.violation,
                      "property": report.metadata["property"]}, sort_keys=True))
    return EXIT_OK


def _oracle(args) -> int:
    P, Q = _parse_distribution(args.p), _parse_distribution(args.q)
    if args.divergence == "renyi":
        value = oracles.renyi_oracle(P, Q, args.alpha)
    elif args.divergence == "hockey_stick":
        value = oracles.hockey_stick_oracle(P, Q, args.epsilon)
    else:
        value = oracles.mmd_oracle(P, Q, bandwidth=args.bandwidth)
    print(repr(float(value)))
    return EXIT_OK


def _list() -> int:
    print("mechanisms:")
    for name in mechanism_names():
        print(f"  {name}")
    print("estimators:")
    for name in ESTIMATORS:
        print(f"  {name}")
    print("finders:")
    for name in FINDERS:
        print(f"  {name}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "audit":
            return _audit(args)
        if args.command == "estimate":
            return _estimate(args)
        if args.command == "oracle":
            return _oracle(args)
        return _list()
    except (ConfigError, TrialError, ValueError, TypeError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
