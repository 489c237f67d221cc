#!/usr/bin/env python3
"""
Command-line entry point for lower-tail computations.

Usage:
    lowertail solve   --pattern fixtures/triangle.json --n 5 --p 0.3 --eta 0.5
    lowertail tail    --ap 3,12 --p 0.4 --eta 0.5 --oracle both --samples 100000
    lowertail certify --pattern fixtures/triangle.json --n 4 --p 0.5 --eta 0.5 --epsilon 0.3
    lowertail check   --triangles 6
    lowertail check   --config fixtures/experiment.json --out reports/run.csv
    lowertail audit   --pattern fixtures/k4.json --n 6

The exit code is 0 iff every asserted inequality passes, and 2 on configuration errors.
"""

import argparse
import csv
import io
import json
import sys
from typing import Any, Dict, List, Optional

from loguru import logger
from pydantic import ValidationError

from lowertail.core.exceptions import ConfigError, LowerTailError, SolverConvergenceError
from lowertail.core.logging import setup_logging
from lowertail.schemas.variational import TailSpec
from lowertail.services.builders import (
    ap_degree_audit,
    ap_hypergraph,
    copy_hypergraph,
    degree_bound_audit,
    s_density,
)
from lowertail.services.harness import (
    ap_demo,
    load_config,
    load_pattern,
    run_experiment,
    sandwich_check,
    theorem_triangles_check,
    write_report,
)
from lowertail.services.hypergraph import (
    WeightedHypergraph,
    degree_condition_check,
    load_hypergraph,
)
from lowertail.services.oracles import (
    exact_lower_tail,
    mc_lower_tail,
    tilted_lower_bound_certificate,
)
from lowertail.services.variational import solve_phi, to_relative


def _float_list(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def _ap_spec(text: str) -> List[int]:
    try:
        k, n = (int(item) for item in text.split(","))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected K,N, got {text!r}") from e
    return [k, n]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lowertail",
        description="Mean-field lower-tail rates, exact and sampled tail probabilities, and certificates",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    instance = argparse.ArgumentParser(add_help=False)
    source = instance.add_mutually_exclusive_group()
    source.add_argument("--pattern", help="Pattern JSON; copies of it in K_n form the hypergraph")
    source.add_argument("--ap", type=_ap_spec, metavar="K,N", help="k-term progressions in [n]")
    source.add_argument("--hypergraph", help="Weighted hypergraph JSON")
    instance.add_argument("--n", type=int, help="Host size for --pattern")
    instance.add_argument("--p", type=_float_list, default=[0.5], help="Densities (default: 0.5)")
    levels = instance.add_mutually_exclusive_group()
    levels.add_argument("--eta", type=_float_list, help="Relative levels eta")
    levels.add_argument("--t", type=_float_list, help="Absolute thresholds t")
    instance.add_argument("--random-starts", type=int, help="Seeded random solver starts")
    instance.add_argument("--samples", type=int, default=100_000, help="Monte Carlo samples")
    instance.add_argument("--seed", type=int, default=0, help="Monte Carlo seed (default: 0)")
    instance.add_argument("--out", help="Write output here instead of stdout")
    instance.add_argument("--format", choices=["csv", "json"], default="csv")

    subparsers.add_parser("solve", parents=[instance], help="Solve the variational problem")

    tail = subparsers.add_parser("tail", parents=[instance], help="Estimate tail probabilities")
    tail.add_argument("--oracle", choices=["exact", "mc", "both"], default="exact")

    certify = subparsers.add_parser(
        "certify", parents=[instance], help="Tilted-measure lower bound on the tail"
    )
    certify.add_argument("--epsilon", type=float, default=0.3)
    certify.add_argument("--p0", type=float, help="Density bound for the variance constant")

    check = subparsers.add_parser("check", parents=[instance], help="Run theorem checks")
    check.add_argument("--config", help="Experiment configuration JSON")
    check.add_argument("--triangles", type=int, metavar="N", help="Triangle-count suite on K_N")
    check.add_argument("--epsilon", type=float, default=0.3)
    check.add_argument("--oracle", choices=["exact", "mc", "both"], default="exact")
    check.add_argument("--p0", type=float, help="Density bound; defaults to max(--p)")

    audit = subparsers.add_parser("audit", parents=[instance], help="Degree and density report")
    audit.add_argument("--K", type=float, help="Degree constant (with --hypergraph)")
    audit.add_argument("--lambda", dest="lam", type=float, help="Lambda (with --hypergraph)")
    return parser


def _instance(args: argparse.Namespace) -> WeightedHypergraph:
    try:
        if args.pattern:
            if args.n is None:
                raise ConfigError("--pattern needs --n")
            return copy_hypergraph(load_pattern(args.pattern), args.n)
        if args.ap:
            return ap_hypergraph(*args.ap)
        if args.hypergraph:
            return load_hypergraph(args.hypergraph)
    except (OSError, ValidationError) as e:
        raise ConfigError(str(e)) from e
    raise ConfigError("one of --pattern, --ap or --hypergraph is required")


def _specs(args: argparse.Namespace) -> List[TailSpec]:
    if args.t is not None:
        return [TailSpec.absolute(t) for t in args.t]
    return [TailSpec.relative(eta) for eta in (args.eta or [1.0])]


def _flatten(record: Dict[str, Any]) -> Dict[str, Any]:
    """One CSV row: nested models become dotted columns, lists become JSON text."""
    row: Dict[str, Any] = {}
    for key, value in record.items():
        if isinstance(value, dict):
            row.update({f"{key}.{k}": v for k, v in _flatten(value).items()})
        elif isinstance(value, list):
            row[key] = json.dumps(value)
        else:
            row[key] = value
    return row


def _emit(
    payload: Any, args: argparse.Namespace, records: Optional[List[Dict[str, Any]]] = None
) -> None:
    """Write payload as JSON, or as CSV with one row per record (default: the payload's items)."""
    if args.format == "json":
        text = json.dumps(payload, indent=2) + "\n"
    else:
        if records is None:
            records = payload if isinstance(payload, list) else [payload]
        rows = [_flatten(record) for record in records]
        fields = list(dict.fromkeys(key for row in rows for key in row))
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        text = buffer.getvalue()
    if args.out:
        with open(args.out, "w", newline="") as handle:
            handle.write(text)
        logger.info(f"Wrote {args.out}")
    else:
        sys.stdout.write(text)


def _solve(args: argparse.Namespace) -> bool:
    H = _instance(args)
    results, ok = [], True
    for p in args.p:
        for spec in _specs(args):
            try:
                solution = solve_phi(H, p, spec, args.random_starts)
            except SolverConvergenceError as e:
                logger.error(f"p={p}: {e}")
                solution, ok = e.best, False
            results.append({"p": p, **spec.model_dump(), **solution.to_solution_json()})
    _emit(results, args)
    return ok


def _tail(args: argparse.Namespace) -> bool:
    H = _instance(args)
    results = []
    for p in args.p:
        for spec in _specs(args):
            if args.oracle in ("exact", "both"):
                results.append(
                    {"p": p, **spec.model_dump(), **exact_lower_tail(H, p, spec).to_row()}
                )
            if args.oracle in ("mc", "both"):
                estimate = mc_lower_tail(H, p, spec, args.samples, args.seed)
                results.append({"p": p, **spec.model_dump(), **estimate.to_row()})
    _emit(results, args)
    return True


def _certify(args: argparse.Namespace) -> bool:
    H = _instance(args)
    results = []
    for p in args.p:
        for spec in _specs(args):
            eta = to_relative(H, p, spec).eta
            tilted = solve_phi(
                H, p, TailSpec.relative((1 - args.epsilon) * eta), args.random_starts
            )
            certificate = tilted_lower_bound_certificate(
                H,
                p,
                spec,
                args.epsilon,
                tilted.q,
                samples=args.samples,
                seed=args.seed,
                p0=args.p0,
            )
            results.append({"p": p, **spec.model_dump(), **certificate.model_dump()})
    _emit(results, args)
    return True


def _check(args: argparse.Namespace) -> bool:
    if args.config:
        config = load_config(args.config)
        rows = run_experiment(config)
        out = args.out or config.output
        if out:
            write_report(rows, out, config.format if not args.out else args.format)
        else:
            _emit([row.model_dump(exclude={"solution"}) for row in rows], args)
        return all(row.passed for row in rows)

    if args.triangles is not None:
        report = theorem_triangles_check(args.triangles, args.t)
        _emit(report.model_dump(), args, [row.model_dump() for row in report.rows])
        return report.holds

    etas = args.eta or [0.5]
    p0 = args.p0 if args.p0 is not None else max(args.p)
    options = dict(
        p0=p0,
        oracle=args.oracle,
        samples=args.samples,
        seed=args.seed,
        random_starts=args.random_starts,
    )
    if args.ap:
        reports = [ap_demo(*args.ap, p, etas, args.epsilon, **options) for p in args.p]
        _emit(
            [report.model_dump() for report in reports],
            args,
            [s.model_dump() for report in reports for s in report.sandwiches],
        )
        return all(report.holds for report in reports)

    H = _instance(args)
    reports = [
        sandwich_check(H, p, eta, args.epsilon, **options) for p in args.p for eta in etas
    ]
    _emit([report.model_dump() for report in reports], args)
    return all(report.holds for report in reports)


def _audit(args: argparse.Namespace) -> bool:
    if args.pattern:
        if args.n is None:
            raise ConfigError("--pattern needs --n")
        pattern = load_pattern(args.pattern)
        density = s_density(pattern)
        report = degree_bound_audit(pattern, args.n)
        _emit(
            {
                "density": density.model_dump(),
                "audit": report.model_dump(),
                "holds": report.holds,
            },
            args,
        )
        return report.holds
    if args.ap:
        report = ap_degree_audit(*args.ap)
        _emit(report.model_dump(), args)
        return report.holds

    H = _instance(args)
    if args.K is None or args.lam is None:
        raise ConfigError("auditing a raw hypergraph needs --K and --lambda")
    reports = [degree_condition_check(H, p, args.K, args.lam) for p in args.p]
    _emit([{"p": p, **r.model_dump()} for p, r in zip(args.p, reports)], args)
    return all(r.holds for r in reports)


COMMANDS = {
    "solve": _solve,
    "tail": _tail,
    "certify": _certify,
    "check": _check,
    "audit": _audit,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one subcommand and return the process exit code."""
    args = build_parser().parse_args(argv)
    setup_logging()
    try:
        ok = COMMANDS[args.command](args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return 2
    except (LowerTailError, ValidationError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 1

    if ok:
        logger.success(f"{args.command}: all checks passed")
    else:
        logger.warning(f"{args.command}: some checks failed")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
