"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure,
3 verification failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from .. import verify
from . import io
from .config import OUTPUT_ROOT_ENV, ConfigError, parse_config
from .runners import compute_metrics, emit_etf, run_encoder, run_sweep, run_ufm

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ncsphere", description="Neural-collapse experiments on the hypersphere.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, helptext in (("ufm", "run unconstrained-features descent"),
                           ("encoder", "train the synthetic encoder"),
                           ("sweep", "run a tau x batch x seed grid")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("config", help="YAML config file")
        sp.add_argument("--output-dir", help=f"run directory (default: config, then ${OUTPUT_ROOT_ENV})")
    sp = sub.add_parser("verify", help="run every numerical check")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--inject", choices=verify.CHECKS, help="plant a violation in one check (self-test)")
    sp.add_argument("--output-dir", help=f"where to write verify.json (default: ${OUTPUT_ROOT_ENV}/verify)")
    sp = sub.add_parser("metrics", help="NC report for an embeddings file")
    sp.add_argument("embeddings")
    sp.add_argument("--weights")
    sp.add_argument("--out", help="also write the report to this JSON file")
    sp = sub.add_parser("etf", help="write a simplex ETF as an embeddings file")
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    return p


def _print_report(title, report):
    print(title)
    for key, value in report.items():
        print(f"  {key:20s} {value}")


def _cmd_run(args, runner):
    cfg = parse_config(args.config)
    result = runner(cfg, args.output_dir)
    if isinstance(result, list):
        ok = sum(r["status"] == "ok" for r in result)
        print(f"sweep: {ok}/{len(result)} cells ok -> {cfg.resolve_output_dir(args.output_dir)}")
        return EXIT_OK if ok == len(result) else EXIT_RUNTIME
    _print_report(f"final NC report ({result['output_dir']})", result["report"])
    if "comparison" in result:
        print("classifier comparison (strategy, train acc, held-out acc, training passes)")
        for row in result["comparison"]:
            print(f"  {row['strategy']:18s} {row['train_acc']:.4f} {row['test_acc']:.4f} {row['training_passes']}")
    return EXIT_OK


def _cmd_verify(args):
    start = time.perf_counter()
    results = verify.run_all(args.seed, inject=args.inject)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name:26s} violation={r.violation:.3e} tol={r.tolerance:g} trials={r.trials}")
    elapsed = time.perf_counter() - start
    root = Path(args.output_dir) if args.output_dir else Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / "verify"
    io.write_json(root / "verify.json", {
        "seed": args.seed, "inject": args.inject, "seconds": elapsed,
        "passed": all(r.passed for r in results), "results": [r.as_dict() for r in results],
        "versions": io.versions(),
    })
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed in {elapsed:.1f}s")
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def _cmd_metrics(args):
    report = compute_metrics(args.embeddings, args.weights)
    print(json.dumps(io._jsonable(report), indent=2, sort_keys=True))
    if args.out:
        io.write_json(args.out, report)
    return EXIT_OK


def _cmd_etf(args):
    if args.k < 2 or args.d < args.k - 1:
        raise _UsageError(f"etf: need K >= 2 and d >= K-1, got K={args.k}, d={args.d}")
    path = emit_etf(args.k, args.d, args.seed, args.out)
    print(f"wrote {args.k} ETF vertices in R^{args.d} to {path}")
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    handlers = {
        "ufm": lambda a: _cmd_run(a, run_ufm),
        "encoder": lambda a: _cmd_run(a, run_encoder),
        "sweep": lambda a: _cmd_run(a, run_sweep),
        "verify": _cmd_verify,
        "metrics": _cmd_metrics,
        "etf": _cmd_etf,
    }
    try:
        return handlers[args.command](args)
    except (_UsageError, ConfigError, io.FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
