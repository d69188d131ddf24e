"""Command-line entry point: ``memflow {run, compare, validate-config, list-scenarios}``.

Exit codes: 0 success, 2 configuration error, 3 solver abort, 4 not converged
(and 1 for a failed comparison).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .compare import ORACLES, compare
from .errors import ConfigError, SchemaMismatch
from .io import write_json
from .runner import EXIT_CONFIG, bundled_scenarios, resolve_config, run_config


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="memflow", description="Integral-memory viscoelastic flow solver.")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one or more configurations")
    run.add_argument("--config", action="append", required=True, help="config path or bundled scenario name; repeat for a batch")
    run.add_argument("--out-dir", required=True, type=Path)
    run.add_argument("--seed", type=int, default=None, help="override [run] seed")
    run.add_argument("--emit-checkpoints", action="store_true", help="write deformation checkpoints")

    cmp_ = sub.add_parser("compare", help="compare a run directory against an oracle or another run")
    cmp_.add_argument("run_dir", type=Path)
    cmp_.add_argument("--oracle", required=True, help=f"one of {', '.join(ORACLES)}, or another run directory")
    cmp_.add_argument("--tol", type=float, default=1e-3, help="relative tolerance (default 1e-3)")
    cmp_.add_argument("--scale", type=float, default=1.0, help="expected ratio run/other for run-vs-run comparisons")
    cmp_.add_argument("--columns", default=None, help="comma-separated diagnostics columns")
    cmp_.add_argument("--report", type=Path, default=None, help="write the comparison as JSON")

    val = sub.add_parser("validate-config", help="parse and validate configurations")
    val.add_argument("--config", action="append", required=True)

    sub.add_parser("list-scenarios", help="list bundled scenarios")
    return ap


def _cmd_run(args) -> int:
    configs = []
    for ref in args.config:
        try:
            configs.append(resolve_config(ref))
        except ConfigError as exc:
            print(f"config error in {ref}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    worst = 0
    for cfg in configs:
        out = args.out_dir if len(configs) == 1 else args.out_dir / cfg.name
        try:
            art = run_config(cfg, out, seed=args.seed, emit_checkpoints=args.emit_checkpoints)
        except ConfigError as exc:
            print(f"config error in {cfg.source}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        msg = f"{cfg.name}: {art.status} -> {out}"
        if "error" in art.report:
            msg += f" ({art.report['error']})"
        print(msg)
        worst = max(worst, art.exit_code)
    return worst


def _cmd_compare(args) -> int:
    cols = [c.strip() for c in args.columns.split(",")] if args.columns else None
    try:
        rep = compare(args.run_dir, args.oracle, tol=args.tol, scale=args.scale, columns=cols)
    except SchemaMismatch as exc:
        print(f"schema mismatch: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print("\n".join(rep.lines()))
    if args.report is not None:
        write_json(args.report, rep.to_dict())
    return 0 if rep.passed else 1


def _cmd_validate(args) -> int:
    code = 0
    for ref in args.config:
        try:
            cfg = resolve_config(ref)
            print(f"{ref}: ok ({cfg.name})")
        except ConfigError as exc:
            print(f"{ref}: {exc}", file=sys.stderr)
            code = EXIT_CONFIG
    return code


def _cmd_list(args) -> int:
    for name, desc in bundled_scenarios().items():
        print(f"{name:<28} {desc}")
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handler = {
        "run": _cmd_run,
        "compare": _cmd_compare,
        "validate-config": _cmd_validate,
        "list-scenarios": _cmd_list,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
