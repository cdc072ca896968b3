"""Command-line entry point.

Exit codes: 0 success, 2 invalid config or arguments (JSON error report on
stderr), 3 a numerical check failed, 4 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError
from .experiments import (
    EXIT_CHECK_FAILED,
    EXIT_INTERNAL,
    EXIT_OK,
    EXIT_VALIDATION,
    PLOT_COLUMNS,
    SUBCOMMANDS,
    PlotSchemaError,
    emit_plot_script,
    load_config_file,
    run_experiment,
)

_HELP = {
    "simulate": "simulate the two-type particle system and write per-replicate summaries",
    "simulate-sde": "integrate the torus SPDE system or its limit diffusion",
    "kernels": "tabulate transition probabilities and Green functions on a torus",
    "moments-check": "compare closed-form moments against particle Monte Carlo",
    "coexistence": "estimate the probability that both types survive on Z^d",
    "fss": "compare the rescaled particle totals with the limit diffusion",
    "duality-check": "check the self-duality identity of the SPDE system",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="catbranch", description="Mutually catalytic branching simulations.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=_HELP[name])
        p.add_argument("--config", required=True, help="JSON config file, or - for stdin")
        p.add_argument("--out", help="output directory (default runs/<subcommand>-<config hash>)")
        p.add_argument("--workers", type=int, help="worker processes; results do not depend on this")
    p = sub.add_parser("plot-script", help="write a matplotlib script for a result CSV")
    p.add_argument("csv", help="result CSV produced by moments-check, coexistence or fss")
    p.add_argument("--kind", required=True, choices=sorted(PLOT_COLUMNS))
    p.add_argument("--out", help="path of the generated script")
    return parser


def _error(kind: str, payload: dict, code: int) -> int:
    print(json.dumps({"error": kind, **payload}, sort_keys=True), file=sys.stderr)
    return code


def _read_config(source: str) -> dict:
    if source == "-":
        try:
            return json.loads(sys.stdin.read())
        except json.JSONDecodeError as exc:
            raise ConfigError([("", f"invalid JSON: {exc}")]) from None
    path = Path(source)
    if not path.is_file():
        raise ConfigError([("", f"config file {source!r} not found")])
    return load_config_file(path)


def _moment_diff_table(summary: dict) -> str:
    lines = [f"{'formula':<24} {'t':>8} {'oracle':>14} {'estimate':>14} {'stderr':>12} {'z':>8}"]
    for name, t, oracle, est, se, z in summary["failing"]:
        lines.append(f"{name:<24} {t:>8.4g} {oracle:>14.6g} {est:>14.6g} {se:>12.4g} {z:>8.3g}")
    return "\n".join(lines)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION

    if args.command == "plot-script":
        try:
            path = emit_plot_script(args.csv, args.kind, args.out)
        except (PlotSchemaError, OSError) as exc:
            return _error("plot-script", {"message": str(exc)}, EXIT_VALIDATION)
        print(path)
        return EXIT_OK

    if args.workers is not None and args.workers < 1:
        return _error("config", {"fields": [{"path": "workers", "message": "must be >= 1"}]}, EXIT_VALIDATION)
    try:
        raw = _read_config(args.config)
        manifest = run_experiment(args.command, raw, args.out, args.workers)
    except ConfigError as exc:
        print(json.dumps(exc.to_json(), sort_keys=True), file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        traceback.print_exc(file=sys.stderr)
        return _error("internal", {"type": type(exc).__name__, "message": str(exc)}, EXIT_INTERNAL)

    print(json.dumps({"out_dir": manifest.out_dir, "config_hash": manifest.config_hash,
                      "summary": manifest.summary, "exit_code": manifest.exit_code}, sort_keys=True))
    if manifest.exit_code == EXIT_CHECK_FAILED and args.command == "moments-check":
        print(_moment_diff_table(manifest.summary), file=sys.stderr)
    return manifest.exit_code


if __name__ == "__main__":
    sys.exit(main())
