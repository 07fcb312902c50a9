"""Command-line entry point: run, report, validate."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import ConfigError, parse_config
from .report import cli_report
from .runner import cli_run
from .validate import cli_validate

OUT_ROOT_ENV = "OBBO_OUT_ROOT"


def _load_config(path: str):
    try:
        return parse_config(path)
    except FileNotFoundError:
        print(f"error: config file not found: {path}", file=sys.stderr)
        raise SystemExit(2)
    except json.JSONDecodeError as exc:
        print(
            f"error: {path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}",
            file=sys.stderr,
        )
        raise SystemExit(2)
    except ConfigError as exc:
        print(f"error: {path}: {exc}", file=sys.stderr)
        raise SystemExit(2)


def _resolve_out(args_out: str | None, config, config_path: str) -> Path:
    if args_out:
        return Path(args_out)
    if config.output_dir:
        return Path(config.output_dir)
    root = Path(os.environ.get(OUT_ROOT_ENV, "results"))
    return root / Path(config_path).stem


def _parse_seeds(text: str | None) -> list[int] | None:
    if text is None:
        return None
    try:
        return [int(s) for s in text.split(",") if s.strip() != ""]
    except ValueError:
        print(f"error: --seeds must be comma-separated integers, got {text!r}", file=sys.stderr)
        raise SystemExit(2)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="obbo",
        description="Run, summarize, and validate online bilevel optimization experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute every (experiment x seed) cell of a config")
    p_run.add_argument("--config", required=True, help="path to the JSON config")
    p_run.add_argument("--out", help="output directory (default: config output_dir, "
                       f"else ${OUT_ROOT_ENV}/<config stem>)")
    p_run.add_argument("--seeds", help="comma-separated seed override for all experiments")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    p_report = sub.add_parser("report", help="aggregate a results directory")
    p_report.add_argument("results_dir", help="directory containing manifest.json and CSVs")
    p_report.add_argument("--out", help="where to write report files (default: results dir)")

    p_val = sub.add_parser("validate", help="check a config against the stability conditions")
    p_val.add_argument("--config", required=True, help="path to the JSON config")

    args = parser.parse_args(argv)

    if args.command == "run":
        config = _load_config(args.config)
        out = _resolve_out(args.out, config, args.config)
        manifest = cli_run(config, out, _parse_seeds(args.seeds), jobs=args.jobs)
        n_ok = sum(1 for e in manifest["outputs"] if e["status"] == "ok")
        n_bad = len(manifest["outputs"]) - n_ok
        print(f"wrote {n_ok} run(s) to {out}" + (f", {n_bad} aborted" if n_bad else ""))
        for entry in manifest["outputs"]:
            if entry["status"] != "ok":
                print(f"  aborted: {entry['run_id']}: {entry.get('error')}")
        return 0

    if args.command == "report":
        try:
            summary = cli_report(args.results_dir, args.out)
        except FileNotFoundError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(f"report files: {', '.join(summary['written']) or '(none)'}")
        for issue in summary["issues"]:
            print(f"  issue: {issue}")
        return 0

    if args.command == "validate":
        config = _load_config(args.config)
        notes = cli_validate(config)
        if notes:
            for note in notes:
                print(note)
        else:
            print("no warnings")
        return 0

    return 2


if __name__ == "__main__":
    raise SystemExit(main())
