"""Command-line interface: synth (emit a cohort CSV), run (full experiment),
report (re-render a stored JSON report).

Exit codes: 0 success, 1 validation error, 2 runtime error. The FAIRBENCH_LOG
environment variable sets the log level (DEBUG, INFO, WARNING, ...).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

from ._version import __version__
from .dataset import synthesize_cohort, write_cohort_csv
from .errors import FairbenchError
from .experiment import load_experiment_config, run_experiment
from .report import emit_report, load_report_json
from .specfile import default_cohort_spec, load_cohort_spec

log = logging.getLogger("fairbench")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairbench")
    parser.add_argument("--version", action="version", version=f"fairbench {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic cohort CSV from a spec")
    synth.add_argument("--spec", help="cohort spec YAML (default: shipped calibration)")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True, help="output CSV path")

    run = sub.add_parser("run", help="run the full experiment from a config file")
    run.add_argument("--config", required=True, help="experiment config YAML")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=int, help="override the master seed")
    run.add_argument("--formats", default="md,json", help="comma list of md,json,svg")
    run.add_argument("--workers", type=int, help="override worker count")

    rep = sub.add_parser("report", help="re-render a stored report.json")
    rep.add_argument("--in", dest="input", required=True, help="path to report.json")
    rep.add_argument("--formats", default="md", help="comma list of md,json,svg")
    rep.add_argument("--out", required=True, help="output directory")
    return parser


def _configure_logging() -> None:
    level_name = os.environ.get("FAIRBENCH_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _cmd_synth(args) -> int:
    spec = load_cohort_spec(args.spec) if args.spec else default_cohort_spec()
    cohort = synthesize_cohort(spec, args.seed)
    path = write_cohort_csv(cohort, args.out)
    log.info("wrote %d records (%d ITP / %d non-ITP) to %s",
             len(cohort), cohort.n_itp, cohort.n_non_itp, path)
    print(path)
    return 0


def _cmd_run(args) -> int:
    from dataclasses import replace

    config = load_experiment_config(args.config)
    if args.seed is not None:
        config = replace(config, master_seed=args.seed)
    if args.workers is not None:
        config = replace(config, n_workers=args.workers)

    started = time.perf_counter()
    report = run_experiment(config)
    wall = time.perf_counter() - started
    log.info("experiment finished in %.1f s", wall)

    out_dir = Path(args.out)
    written = []
    for fmt in _parse_formats(args.formats):
        written += emit_report(report, fmt, out_dir)

    # audit sidecar; deliberately not part of report.json so reports stay
    # byte-identical across runs of the same config
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "wall_clock_seconds": round(wall, 3),
        "toolkit_version": __version__,
        "python": sys.version.split()[0],
        "platform": platform.platform(),
        "argv": sys.argv[1:],
        "config_hash": report.provenance["config_hash"],
    }
    meta_path = out_dir / "run_meta.json"
    meta_path.write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    written.append(meta_path)

    for path in written:
        print(path)
    return 0


def _cmd_report(args) -> int:
    report = load_report_json(args.input)
    written = []
    for fmt in _parse_formats(args.formats):
        written += emit_report(report, fmt, Path(args.out))
    for path in written:
        print(path)
    return 0


def _parse_formats(text: str) -> list[str]:
    formats = [f.strip() for f in text.split(",") if f.strip()]
    if not formats:
        raise FairbenchError("no report formats given")
    return formats


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_report(args)
    except FairbenchError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure, not a validation problem
        log.exception("unexpected failure")
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
