"""em-bounds command line: gen, sweep, plotdata."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .model import ModelError, save_model
from .scenario import GenerationError, ScenarioSpec, generate_s, split_s
from .sweep import ConfigError, load_config, ordering_violations, run_sweep, write_plotdata, load_report

log = logging.getLogger("em_bounds")

EXIT_OK, EXIT_ERROR, EXIT_PARTIAL = 0, 1, 2


def cmd_gen(args: argparse.Namespace) -> int:
    try:
        d = json.loads(Path(args.spec).read_text())
        spec = ScenarioSpec.from_dict(d)
        if args.seed is not None:
            spec = replace(spec, seed=args.seed)
        s = generate_s(spec)
    except (OSError, json.JSONDecodeError, ModelError, GenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    model = split_s(s, spec, tag=Path(args.spec).stem)
    save_model(model, args.output)
    n_s = spec.n_s
    gam = s[-n_s:, -n_s:]
    print(f"wrote {args.output}: ||S||_2 = {np.linalg.norm(s, 2):.6f}, "
          f"||Gamma||_2 = {np.linalg.norm(gam, 2):.6f}, digest {model.digest()}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config)
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.tol_feas is not None:
        cfg.solver["tol_feas"] = args.tol_feas
    if args.tol_gap is not None:
        cfg.solver["tol_gap"] = args.tol_gap
    if args.seed is not None:
        cfg.seeds = [args.seed]
    try:
        summary = run_sweep(cfg, args.output, threads=args.threads)
    except (ConfigError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(f"{summary.computed} cells computed, {summary.skipped} already present, "
          f"{summary.failed} failed, {summary.rows} rows in {Path(args.output) / 'results.csv'}")
    return EXIT_PARTIAL if summary.failed else EXIT_OK


def cmd_plotdata(args: argparse.Namespace) -> int:
    try:
        paths = write_plotdata(args.report, args.output)
        bad = ordering_violations(load_report(_report_path(args.report))["rows"])
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for p in paths:
        print(p)
    for line in bad:
        print(f"warning: bound below ES optimum: {line}", file=sys.stderr)
    return EXIT_OK


def _report_path(p: str) -> Path:
    path = Path(p)
    return path / "report.json" if path.is_dir() else path


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="em-bounds", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a scenario file from a spec")
    g.add_argument("spec")
    g.add_argument("-o", "--output", required=True)
    g.add_argument("--seed", type=int, default=None, help="override the spec seed")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("sweep", help="compute bounds and optimizers over n_s")
    s.add_argument("config")
    s.add_argument("-o", "--output", required=True, help="output directory")
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--tol-feas", type=float, default=None)
    s.add_argument("--tol-gap", type=float, default=None)
    s.add_argument("--seed", type=int, default=None, help="run a single optimizer seed")
    s.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plotdata", help="write per-figure CSV series from a sweep report")
    p.add_argument("report", help="sweep output directory or report.json")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=cmd_plotdata)
    return ap


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("EM_BOUNDS_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
