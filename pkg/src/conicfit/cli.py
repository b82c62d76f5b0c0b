"""Command-line entry point: ``conicfit fit | experiment | selftest``."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .core import FitError
from .experiment import ConfigError, bundled_config, bundled_configs, load_config, run_experiment
from .recipe import PipelineOptions, run_pipeline
from .report import InputError, build_report, parse_points, report_csv
from .selftest import format_report, run_selftest

EXIT_INPUT, EXIT_NUMERICAL, EXIT_CONFIG = 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="conicfit",
                                description="Conic fitting with error estimates.")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a conic to a CSV file of x,y points")
    f.add_argument("file", help="point file ('-' reads stdin)")
    f.add_argument("--no-reweight", action="store_true", help="single unweighted fit")
    f.add_argument("--sampson", action="store_true",
                   help="reweight with gradients at the measured points")
    f.add_argument("--no-curvature-correction", action="store_true")
    f.add_argument("--type", choices=["ellipse", "hyperbola", "parabola"], dest="target")
    f.add_argument("--noise-sigma", type=float, default=None,
                   help="known measurement standard deviation")
    f.add_argument("--format", choices=["json", "csv"], default="json")
    f.add_argument("-o", "--output", help="write the report here instead of stdout")

    e = sub.add_parser("experiment", help="run a Monte Carlo experiment config")
    e.add_argument("config", help=f"JSON config path or bundled name ({', '.join(bundled_configs())})")
    e.add_argument("--out", help="output directory (default: the config's)")
    e.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: CONIC_THREADS, 0 = all cores)")

    s = sub.add_parser("selftest", help="run the quick self-check")
    s.add_argument("--disable-curvature-correction", action="store_true", help=argparse.SUPPRESS)
    return p


def _options(args) -> PipelineOptions:
    if args.no_reweight and args.sampson:
        raise ConfigError("--no-reweight and --sampson are exclusive")
    weighting = "unweighted" if args.no_reweight else ("sampson" if args.sampson else "reweighted")
    center = args.target in (None, "ellipse", "hyperbola")
    return PipelineOptions(weighting=weighting,
                           curvature_correction=not args.no_curvature_correction,
                           target=args.target, center=center, noise_sigma=args.noise_sigma)


def _write(text: str, path) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    tmp = f"{path}.partial"
    try:
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def cmd_fit(args) -> int:
    options = _options(args)
    if args.file == "-":
        text, source = sys.stdin.read(), "<stdin>"
    else:
        try:
            with open(args.file, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise InputError(f"{args.file}: {exc.strerror}") from exc
        source = args.file
    pts = parse_points(text, source)
    result = run_pipeline(pts, options)
    report = build_report(result, options, len(pts), source)
    if args.format == "json":
        out = json.dumps(report, indent=2, allow_nan=False) + "\n"
    else:
        out = report_csv(report)
    _write(out, args.output)
    return 0


def cmd_experiment(args) -> int:
    if os.path.isfile(args.config):
        cfg = load_config(args.config)
    elif args.config in bundled_configs():
        cfg = bundled_config(args.config)
    else:
        raise ConfigError(f"{args.config}: no such file or bundled config")
    for path in run_experiment(cfg, args.out, workers=args.workers):
        print(path)
    return 0


def cmd_selftest(args) -> int:
    checks = run_selftest(curvature_correction=not args.disable_curvature_correction)
    sys.stdout.write(format_report(checks))
    return 0 if all(c.passed for c in checks) else 1


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handler = {"fit": cmd_fit, "experiment": cmd_experiment, "selftest": cmd_selftest}
    try:
        return handler[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FitError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
