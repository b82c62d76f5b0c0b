"""Run the bundled experiment configs and write their CSV and SVG outputs.

    python3 scripts/reproduce_figures.py                 # all configs into ./figures
    python3 scripts/reproduce_figures.py fig2 fig7 --out /tmp/figs --trials 200
"""

import argparse
import dataclasses
import os
import time

from conicfit.experiment import bundled_config, bundled_configs, run_experiment


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("names", nargs="*", help=f"configs to run (default: {' '.join(bundled_configs())})")
    p.add_argument("--out", default="figures", help="output root; one subdirectory per config")
    p.add_argument("--trials", type=int, default=None, help="override the trial count")
    p.add_argument("--workers", type=int, default=None)
    args = p.parse_args()

    for name in args.names or bundled_configs():
        cfg = bundled_config(name)
        if args.trials is not None:
            cfg = dataclasses.replace(cfg, n_trials=args.trials)
        start = time.perf_counter()
        paths = run_experiment(cfg, os.path.join(args.out, name), workers=args.workers)
        print(f"{name}: {len(paths)} files in {time.perf_counter() - start:.1f} s")
        for path in paths:
            print(f"  {path}")


if __name__ == "__main__":
    main()
