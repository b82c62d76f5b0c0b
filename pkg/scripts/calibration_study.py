"""Monte Carlo diagnostics behind the calibration choices.

Prints, for the 20-point quadrant regime and the 500-point regime:

* the mean of the smallest eigenvalue over the true noise variance, with
  and without the ``N / (N - 5)`` degrees-of-freedom factor;
* band coverage beyond |2| with the estimated and with the known noise level,
  next to the Student-t expectation for 15 degrees of freedom;
* the tip offset in standard errors after one and two reweighting passes;
* quantiles of the fitted ellipse centers, showing how heavy their tails are.

    python3 scripts/calibration_study.py --trials 2000
"""

import argparse
import math

import numpy as np
from scipy import stats

from conicfit.conic import ConicClass
from conicfit.recipe import PipelineOptions
from conicfit.synth import CurveSpec, NoiseSpec, run_ensemble

CURVE = CurveSpec(a=1.0, b=0.1)


def noise_estimate(trials, seed):
    ens = run_ensemble(CURVE, NoiseSpec(0.001, seed), 20, trials, PipelineOptions())
    lam0 = np.array([max(t.result.final.lambdas[0], 0.0) for t in ens.ok_trials()])
    s2 = np.array([t.result.final.sigma2_hat for t in ens.ok_trials()])
    print(f"mean lambda0 / sigma2      {lam0.mean() / 1e-6:.4f}  (15/20 = 0.75)")
    print(f"mean sigma2_hat / sigma2   {s2.mean() / 1e-6:.4f}  "
          f"+- {s2.std(ddof=1) / math.sqrt(len(s2)) / 1e-6:.4f}")


def coverage(trials, seed):
    tp = CURVE.parameters(50)
    t_tail = 2 * stats.t.sf(2, 15)
    for label, sigma in (("estimated", None), ("known", 0.001)):
        ens = run_ensemble(CURVE, NoiseSpec(0.001, seed), 20, trials,
                           PipelineOptions(noise_sigma=sigma), tp)
        print(f"beyond |2|, {label:9s} noise  {100 * np.mean(ens.summary.beyond[2]):.2f}%")
    print(f"  normal tail 4.55%, Student-t(15) tail {100 * t_tail:.2f}%")


def tip_bias(trials, seed):
    tp = np.array([0.0])
    for passes in (1, 2):
        ens = run_ensemble(CURVE, NoiseSpec(0.004, seed), 500, trials,
                           PipelineOptions(reweight_passes=passes), tp)
        z = ens.summary.offset_mean[0] / ens.summary.offset_se[0]
        print(f"tip offset, {passes} reweighting pass{'es' if passes > 1 else ''}  "
              f"{ens.summary.offset_mean[0]:+.2e} ({z:+.2f} SE)")


def center_tails(trials, seed, sigma):
    ens = run_ensemble(CURVE, NoiseSpec(sigma, seed), 500, trials, PipelineOptions(center=True))
    rows = [t.result.center for t in ens.ok_trials()
            if t.result.center is not None and t.result.final.conic_class is ConicClass.ELLIPSE]
    raw = np.array([r.c for r in rows])
    cor = np.array([r.corrected for r in rows])
    q = np.percentile(raw[:, 0], [1, 25, 50, 75, 99])
    n = len(rows)
    z_raw = raw.mean(axis=0) / (raw.std(axis=0, ddof=1) / math.sqrt(n))
    z_cor = cor.mean(axis=0) / (cor.std(axis=0, ddof=1) / math.sqrt(n))
    print(f"sigma {sigma}: {n} ellipses, center x quantiles 1/25/50/75/99% "
          + " ".join(f"{v:+.3g}" for v in q))
    print(f"  sd {raw[:, 0].std(ddof=1):.3g}, robust sd {(q[3] - q[1]) / 1.349:.3g}; "
          f"mean offset raw ({z_raw[0]:+.2f}, {z_raw[1]:+.2f}) SE, "
          f"corrected ({z_cor[0]:+.2f}, {z_cor[1]:+.2f}) SE")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--trials", type=int, default=2000)
    p.add_argument("--seed", type=int, default=11)
    args = p.parse_args()
    noise_estimate(args.trials, args.seed)
    coverage(args.trials, args.seed)
    tip_bias(args.trials, args.seed)
    for sigma in (0.004, 0.001):
        center_tails(args.trials, args.seed, sigma)


if __name__ == "__main__":
    main()
