"""The eleven acceptance criteria, each printing one PASS/FAIL line.

Monte Carlo seeds follow a fixed rule: each regime uses the seed of the
bundled config that reproduces it (Fig-2 data: 2, Fig-4 data: 4).
"""

import io
import math
import time
from contextlib import redirect_stdout

import numpy as np
import pytest

from conicfit import cli, conic
from conicfit.conic import ConicClass
from conicfit.pipeline import generic_fit
from conicfit.recipe import PipelineOptions, run_pipeline
from conicfit.selftest import angle_between, quadrature_truncated_mean, random_exact_case
from conicfit.synth import CurveSpec, NoiseSpec, run_ensemble
from conicfit.typed import Q, constraint_projector, project_to_parabola, truncated_mean_factor

from conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.slow

FIG2 = CurveSpec(a=1.0, b=0.1)
FIG2_NOISE = NoiseSpec(0.001, 2)
FIG4_NOISE = NoiseSpec(0.004, 4)
TEST_PARAMS = FIG2.parameters(50)


def verdict(number, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line


@pytest.fixture(scope="module")
def fig2_default():
    """Fig-2 regime with the default (reweighted) pipeline and estimated noise."""
    return run_ensemble(FIG2, FIG2_NOISE, 20, 2000, PipelineOptions(), TEST_PARAMS)


@pytest.fixture(scope="module")
def fig4_offsets():
    runs = {}
    for label, opts in (("corrected", PipelineOptions()),
                        ("uncorrected", PipelineOptions(curvature_correction=False)),
                        ("sampson", PipelineOptions(weighting="sampson"))):
        runs[label] = run_ensemble(FIG2, FIG4_NOISE, 500, 2000, opts, TEST_PARAMS)
    return runs


def test_criterion_1_exact_recovery():
    rng = np.random.default_rng(1)
    cases = [random_exact_case(rng, int(rng.integers(6, 40))) for _ in range(100)]
    start = time.perf_counter()
    worst_ratio = worst_angle = 0.0
    for pts, g in cases:
        fit = generic_fit(pts)
        worst_ratio = max(worst_ratio, abs(fit.lambdas[0]) / fit.lambdas[4])
        worst_angle = max(worst_angle, angle_between(fit.g0, g))
    elapsed = time.perf_counter() - start
    ok = worst_ratio < 1e-10 and worst_angle < 1e-8 and elapsed < 1.0
    verdict(1, ok, f"100 conics, max lambda0/lambda4 {worst_ratio:.1e}, "
                   f"max angle {worst_angle:.1e}, {elapsed:.2f} s")


def test_criterion_2_covariance_calibration():
    start = time.perf_counter()
    ens = run_ensemble(FIG2, FIG2_NOISE, 20, 10_000, PipelineOptions())
    elapsed = time.perf_counter() - start
    ref = run_pipeline(FIG2.sample(20)).final
    # fix the gauge: every estimate scaled to ref.g0^T C_ref g = 1, matching V0 C G0 = 0
    g = np.array([t.result.final.g0 / (ref.g0 @ ref.constraint @ t.result.final.g0)
                  for t in ens.ok_trials()])
    emp = np.cov(g.T)
    pred = ens.summary.v0_mean
    big = np.abs(pred) >= 0.01 * np.abs(pred).max()
    rel = np.abs(emp[big] - pred[big]) / np.abs(pred[big])
    worst = float(rel.max())
    ok = worst < 0.10 and elapsed < 60 and ens.summary.n_failed == 0
    verdict(2, ok, f"10000 trials, {int(big.sum())} elements, max relative mismatch "
                   f"{100 * worst:.1f}%, failures {ens.summary.n_failed}, {elapsed:.1f} s")
    s2 = np.array([t.result.final.sigma2_hat for t in ens.ok_trials()])
    z = (s2.mean() - 1e-6) / (s2.std(ddof=1) / math.sqrt(len(s2)))
    print(f"  noise estimate: mean sigma2_hat / sigma2 = {s2.mean() / 1e-6:.4f} ({z:+.2f} SE)")
    assert abs(z) < 3


def test_criterion_3_band_coverage(fig2_default):
    ens = run_ensemble(FIG2, FIG2_NOISE, 20, 2000, PipelineOptions(noise_sigma=0.001),
                       TEST_PARAMS)
    frac = float(np.mean(ens.summary.beyond[2]))
    est = float(np.mean(fig2_default.summary.beyond[2]))
    ok = 0.031 <= frac <= 0.061
    verdict(3, ok, f"2000 trials x 50 points, beyond |2| {100 * frac:.2f}% with known sigma "
                   f"(estimated-sigma band: {100 * est:.2f}%)")


def test_criterion_4_reweighting_gain(fig2_default):
    tip = int(np.argmin(np.abs(TEST_PARAMS)))
    pre = np.mean([t.halfwidth_prelim[tip] for t in fig2_default.ok_trials()])
    post = np.mean([t.halfwidth[tip] for t in fig2_default.ok_trials()])
    ratio = pre / post
    hyper = np.mean([t.result.final.conic_class is ConicClass.HYPERBOLA
                     for t in fig2_default.ok_trials()])
    verdict(4, 1.4 <= ratio <= 2.8, f"tip half-width {pre:.2e} -> {post:.2e}, "
                                    f"shrink factor {ratio:.2f} (hyperbolic finals {100 * hyper:.2f}%)")


def _tip_z(ens):
    tip = int(np.argmin(np.abs(TEST_PARAMS)))
    return ens.summary.offset_mean[tip] / ens.summary.offset_se[tip]


def test_criterion_5_curvature_bias(fig4_offsets):
    z_on = _tip_z(fig4_offsets["corrected"])
    z_off = _tip_z(fig4_offsets["uncorrected"])
    ok = abs(z_on) <= 3 and z_off > 3
    verdict(5, ok, f"2000 trials, tip offset {z_on:+.2f} SE corrected, {z_off:+.2f} SE uncorrected")


def _longest_run(mask):
    best = run = 0
    for m in mask:
        run = run + 1 if m else 0
        best = max(best, run)
    return best


def test_criterion_6_sampson_bias(fig4_offsets):
    z = {k: e.summary.offset_mean / e.summary.offset_se for k, e in fig4_offsets.items()}
    inside = z["sampson"] < -3
    run = _longest_run(inside)
    base = int(np.sum(z["corrected"] < -3))
    # a band: at least 5 consecutive test points, a tenth of the arc
    verdict(6, run >= 5, f"Sampson fits inside beyond 3 SE at {int(inside.sum())}/50 test "
                         f"points (longest band {run}); optimal-weight fits at {base}/50")


def test_criterion_7_parabolic_projection():
    rng = np.random.default_rng(7)
    worst_q, most, worse_probes = 0.0, 0, 0
    for _ in range(1000):
        pts, _ = random_exact_case(rng, 20)
        fit = generic_fit(pts + rng.normal(scale=0.01, size=pts.shape))
        pf = project_to_parabola(fit)
        gb = pf.g_bar_raw
        worst_q = max(worst_q, abs(gb @ Q @ gb))
        most = max(most, pf.iterations)
        worse_probes += _minimality_violations(fit, gb, rng)
    ok = worst_q < 1e-12 and most <= 50 and worse_probes == 0
    verdict(7, ok, f"1000 fits, max |G^T Q G| {worst_q:.1e}, max iterations {most}, "
                   f"{worse_probes} of 100000 probes beat the projection")


def _minimality_violations(fit, gb, rng, n_dirs=100, step=1e-4):
    c = fit.constraint
    c_plus = np.zeros((6, 6))
    c_plus[:5, :5] = np.linalg.inv(c[:5, :5])
    nrm = c_plus @ Q @ gb
    pi = constraint_projector(fit, gb)
    best = gb @ fit.scatter @ gb
    t = rng.normal(size=(n_dirs, 6)) @ pi.T
    t *= step * np.linalg.norm(gb) / np.linalg.norm(t, axis=1)[:, None]
    bad = 0
    for d in t:
        g = gb + d
        qa, qb, qc = nrm @ Q @ nrm, 2 * g @ Q @ nrm, g @ Q @ g
        if abs(qa) < 1e-300:
            a = -qc / qb
        else:
            disc = math.sqrt(max(qb * qb - 4 * qa * qc, 0.0))
            a = min(((-qb + disc) / (2 * qa), (-qb - disc) / (2 * qa)), key=abs)
        g = g + a * nrm
        g = g / math.sqrt(g @ c @ g)
        bad += g @ fit.scatter @ g < best * (1 - 1e-12)
    return int(bad)


def test_criterion_8_truncated_mean():
    worst = max(abs(truncated_mean_factor(x) - quadrature_truncated_mean(x))
                for x in (-8.0, -2.0, 0.0, 1.0, 3.0, 6.0))
    verdict(8, worst < 1e-10, f"max deviation from quadrature {worst:.1e}")


def test_criterion_9_type_constrained():
    dist, frac = {}, {}
    for label, weighting in (("unweighted", "unweighted"), ("weighted", "reweighted")):
        ens = run_ensemble(FIG2, FIG2_NOISE, 20, 2000,
                           PipelineOptions(weighting=weighting, target="ellipse"))
        ok_trials = ens.ok_trials()
        frac[label] = np.mean([conic.classify(t.result.typed.mean) is ConicClass.ELLIPSE
                               for t in ok_trials]) * len(ok_trials) / len(ens.trials)
        dist[label] = np.median([angle_between(t.result.typed.mean, t.result.final.g0)
                                 for t in ok_trials])
    ratio = dist["weighted"] / dist["unweighted"]
    ok = frac["unweighted"] == 1.0 and frac["weighted"] == 1.0 and ratio < 0.2
    verdict(9, ok, f"ellipse means {100 * frac['unweighted']:.1f}% / {100 * frac['weighted']:.1f}% "
                   f"(unweighted / weighted); median distance from G0 "
                   f"{dist['unweighted']:.2e} vs {dist['weighted']:.2e}, ratio {ratio:.3f}")


def test_criterion_10_center_bias():
    ens = run_ensemble(FIG2, FIG4_NOISE, 500, 2000, PipelineOptions(center=True))
    rows = [t.result.center for t in ens.ok_trials()
            if t.result.center is not None and t.result.final.conic_class is ConicClass.ELLIPSE]
    raw = np.array([c.c for c in rows])
    cor = np.array([c.corrected for c in rows])
    n = len(rows)
    z_raw = raw.mean(axis=0) / (raw.std(axis=0, ddof=1) / math.sqrt(n))
    z_cor = cor.mean(axis=0) / (cor.std(axis=0, ddof=1) / math.sqrt(n))
    ok = bool(np.all(np.abs(z_cor) < 3) and np.any(np.abs(z_raw) > 3))
    verdict(10, ok, f"{n} elliptical fits, corrected mean ({z_cor[0]:+.2f}, {z_cor[1]:+.2f}) SE, "
                    f"uncorrected ({z_raw[0]:+.2f}, {z_raw[1]:+.2f}) SE")


def test_criterion_11_determinism():
    runs = []
    for _ in range(2):
        buf = io.StringIO()
        with redirect_stdout(buf):
            code = cli.main(["selftest"])
        runs.append((code, buf.getvalue()))
    same_report = runs[0] == runs[1] and runs[0][0] == 0
    opts = PipelineOptions(center=True)
    a = run_ensemble(FIG2, FIG2_NOISE, 20, 40, opts, TEST_PARAMS, workers=1)
    b = run_ensemble(FIG2, FIG2_NOISE, 20, 40, opts, TEST_PARAMS, workers=3)
    fields = ("g_mean", "g_cov", "v0_mean", "offset_mean", "halfwidth_mean", "center_mean")
    same_ens = all(np.array_equal(getattr(a.summary, f), getattr(b.summary, f)) for f in fields)
    same_ens = same_ens and all(np.array_equal(x.result.final.g0, y.result.final.g0)
                                for x, y in zip(a.trials, b.trials))
    verdict(11, same_report and same_ens,
            f"selftest reports {'identical' if runs[0] == runs[1] else 'differ'} "
            f"(exit {runs[0][0]}), ensembles across 1/3 workers "
            f"{'identical' if same_ens else 'differ'}")
