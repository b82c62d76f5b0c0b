"""Fast self-check: algebraic identities plus small seeded Monte Carlo runs.

The report contains no timings, so two runs print identical text.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import conic
from .core import FitError
from .pipeline import generic_fit
from .recipe import PipelineOptions, run_pipeline
from .synth import CurveSpec, NoiseSpec, add_noise, run_ensemble
from .typed import project_to_parabola, truncated_mean_factor


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def random_exact_case(rng: np.random.Generator, n: int = 12):
    """Exact points on a random posed ellipse or hyperbola arc, with its coefficients."""
    rot = rng.uniform(0, math.pi)
    shift = rng.uniform(-1, 1, 2)
    a, b = sorted(rng.uniform(0.3, 2.0, 2), reverse=True)
    if rng.uniform() < 0.5:
        t = np.linspace(0, rng.uniform(1.5, 2 * math.pi), n, endpoint=False)
        local = np.column_stack([a * np.cos(t), b * np.sin(t)])
        g = np.array([1 / a ** 2, 0, 1 / b ** 2, 0, 0, -1.0])
    else:
        t = np.linspace(-1.2, 1.2, n)
        local = np.column_stack([a * np.cosh(t), b * np.sinh(t)])
        g = np.array([1 / a ** 2, 0, -1 / b ** 2, 0, 0, -1.0])
    c, s = math.cos(rot), math.sin(rot)
    pts = local @ np.array([[c, -s], [s, c]]).T + shift
    g = conic.transform_conic(g, rot, shift)
    return pts, g / np.linalg.norm(g)


def angle_between(g, h) -> float:
    """Angle between two coefficient lines (sign ignored)."""
    g = np.asarray(g, dtype=float) / np.linalg.norm(g)
    h = np.asarray(h, dtype=float) / np.linalg.norm(h)
    return float(np.linalg.norm(g - np.dot(g, h) * h))


def check_exact_recovery(n_cases: int = 100, seed: int = 1) -> Check:
    rng = np.random.default_rng(seed)
    worst_angle, worst_ratio = 0.0, 0.0
    for _ in range(n_cases):
        pts, g = random_exact_case(rng)
        fit = generic_fit(pts)
        worst_angle = max(worst_angle, angle_between(fit.g0, g))
        worst_ratio = max(worst_ratio, abs(fit.lambdas[0]) / fit.lambdas[4])
    ok = worst_angle < 1e-8 and worst_ratio < 1e-10
    return Check("exact-recovery", ok,
                 f"{n_cases} conics, max angle {worst_angle:.1e}, max lambda0/lambda4 {worst_ratio:.1e}")


def quadrature_truncated_mean(x0: float) -> float:
    """Mean of N(0, 1) restricted to ``[x0, inf)`` by adaptive quadrature.

    Integrates in ``u = x - x0`` so the common factor ``exp(-x0^2 / 2)``
    cancels and the tails stay representable.
    """
    def w(u):
        return math.exp(-x0 * u - u * u / 2)

    den = integrate.quad(w, 0, math.inf, epsabs=0, epsrel=1e-13, limit=200)[0]
    num = integrate.quad(lambda u: u * w(u), 0, math.inf, epsabs=0, epsrel=1e-13, limit=200)[0]
    return x0 + num / den


def check_truncated_mean() -> Check:
    worst = max(abs(truncated_mean_factor(x0) - quadrature_truncated_mean(x0))
                for x0 in (-8.0, -2.0, 0.0, 1.0, 3.0, 6.0))
    return Check("truncated-mean", worst < 1e-10, f"max deviation from quadrature {worst:.1e}")


def check_curvature_algebra(seed: int = 2) -> Check:
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(30, 2))
    c = conic.build_constraint_cn(pts)
    g = rng.normal(size=6)
    t = conic.curvature_transform(0.37)
    gap = max(float(np.max(np.abs(conic.LAPLACE_L @ c))),
              abs(float((t @ g) @ c @ (t @ g) - g @ c @ g)))
    return Check("curvature-algebra", gap < 1e-12, f"L C and normalization drift {gap:.1e}")


def check_parabolic_projection(n_cases: int = 100, seed: int = 3) -> Check:
    rng = np.random.default_rng(seed)
    worst, most = 0.0, 0
    for k in range(n_cases):
        pts, _ = random_exact_case(rng, 20)
        pts = pts + rng.normal(scale=0.01, size=pts.shape)
        pf = project_to_parabola(generic_fit(pts))
        worst = max(worst, pf.residual)
        most = max(most, pf.iterations)
    ok = worst < 1e-12 and most <= 50
    return Check("parabolic-projection", ok,
                 f"{n_cases} fits, max |qform| {worst:.1e}, max iterations {most}")


def _tip_offsets(options, n_trials, seed):
    curve = CurveSpec()
    exact = curve.sample(500)
    noise = NoiseSpec(0.004, seed)
    tip, normal = np.array([1.0, 0.0]), np.array([1.0, 0.0])
    out = []
    for k in range(n_trials):
        res = run_pipeline(add_noise(exact, noise, k), options)
        out.append(conic.normal_offset(res.final.g0, tip, normal))
    out = np.array(out)
    return out.mean() / (out.std(ddof=1) / math.sqrt(len(out)))


def check_curvature_bias(curvature_correction: bool = True, n_trials: int = 500,
                         seed: int = 40) -> Check:
    z = _tip_offsets(PipelineOptions(curvature_correction=curvature_correction), n_trials, seed)
    return Check("curvature-bias", abs(z) <= 3.0,
                 f"{n_trials} trials, mean tip offset {z:+.2f} standard errors")


def check_calibration(n_trials: int = 500, seed: int = 20,
                      curvature_correction: bool = True) -> Check:
    curve = CurveSpec()
    ens = run_ensemble(curve, NoiseSpec(0.001, seed), 20, n_trials,
                       PipelineOptions(curvature_correction=curvature_correction), workers=1)
    ref = run_pipeline(curve.sample(20)).final
    g = np.array([t.result.final.g0 / (ref.g0 @ ref.constraint @ t.result.final.g0)
                  for t in ens.ok_trials()])
    ratio = np.diag(np.cov(g.T)) / np.diag(ens.summary.v0_mean)
    worst = float(np.max(np.abs(ratio - 1)))
    # 500 trials put the sampling error of a variance near 6 percent
    return Check("covariance-calibration", worst < 0.25,
                 f"{n_trials} trials, max diagonal variance mismatch {100 * worst:.1f}%")


def check_worker_invariance(seed: int = 5) -> Check:
    curve = CurveSpec()
    a = run_ensemble(curve, NoiseSpec(0.001, seed), 20, 12, workers=1)
    b = run_ensemble(curve, NoiseSpec(0.001, seed), 20, 12, workers=2)
    same = all(np.array_equal(x.result.final.g0, y.result.final.g0)
               for x, y in zip(a.trials, b.trials))
    same = same and np.array_equal(a.summary.g_cov, b.summary.g_cov)
    return Check("worker-invariance", same, "12 trials, 1 vs 2 workers "
                 + ("identical" if same else "differ"))


def run_selftest(curvature_correction: bool = True) -> list:
    checks = [check_exact_recovery, check_truncated_mean, check_curvature_algebra,
              check_parabolic_projection, check_worker_invariance]
    out = []
    for fn in checks:
        out.append(_guard(fn))
    out.append(_guard(lambda: check_calibration(curvature_correction=curvature_correction),
                      "covariance-calibration"))
    out.append(_guard(lambda: check_curvature_bias(curvature_correction), "curvature-bias"))
    return out


def _guard(fn, name=None) -> Check:
    try:
        return fn()
    except (FitError, np.linalg.LinAlgError) as exc:
        return Check(name or fn.__name__.removeprefix("check_"), False, f"error: {exc}")


def format_report(checks) -> str:
    lines = [c.line() for c in checks]
    n_fail = sum(not c.passed for c in checks)
    lines.append(f"{len(checks) - n_fail}/{len(checks)} checks passed")
    return "\n".join(lines) + "\n"
