"""Synthetic curves, reproducible noise, and the Monte Carlo harness."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtri

from . import conic
from .core import FitError

_TWO53 = float(2 ** 53)
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class CurveSpec:
    """A noise-free test curve.

    Ellipses are parametrized by ``theta`` as ``(a cos theta, b sin theta)``;
    parabolas ``y = x^2 / (4 f)`` by ``x``.  ``arc`` is the parameter range,
    and the pose (rotation about the origin, then translation) is applied
    last.
    """

    kind: str = "ellipse"
    a: float = 1.0
    b: float = 0.1
    focal_length: float = 0.01
    arc: tuple = (0.0, math.pi / 2)
    rotation: float = 0.0
    translation: tuple = (0.0, 0.0)
    spacing: str = "theta"

    def __post_init__(self):
        if self.kind == "ellipse":
            if not self.a >= self.b > 0:
                raise ValueError("ellipse needs a >= b > 0")
        elif self.kind == "parabola":
            if not self.focal_length > 0:
                raise ValueError("parabola needs focal_length > 0")
        else:
            raise ValueError(f"unknown curve kind {self.kind!r}")
        if not self.arc[1] > self.arc[0]:
            raise ValueError("empty arc")
        if self.spacing not in ("theta", "arclength"):
            raise ValueError(f"unknown spacing {self.spacing!r}")

    def true_conic(self) -> np.ndarray:
        """Coefficients, positive on the convex (outer) side, unit norm."""
        if self.kind == "ellipse":
            g = np.array([1 / self.a ** 2, 0.0, 1 / self.b ** 2, 0.0, 0.0, -1.0])
        else:
            g = np.array([1.0, 0.0, 0.0, 0.0, -4 * self.focal_length, 0.0])
        g = conic.transform_conic(g, self.rotation, self.translation)
        return g / np.linalg.norm(g)

    def _pose(self, p: np.ndarray) -> np.ndarray:
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        rot = np.array([[c, -s], [s, c]])
        return p @ rot.T + np.asarray(self.translation, dtype=float)

    def _local(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "ellipse":
            p = np.column_stack([self.a * np.cos(t), self.b * np.sin(t)])
            n = np.column_stack([np.cos(t) / self.a, np.sin(t) / self.b])
        else:
            f = self.focal_length
            p = np.column_stack([t, t * t / (4 * f)])
            n = np.column_stack([2 * t, -4 * f * np.ones_like(t)])
        return p, n / np.hypot(n[:, 0], n[:, 1])[:, None]

    def point_at(self, t) -> np.ndarray:
        return self._pose(self._local(np.atleast_1d(t))[0])

    def outward_normal(self, t) -> np.ndarray:
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return self._local(np.atleast_1d(t))[1] @ np.array([[c, -s], [s, c]]).T

    def parameters(self, n: int) -> np.ndarray:
        """Curve parameters of ``n`` points spread over the arc, endpoints included."""
        if n < 2:
            raise ValueError("need at least 2 points")
        t = np.linspace(self.arc[0], self.arc[1], n)
        if self.spacing == "theta":
            return t
        fine = np.linspace(self.arc[0], self.arc[1], 20001)
        p = self._local(fine)[0]
        s = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(p, axis=0).T))])
        return np.interp(np.linspace(0, s[-1], n), s, fine)

    def sample(self, n: int) -> np.ndarray:
        return self.point_at(self.parameters(n))


def sample_curve(spec: CurveSpec, n_points: int) -> np.ndarray:
    return spec.sample(n_points)


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError("sigma must be >= 0")


def standard_normals(seed: int, trial: int, n_points: int, dims: int = 2) -> np.ndarray:
    """Deterministic N(0, 1) draws, shape (n_points, dims).

    A Philox counter generator keyed by ``(seed, trial)`` supplies 53-bit
    uniforms in stream order point-major, so point ``i`` always gets the
    same offsets whatever ``n_points`` is.  Uniforms are mapped through the
    inverse normal CDF.
    """
    bg = np.random.Philox(key=np.array([seed & _MASK64, trial & _MASK64], dtype=np.uint64))
    raw = bg.random_raw(n_points * dims)
    u = ((raw >> np.uint64(11)).astype(float) + 0.5) / _TWO53
    return ndtri(u).reshape(n_points, dims)


def add_noise(points, spec: NoiseSpec, trial: int = 0) -> np.ndarray:
    """Isotropic Gaussian offsets with standard deviation ``spec.sigma``."""
    pts = np.asarray(points, dtype=float)
    if spec.sigma == 0:
        return pts.copy()
    return pts + spec.sigma * standard_normals(spec.seed, trial, pts.shape[0], pts.shape[1])


@dataclass
class TrialRecord:
    index: int
    points: np.ndarray
    result: object = None
    error: str | None = None
    band: np.ndarray | None = None
    offsets: np.ndarray | None = None
    halfwidth: np.ndarray | None = None
    halfwidth_prelim: np.ndarray | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


class Welford:
    """Streaming mean and covariance of fixed-length vectors."""

    def __init__(self, dim: int):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros((dim, dim))

    def add(self, x):
        x = np.asarray(x, dtype=float)
        self.n += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.n
        self.m2 = self.m2 + np.outer(delta, x - self.mean)

    @property
    def cov(self) -> np.ndarray:
        if self.n < 2:
            return np.zeros_like(self.m2)
        c = self.m2 / (self.n - 1)
        return 0.5 * (c + c.T)


@dataclass
class EnsembleSummary:
    n_trials: int
    n_failed: int
    g_mean: np.ndarray
    g_cov: np.ndarray
    v0_mean: np.ndarray
    sigma2_mean: float
    beyond: dict = field(default_factory=dict)
    offset_mean: np.ndarray | None = None
    offset_se: np.ndarray | None = None
    halfwidth_mean: np.ndarray | None = None
    center_mean: np.ndarray | None = None
    center_cov: np.ndarray | None = None
    corrected_center_mean: np.ndarray | None = None
    corrected_center_cov: np.ndarray | None = None
    predicted_center_cov: np.ndarray | None = None

    @property
    def failure_rate(self) -> float:
        return self.n_failed / self.n_trials


@dataclass
class TrialEnsemble:
    curve: CurveSpec
    noise: NoiseSpec
    n_points: int
    options: object
    test_params: np.ndarray
    trials: list
    summary: EnsembleSummary

    def ok_trials(self):
        return [t for t in self.trials if t.ok]

    def stack(self, attr: str) -> np.ndarray:
        return np.array([getattr(t, attr) for t in self.trials if t.ok])


def _run_trial(job):
    curve, noise, n_points, options, test_params, index = job
    from .recipe import run_pipeline

    exact = curve.sample(n_points)
    pts = add_noise(exact, noise, trial=index)
    rec = TrialRecord(index=index, points=pts)
    try:
        res = run_pipeline(pts, options)
    except (FitError, np.linalg.LinAlgError, FloatingPointError) as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
        return rec
    rec.result = res
    if test_params is not None and len(test_params):
        tp = curve.point_at(test_params)
        normals = curve.outward_normal(test_params)
        fit = res.final
        try:
            rec.band = fit.band()(tp)
        except FitError:
            rec.band = np.full(len(tp), np.nan)
        rec.halfwidth = fit.band().halfwidth(tp)
        rec.halfwidth_prelim = res.preliminary.band().halfwidth(tp)
        rec.offsets = np.array([conic.normal_offset(fit.g0, p, n) for p, n in zip(tp, normals)])
    return rec


def _workers(workers):
    if workers is None:
        env = os.environ.get("CONIC_THREADS", "1")
        try:
            workers = int(env)
        except ValueError:
            workers = 1
        if workers == 0:
            workers = os.cpu_count() or 1
    return max(1, int(workers))


def run_ensemble(curve: CurveSpec, noise: NoiseSpec, n_points: int, n_trials: int,
                 options=None, test_params=None, workers=None) -> TrialEnsemble:
    """Run ``n_trials`` independent noisy fits and summarize them.

    Trial ``k`` uses noise stream ``(noise.seed, k)``.  Trials may run in
    worker processes (``workers`` or ``CONIC_THREADS``; 0 means all cores)
    but are reduced in index order, so the ensemble does not depend on the
    worker count.  Fit failures are recorded on the trial, not raised.
    """
    from .recipe import PipelineOptions

    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    options = options or PipelineOptions()
    tp = None if test_params is None else np.asarray(test_params, dtype=float)
    jobs = [(curve, noise, n_points, options, tp, k) for k in range(n_trials)]
    nw = _workers(workers)
    if nw == 1:
        trials = [_run_trial(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=nw) as ex:
            trials = list(ex.map(_run_trial, jobs, chunksize=max(1, n_trials // (4 * nw))))
    return TrialEnsemble(curve, noise, n_points, options, tp, trials,
                         summarize(trials, tp))


def summarize(trials, test_params=None) -> EnsembleSummary:
    ok = [t for t in trials if t.ok]
    gw = Welford(6)
    v0 = np.zeros((6, 6))
    s2 = 0.0
    for t in ok:
        gw.add(t.result.final.g0)
        v0 += t.result.final.v0
        s2 += t.result.final.sigma2_hat
    n_ok = max(len(ok), 1)
    summ = EnsembleSummary(len(trials), len(trials) - len(ok), gw.mean, gw.cov, v0 / n_ok,
                           s2 / n_ok)
    if test_params is not None and len(test_params) and ok:
        band = np.array([t.band for t in ok])
        summ.beyond = {k: np.mean(np.abs(band) > k, axis=0) for k in (1, 2, 3)}
        off = np.array([t.offsets for t in ok])
        summ.offset_mean = np.nanmean(off, axis=0)
        cnt = np.sum(np.isfinite(off), axis=0)
        summ.offset_se = np.nanstd(off, axis=0, ddof=1) / np.sqrt(np.maximum(cnt, 1))
        summ.halfwidth_mean = np.mean([t.halfwidth for t in ok], axis=0)
    centers = [t.result.center for t in ok if t.result.center is not None]
    if centers:
        cw, kw = Welford(2), Welford(2)
        pc = np.zeros((2, 2))
        for ce in centers:
            cw.add(ce.c)
            kw.add(ce.c - ce.bias)
            pc += ce.covariance
        summ.center_mean, summ.center_cov = cw.mean, cw.cov
        summ.corrected_center_mean, summ.corrected_center_cov = kw.mean, kw.cov
        summ.predicted_center_cov = pc / len(centers)
    return summ


def curve_to_dict(c: CurveSpec) -> dict:
    d = asdict(c)
    d["arc"] = list(c.arc)
    d["translation"] = list(c.translation)
    return d


def curve_from_dict(d: dict) -> CurveSpec:
    d = dict(d)
    if "arc" in d:
        d["arc"] = tuple(float(v) for v in d["arc"])
    if "translation" in d:
        d["translation"] = tuple(float(v) for v in d["translation"])
    return CurveSpec(**d)
