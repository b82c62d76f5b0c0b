"""Generic conic fit with posterior covariance, and the single reweighting pass."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .core import (
    FitError,
    build_scatter,
    coefficient_covariance,
    estimate_sigma2,
    generalized_inverse_y0,
    solve_partitioned,
)

WEIGHTINGS = ("unweighted", "optimal", "sampson")


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GenericFit:
    """Result of one generic (type-free) fit.

    ``g0`` is the curvature-corrected coefficient vector, ``g0_raw`` the
    eigenvector before correction; both are C_N-normalized with the
    canonical sign.  ``v0`` is the covariance of ``g0``: the raw covariance
    pushed through the (linear) curvature correction.  ``y0``, ``scatter``
    and ``constraint`` are for the raw problem and are what the type-specific
    estimators work with.
    """

    g0: np.ndarray
    g0_raw: np.ndarray
    lambdas: np.ndarray
    eigvecs: np.ndarray
    eigvecs_raw: np.ndarray
    sigma2_hat: float
    y0: np.ndarray
    v0: np.ndarray
    weights: np.ndarray
    weighting: str
    scatter: np.ndarray
    constraint: np.ndarray
    n: int
    curvature_corrected: bool = True
    warnings: tuple = field(default_factory=tuple)
    known_sigma2: float | None = None

    @property
    def sigma2(self) -> float:
        """Noise variance behind ``v0`` and the correction: known if given, else estimated."""
        return self.sigma2_hat if self.known_sigma2 is None else self.known_sigma2

    @property
    def conic_class(self) -> conic.ConicClass:
        return conic.classify(self.g0)

    @property
    def transform(self) -> np.ndarray:
        """The curvature-correction map taking raw vectors to corrected ones."""
        return conic.curvature_transform(self.sigma2 if self.curvature_corrected else 0.0)

    def band(self) -> "BandField":
        return BandField(self.g0, self.v0)


def generic_fit(points, weighting: str = "unweighted", weights=None, *,
                curvature_correction: bool = True,
                noise_sigma: float | None = None) -> GenericFit:
    """Self-normalized algebraic fit with full eigensystem and covariance.

    Parameters
    ----------
    points : array_like, shape (N, 2)
        Measured points, N >= 6.
    weighting : {"unweighted", "optimal", "sampson"}
        How ``weights`` were obtained.  Only "optimal" uses the short
        covariance ``sigma2 Y0 / N``; the others use the general expression.
    weights : array_like, optional
        Per-point weights; required unless unweighted.
    curvature_correction : bool
        Apply ``g6 += sigma2 (g1 + g3)`` to every eigenvector.
    noise_sigma : float, optional
        Known measurement standard deviation.  When given it replaces the
        estimate in the covariance and the correction; the estimate is
        still reported as ``sigma2_hat``.
    """
    if weighting not in WEIGHTINGS:
        raise FitError(f"unknown weighting {weighting!r}")
    pts = conic.as_points(points)
    n = pts.shape[0]
    if n < 6:
        raise FitError("underdetermined: need at least 6 points")
    if weighting == "unweighted":
        w = np.ones(n)
    else:
        if weights is None:
            raise FitError(f"{weighting} weighting needs weights")
        w = np.asarray(weights, dtype=float)
    designs = conic.design_matrix(pts)
    s = build_scatter(designs, w)
    c = conic.build_constraint_cn(pts, w, check_rank=True)
    sol = solve_partitioned(s, c, 5)
    sigma2_hat = estimate_sigma2(sol, n)
    if noise_sigma is not None and not noise_sigma >= 0:
        raise FitError("noise_sigma must be >= 0")
    known = None if noise_sigma is None else float(noise_sigma) ** 2
    sigma2 = sigma2_hat if known is None else known
    y0 = generalized_inverse_y0(sol)
    g_raw = sol.vectors[0]
    if weighting == "optimal":
        cov = coefficient_covariance(y0, sigma2, n)
    else:
        cov = coefficient_covariance(y0, sigma2, n, designs=designs,
                                     gradients=conic.design_gradients(pts),
                                     weights=w, g0=g_raw)
    t = conic.curvature_transform(sigma2 if curvature_correction else 0.0)
    eig = sol.vectors @ t.T
    v0 = t @ cov @ t.T
    return GenericFit(
        g0=_frozen(eig[0]), g0_raw=_frozen(g_raw), lambdas=_frozen(sol.lambdas),
        eigvecs=_frozen(eig), eigvecs_raw=_frozen(sol.vectors), sigma2_hat=sigma2_hat,
        y0=_frozen(y0), v0=_frozen(0.5 * (v0 + v0.T)), weights=_frozen(w),
        weighting=weighting, scatter=_frozen(s), constraint=_frozen(c), n=n,
        curvature_corrected=curvature_correction, known_sigma2=known,
    )


def fit_with_reweight(points, *, curvature_correction: bool = True, sampson: bool = False,
                      noise_sigma: float | None = None,
                      passes: int = 2) -> tuple[GenericFit, GenericFit]:
    """Preliminary unweighted fit, reweighting, weighted fit.

    Weights come from gradients at the projections of the points onto the
    current curve (or at the measured points when ``sampson``).  Each of
    ``passes`` rounds recomputes the weights from the previous fit.  If a
    conic has no confocal frame, reweighting stops there and the last fit is
    returned with a warning attached.
    """
    if passes < 1:
        raise FitError("passes must be >= 1")
    pts = conic.as_points(points)
    kw = dict(curvature_correction=curvature_correction, noise_sigma=noise_sigma)
    prelim = generic_fit(pts, "unweighted", **kw)
    current = prelim
    for _ in range(passes):
        if sampson:
            current = generic_fit(pts, "sampson", conic.sampson_weights(pts, current.g0), **kw)
            continue
        try:
            frame = conic.elliptical_frame(current.g0)
        except FitError as exc:
            return prelim, dataclasses.replace(current, warnings=current.warnings + (
                f"reweighting skipped: {exc}",))
        w = conic.optimal_weights(pts, current.g0, frame)
        current = generic_fit(pts, "optimal", w, **kw)
    return prelim, current


@dataclass(frozen=True)
class BandField:
    """Standardized algebraic distance field ``G^T D / sqrt(D^T V D)``."""

    g: np.ndarray
    v: np.ndarray

    def __call__(self, points) -> np.ndarray:
        d = conic.design_matrix(points)
        var = np.einsum("ij,jk,ik->i", d, np.asarray(self.v), d)
        if np.any(var <= 0):
            raise FitError("degenerate variance direction")
        return (d @ np.asarray(self.g)) / np.sqrt(var)

    def halfwidth(self, points) -> np.ndarray:
        """One-sigma band half-width in length units (first order)."""
        d = conic.design_matrix(points)
        var = np.einsum("ij,jk,ik->i", d, np.asarray(self.v), d)
        return np.sqrt(np.maximum(var, 0.0) / conic.gradient_sq(self.g, points))


def band_value(fld: BandField, p) -> float:
    return float(fld(np.asarray(p, dtype=float).reshape(1, 2))[0])
