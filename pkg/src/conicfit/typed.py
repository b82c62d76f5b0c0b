"""Type-specific conic estimates from the generic posterior.

Parabolas are the constrained minimum of ``G^T S G`` on ``G^T Q G = 0``;
ellipse- or hyperbola-only fits are means of the generic Gaussian truncated
at that boundary.  All work is done on the raw (uncorrected) vectors: the
curvature correction only touches ``g6``, which ``Q`` ignores, so it is
applied at the end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfcx

from .conic import QUADRIC_Q, ConicClass
from .core import FitError, generalized_inverse, solve_partitioned
from .pipeline import GenericFit

Q = QUADRIC_Q


def _qform(g) -> float:
    return float(g @ Q @ g)


def _qscale(g) -> float:
    # bounds |q| by the size of the quadratic part; unlike g^T |Q| g it does
    # not vanish for an exact parabola
    return float(2 * (g[0] ** 2 + g[2] ** 2) + g[1] ** 2)


def first_order_parabola(fit: GenericFit) -> np.ndarray:
    """One projection step ``G0 - q(G0) / (2 G0^T Q Y0 Q G0) * Y0 Q G0`` (raw)."""
    g0 = fit.g0_raw
    yq = fit.y0 @ Q @ g0
    den = 2.0 * float(g0 @ Q @ yq)
    if den == 0.0:
        raise FitError("projection direction undefined")
    return g0 - _qform(g0) / den * yq


@dataclass(frozen=True)
class ParabolicFit:
    """Nearest parabola (in the scatter metric) and its rank-4 covariance."""

    g_bar: np.ndarray
    g_bar_raw: np.ndarray
    iterations: int
    residual: float
    multiplier: float
    y_bar: np.ndarray
    v_bar: np.ndarray
    rank: int = 4


def _align(g, ref, c):
    return -g if float(g @ c @ ref) < 0 else g


def _shifted(fit: GenericFit, mu: float):
    sol = solve_partitioned(fit.scatter - mu * Q, fit.constraint, 5)
    g = _align(sol.vectors[0], fit.g0_raw, fit.constraint)
    try:
        y = generalized_inverse(sol, 0)
        slope = 2.0 * float(g @ Q @ y @ Q @ g)
    except FitError:
        y, slope = None, float("nan")
    return g, y, slope


def project_to_parabola(fit: GenericFit, tol: float = 1e-13,
                        max_iter: int = 50) -> ParabolicFit:
    """Minimize ``G^T S G`` subject to ``G^T C G = 1`` and ``G^T Q G = 0``.

    The stationary point solves ``(S - mu Q) G = nu C G`` with ``mu`` chosen
    so that ``q(mu) = G(mu)^T Q G(mu)`` vanishes.  ``q`` is increasing in
    ``mu`` with slope ``2 G^T Q Y Q G``, so Newton's method applies; its
    first step from ``mu = 0`` is the usual first-order projection.  Steps
    that leave the sign bracket fall back to bisection.
    """
    g0 = fit.g0_raw
    scale = _qscale(g0)
    q = _qform(g0)
    iterations = 0
    mu = 0.0
    g, y = g0, fit.y0
    if abs(q) > tol * scale:
        slope = 2.0 * float(g0 @ Q @ y @ Q @ g0)
        if not slope > 0:
            raise FitError("projection direction undefined")
        lo, hi = (None, 0.0) if q > 0 else (0.0, None)
        converged = False
        q_prev = q
        for iterations in range(1, max_iter + 1):
            step_ok = math.isfinite(slope) and slope > 0
            mu_new = mu - q / slope if step_ok else float("nan")
            if lo is not None and hi is not None:
                if not (lo < mu_new < hi):
                    mu_new = 0.5 * (lo + hi)
            elif not step_ok:
                mu_new = 2 * mu if mu != 0 else -q
            mu = mu_new
            g, y, slope = _shifted(fit, mu)
            q = _qform(g)
            if q > 0:
                hi = mu
            else:
                lo = mu
            if abs(q) <= tol * _qscale(g):
                converged = True
                break
            # roundoff floor of the eigen-solve: stop and let the polish finish
            if abs(q) <= 1e-8 * _qscale(g) and abs(q) >= 0.5 * abs(q_prev):
                converged = True
                break
            q_prev = q
        if not converged:
            raise FitError(f"parabolic projection did not converge after {max_iter} "
                           f"iterations (residual {q:.3e})")
        if y is not None:
            # polish: one Newton move along Y Q G removes the last roundoff
            yq = y @ Q @ g
            den = 2.0 * float(g @ Q @ yq)
            if den > 0:
                g = g - q / den * yq
                g = g / math.sqrt(float(g @ fit.constraint @ g))
                if abs(_qform(g)) > 1e-10 * _qscale(g):
                    raise FitError("parabolic projection stalled: residual "
                                   f"{_qform(g):.3e}")
    g_bar_raw = np.array(g, dtype=float)
    y_bar = parabolic_inverse(fit, g_bar_raw)
    t = fit.transform
    v_bar = fit.sigma2 * y_bar / fit.n
    v_bar = t @ v_bar @ t.T
    return ParabolicFit(
        g_bar=t @ g_bar_raw, g_bar_raw=g_bar_raw, iterations=iterations,
        residual=abs(_qform(g_bar_raw)), multiplier=mu, y_bar=y_bar,
        v_bar=0.5 * (v_bar + v_bar.T),
    )


def constraint_projector(fit: GenericFit, g_bar) -> np.ndarray:
    """``1 - P0 - Pbar``: keeps deviations that respect both constraints at ``g_bar``."""
    c = fit.constraint
    c_plus = np.zeros((6, 6))
    c_plus[:5, :5] = np.linalg.inv(c[:5, :5])
    qg = Q @ g_bar
    p0 = np.outer(g_bar, g_bar) @ c
    pbar = np.outer(c_plus @ qg, qg) / float(qg @ c_plus @ qg)
    return np.eye(6) - p0 - pbar


def parabolic_inverse(fit: GenericFit, g_bar) -> np.ndarray:
    """Rank-4 generalized inverse of ``Pi^T S Pi`` on the range of ``Pi``."""
    pi = constraint_projector(fit, g_bar)
    s_bar = pi.T @ fit.scatter @ pi
    u, _, _ = np.linalg.svd(pi)
    b = u[:, :4]
    y = b @ np.linalg.solve(b.T @ s_bar @ b, b.T)
    return 0.5 * (y + y.T)


def truncated_mean_factor(x0: float) -> float:
    """Mean of a unit Gaussian truncated to ``[x0, inf)``.

    Written with the scaled complementary error function so it neither
    overflows nor underflows for large ``|x0|``.
    """
    return math.sqrt(2.0 / math.pi) / float(erfcx(x0 / math.sqrt(2.0)))


@dataclass(frozen=True)
class TruncatedPosterior:
    """Ellipse- or hyperbola-constrained estimate.

    The distribution itself is the generic Gaussian ``(g0, v0)`` cut at the
    parabola ``g_bar``; ``mean`` is its (normalized, curvature-corrected)
    mean and ``mean_raw`` the unnormalized raw point on the pencil.
    """

    g0: np.ndarray
    v0: np.ndarray
    g_bar: np.ndarray
    x0: float
    mean: np.ndarray
    mean_raw: np.ndarray
    target: ConicClass
    limiting: bool = False


def _as_target(target) -> ConicClass:
    t = ConicClass(target)
    if t not in (ConicClass.ELLIPSE, ConicClass.HYPERBOLA):
        raise FitError(f"target must be ellipse or hyperbola, not {t.value}")
    return t


def type_constrained_mean(fit: GenericFit, pf: ParabolicFit, target) -> TruncatedPosterior:
    """Posterior mean of the generic fit restricted to one side of the parabolas."""
    target = _as_target(target)
    g0, gb = fit.g0_raw, pf.g_bar_raw
    want = 1.0 if target is ConicClass.ELLIPSE else -1.0
    correct = want * _qform(g0) > 0
    s2, n = fit.sigma2, fit.n
    limiting = False
    if s2 == 0.0:
        if not correct:
            raise FitError("noise-free data of the wrong type: no constrained mean")
        x0, mean = -math.inf, g0.copy()
    else:
        lam0 = max(float(fit.lambdas[0]), 0.0)
        rad = max(n * (float(gb @ fit.scatter @ gb) - lam0) / s2, 0.0)
        x0 = -math.sqrt(rad) if correct else math.sqrt(rad)
        if rad == 0.0:
            limiting = True
            yq = fit.y0 @ Q @ g0
            std = math.sqrt(s2 / n / float(g0 @ Q @ yq))
            mean = g0 + want * math.sqrt(2.0 / math.pi) * std * yq
        else:
            mean = g0 + truncated_mean_factor(x0) * (gb - g0) / x0
    c = fit.constraint
    normed = _align(mean / math.sqrt(float(mean @ c @ mean)), g0, c)
    return TruncatedPosterior(
        g0=fit.g0, v0=fit.v0, g_bar=pf.g_bar, x0=x0, mean=fit.transform @ normed,
        mean_raw=mean, target=target, limiting=limiting,
    )
