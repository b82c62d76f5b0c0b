"""Bias and covariance of quantities derived from the coefficient vector.

For ``r(G)`` and a coefficient covariance ``V`` the leading-order bias of
``r(G_hat)`` is ``0.5 tr(R'' V)`` per component and the covariance is
``r' V r'^T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .conic import conic_center
from .core import FitError


def fd_steps(g) -> np.ndarray:
    """Per-component step ``1e-5 max(|g_m|, |g| / 10)``."""
    g = np.asarray(g, dtype=float)
    return 1e-5 * np.maximum(np.abs(g), np.linalg.norm(g) / 10)


def _fd_jacobian(f, g, steps) -> np.ndarray:
    cols = []
    for m, h in enumerate(steps):
        e = np.zeros_like(g)
        e[m] = h
        cols.append((np.atleast_1d(f(g + e)) - np.atleast_1d(f(g - e))) / (2 * h))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class DerivedParam:
    """A vector-valued function of the conic coefficients.

    ``gradient`` (k x 6) and ``hessian`` (k x 6 x 6) default to central
    differences.  With an analytic gradient the Hessian is the central
    difference of that gradient.
    """

    evaluate: Callable
    gradient: Optional[Callable] = None
    hessian: Optional[Callable] = None

    def value(self, g) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.evaluate(g), dtype=float))

    def jacobian(self, g) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        if self.gradient is not None:
            return np.atleast_2d(np.asarray(self.gradient(g), dtype=float))
        return _fd_jacobian(self.evaluate, g, fd_steps(g))

    def second(self, g) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        if self.hessian is not None:
            h = np.asarray(self.hessian(g), dtype=float)
            return h.reshape(-1, 6, 6)
        steps = fd_steps(g)
        if self.gradient is not None:
            h = _fd_jacobian(self.jacobian, g, steps)
        else:
            # second differences of values; coarser steps keep roundoff down
            h = _fd_jacobian(lambda x: _fd_jacobian(self.evaluate, x, 10 * steps), g, 10 * steps)
        h = h.reshape(-1, 6, 6)
        return 0.5 * (h + np.swapaxes(h, 1, 2))


def propagate(param: DerivedParam, g, v):
    """Value, leading-order bias, and covariance of ``param`` at ``g``.

    Raises
    ------
    FitError
        If the parameter or its derivatives are not finite at ``g``.
    """
    g = np.asarray(g, dtype=float)
    v = np.asarray(v, dtype=float)
    try:
        val = param.value(g)
        jac = param.jacobian(g)
        hess = param.second(g)
    except (FitError, np.linalg.LinAlgError) as exc:
        raise FitError(f"parameter singular here: {exc}") from exc
    if not (np.all(np.isfinite(val)) and np.all(np.isfinite(jac)) and np.all(np.isfinite(hess))):
        raise FitError("parameter singular here")
    bias = 0.5 * np.einsum("jmn,mn->j", hess, v)
    cov = jac @ v @ jac.T
    return val, bias, 0.5 * (cov + cov.T)


def _center_gradient(g) -> np.ndarray:
    """``dc/dg_m = -M^-1 (dM/dg_m c + db/dg_m)`` for ``M c = -b``."""
    g = np.asarray(g, dtype=float)
    c = conic_center(g)
    m = np.array([[2 * g[0], g[1]], [g[1], 2 * g[2]]])
    rhs = np.zeros((2, 6))
    rhs[:, 0] = [2 * c[0], 0.0]
    rhs[:, 1] = [c[1], c[0]]
    rhs[:, 2] = [0.0, 2 * c[1]]
    rhs[:, 3] = [1.0, 0.0]
    rhs[:, 4] = [0.0, 1.0]
    return -np.linalg.solve(m, rhs)


CENTER = DerivedParam(conic_center, gradient=_center_gradient)


@dataclass(frozen=True)
class CenterEstimate:
    """Fitted center, its expected bias ``E[c_hat - c]``, and covariance."""

    c: np.ndarray
    bias: np.ndarray
    covariance: np.ndarray

    @property
    def corrected(self) -> np.ndarray:
        return self.c - self.bias

    @property
    def standard_error(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.covariance), 0.0))


def center_with_errors(fit) -> CenterEstimate:
    """Center of a fitted central conic with propagated bias and covariance."""
    c, bias, cov = propagate(CENTER, fit.g0, fit.v0)
    return CenterEstimate(c, bias, cov)


def gradient_mismatch(param: DerivedParam, g) -> float:
    """Relative gap between the supplied gradient and central differences."""
    g = np.asarray(g, dtype=float)
    ana = param.jacobian(g)
    fd = _fd_jacobian(param.evaluate, g, fd_steps(g))
    return float(np.max(np.abs(ana - fd)) / max(np.max(np.abs(ana)), math.ulp(1.0)))
