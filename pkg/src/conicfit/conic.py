"""Conic-specific geometry.

Coefficient ordering throughout is ``G = (g1..g6)`` for
``g1 x^2 + g2 xy + g3 y^2 + g4 x + g5 y + g6``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import FitError, build_gradient_constraint

# Curvature map: Laplacian of the design vector is 2 L D with L[0, 5] = L[2, 5] = 1.
LAPLACE_L = np.zeros((6, 6))
LAPLACE_L[0, 5] = LAPLACE_L[2, 5] = 1.0

# G^T Q G = 4 g1 g3 - g2^2
QUADRIC_Q = np.zeros((6, 6))
QUADRIC_Q[0, 2] = QUADRIC_Q[2, 0] = 2.0
QUADRIC_Q[1, 1] = -1.0


class ConicClass(str, enum.Enum):
    ELLIPSE = "ellipse"
    HYPERBOLA = "hyperbola"
    PARABOLA = "parabola"
    DEGENERATE = "degenerate"


def as_points(points) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    if p.ndim == 1:
        p = p.reshape(1, 2)
    if p.ndim != 2 or p.shape[1] != 2:
        raise FitError(f"points must have shape (N, 2), got {p.shape}")
    if not np.all(np.isfinite(p)):
        raise FitError("non-finite point coordinates")
    return p


def design_vector(p) -> np.ndarray:
    x, y = float(p[0]), float(p[1])
    return np.array([x * x, x * y, y * y, x, y, 1.0])


def design_matrix(points) -> np.ndarray:
    """Design vectors ``(x^2, xy, y^2, x, y, 1)`` as rows, shape (N, 6)."""
    p = as_points(points)
    x, y = p[:, 0], p[:, 1]
    return np.column_stack([x * x, x * y, y * y, x, y, np.ones_like(x)])


def design_gradient(p):
    """``(dD/dx, dD/dy)`` at a single point."""
    x, y = float(p[0]), float(p[1])
    return (np.array([2 * x, y, 0.0, 1.0, 0.0, 0.0]),
            np.array([0.0, x, 2 * y, 0.0, 1.0, 0.0]))


def design_gradients(points) -> np.ndarray:
    """Design-vector gradients for many points, shape (N, 2, 6)."""
    p = as_points(points)
    x, y = p[:, 0], p[:, 1]
    zero, one = np.zeros_like(x), np.ones_like(x)
    dx = np.column_stack([2 * x, y, zero, one, zero, zero])
    dy = np.column_stack([zero, x, 2 * y, zero, one, zero])
    return np.stack([dx, dy], axis=1)


def algebraic_distance(g, points) -> np.ndarray:
    return design_matrix(points) @ np.asarray(g, dtype=float)


def gradient_sq(g, points) -> np.ndarray:
    """``|grad Z|^2`` of ``Z = G^T D`` at each point."""
    return np.sum((design_gradients(points) @ np.asarray(g, dtype=float)) ** 2, axis=1)


def build_constraint_cn(points, weights=None, *, check_rank: bool = False) -> np.ndarray:
    """Self-normalizing constraint ``C_N = sum_i w_i (D_x D_x^T + D_y D_y^T)``.

    Gradients are taken at the given (measured) points.  Row and column 6
    are identically zero.  With ``check_rank`` a rank-deficient 5x5 block
    raises instead of being returned.
    """
    c = build_gradient_constraint(design_gradients(points), weights)
    if check_rank:
        ev = np.linalg.eigvalsh(c[:5, :5])
        if ev[0] <= 1e-12 * max(ev[-1], 1e-300):
            raise FitError("degenerate point configuration")
    return c


def curvature_transform(sigma2: float) -> np.ndarray:
    """Linear map ``I + sigma2 L^T`` applied by the curvature correction."""
    return np.eye(6) + sigma2 * LAPLACE_L.T


def curvature_correct(g, sigma2: float) -> np.ndarray:
    """Return ``g`` with ``g6 -> g6 + sigma2 (g1 + g3)``."""
    if sigma2 < 0:
        raise FitError("negative variance")
    out = np.array(g, dtype=float)
    out[..., 5] = out[..., 5] + sigma2 * (out[..., 0] + out[..., 2])
    return out


def conic_matrix(g) -> np.ndarray:
    g1, g2, g3, g4, g5, g6 = np.asarray(g, dtype=float)
    return np.array([[g1, g2 / 2, g4 / 2], [g2 / 2, g3, g5 / 2], [g4 / 2, g5 / 2, g6]])


def conic_from_matrix(m) -> np.ndarray:
    m = 0.5 * (np.asarray(m) + np.asarray(m).T)
    return np.array([m[0, 0], 2 * m[0, 1], m[1, 1], 2 * m[0, 2], 2 * m[1, 2], m[2, 2]])


def transform_conic(g, rotation: float = 0.0, translation=(0.0, 0.0)) -> np.ndarray:
    """Coefficients of the conic after rotating by ``rotation`` then translating."""
    c, s = np.cos(rotation), np.sin(rotation)
    h = np.array([[c, -s, translation[0]], [s, c, translation[1]], [0.0, 0.0, 1.0]])
    hinv = np.linalg.inv(h)
    return conic_from_matrix(hinv.T @ conic_matrix(g) @ hinv)


def discriminant(g) -> float:
    g = np.asarray(g, dtype=float)
    return 4.0 * g[0] * g[2] - g[1] * g[1]


def classify(g, tol: float = 1e-10) -> ConicClass:
    """Conic type from the sign of ``4 g1 g3 - g2^2``.

    ``tol`` is absolute and assumes a C_N-normalized vector.  A vanishing
    3x3 conic determinant (relative to the matrix scale cubed) marks a
    degenerate conic.
    """
    g = np.asarray(g, dtype=float)
    if not np.any(g):
        return ConicClass.DEGENERATE
    m = conic_matrix(g)
    scale = np.linalg.norm(m)
    if abs(np.linalg.det(m)) <= tol * scale ** 3:
        return ConicClass.DEGENERATE
    disc = discriminant(g)
    if disc > tol:
        return ConicClass.ELLIPSE
    if disc < -tol:
        return ConicClass.HYPERBOLA
    return ConicClass.PARABOLA


def conic_center(g) -> np.ndarray:
    """Symmetry center ``-[[2g1, g2], [g2, 2g3]]^-1 (g4, g5)``."""
    g = np.asarray(g, dtype=float)
    m = np.array([[2 * g[0], g[1]], [g[1], 2 * g[2]]])
    if abs(discriminant(g)) <= 1e-14 * (g[0] ** 2 + g[1] ** 2 + g[2] ** 2):
        raise FitError("parameter singular here: conic has no center")
    return -np.linalg.solve(m, g[3:5])


@dataclass(frozen=True)
class EllipticalFrame:
    """Confocal frame of a central conic.

    Points are ``c + f cos(theta) cosh(eta) e_par + f sin(theta) sinh(eta) e_perp``
    with ``f = |f_par|``.  An ellipse is ``eta = eta0``; a hyperbola is
    ``theta = +-theta0`` (mod pi).  ``circular`` frames have ``f = 0`` and use
    a plain radius.
    """

    center: np.ndarray
    f_par: np.ndarray
    kind: ConicClass
    eta0: float = float("nan")
    theta0: float = float("nan")
    radius: float = float("nan")
    circular: bool = False

    @property
    def f_perp(self) -> np.ndarray:
        return np.array([-self.f_par[1], self.f_par[0]])

    @property
    def focal_length(self) -> float:
        return float(np.hypot(*self.f_par))

    def to_coords(self, points):
        """``(eta, theta)`` of each point via complex arccosh."""
        p = as_points(points) - self.center
        f = self.focal_length
        e_par = self.f_par / f
        e_perp = np.array([-e_par[1], e_par[0]])
        z = (p @ e_par + 1j * (p @ e_perp)) / f
        w = np.arccosh(z)
        return w.real, w.imag

    def from_coords(self, eta, theta) -> np.ndarray:
        eta = np.asarray(eta, dtype=float)
        theta = np.asarray(theta, dtype=float)
        a = (np.cos(theta) * np.cosh(eta))[..., None]
        b = (np.sin(theta) * np.sinh(eta))[..., None]
        return a * self.f_par + b * self.f_perp + self.center

    def sample(self, n: int = 100) -> np.ndarray:
        """Points spread along the curve (both branches for a hyperbola)."""
        if self.circular:
            t = np.linspace(0, 2 * np.pi, n, endpoint=False)
            return self.center + self.radius * np.column_stack([np.cos(t), np.sin(t)])
        if self.kind is ConicClass.ELLIPSE:
            t = np.linspace(0, 2 * np.pi, n, endpoint=False)
            return self.from_coords(np.full(n, self.eta0), t)
        eta = np.linspace(-3.0, 3.0, n)
        half = n // 2
        t = np.where(np.arange(n) < half, self.theta0, np.pi - self.theta0)
        return self.from_coords(eta, t)


def elliptical_frame(g) -> EllipticalFrame:
    """Build the confocal frame of an ellipse or hyperbola."""
    g = np.asarray(g, dtype=float)
    kind = classify(g)
    if kind not in (ConicClass.ELLIPSE, ConicClass.HYPERBOLA):
        raise FitError(f"no elliptical frame for a {kind.value} conic")
    center = conic_center(g)
    a2 = np.array([[g[0], g[1] / 2], [g[1] / 2, g[2]]])
    k = g[5] + 0.5 * g[3:5] @ center
    alphas, vecs = np.linalg.eigh(a2)
    if kind is ConicClass.ELLIPSE:
        if k * alphas[0] >= 0:
            raise FitError("no real points on this ellipse")
        semi2 = -k / alphas  # larger alpha -> shorter axis
        i_major = int(np.argmax(semi2))
        a_major, b_minor = np.sqrt(semi2[i_major]), np.sqrt(semi2[1 - i_major])
        if a_major - b_minor < 1e-9 * a_major:
            return EllipticalFrame(center, np.zeros(2), kind, radius=float(np.sqrt(semi2.mean())),
                                   circular=True)
        f = np.sqrt(a_major ** 2 - b_minor ** 2)
        e = vecs[:, i_major]
        return EllipticalFrame(center, f * e, kind, eta0=float(np.arctanh(b_minor / a_major)))
    if k == 0.0:
        raise FitError("no elliptical frame for a degenerate conic")
    # transverse axis: eigenvalue with the sign of -k
    i_t = 0 if alphas[0] * (-k) > 0 else 1
    a_t = np.sqrt(-k / alphas[i_t])
    b_c = np.sqrt(k / alphas[1 - i_t])
    f = np.hypot(a_t, b_c)
    return EllipticalFrame(center, f * vecs[:, i_t], kind, theta0=float(np.arctan2(b_c, a_t)))


def nearest_point(frame: EllipticalFrame, points) -> np.ndarray:
    """Project points onto the frame's curve along confocal coordinate lines.

    Ellipse: keep theta, set eta to eta0.  Hyperbola: keep eta, move theta to
    the nearest of the four branch angles.  Circle: radial projection.
    """
    pts = as_points(points)
    single = np.ndim(points) == 1
    if frame.circular:
        d = pts - frame.center
        r = np.hypot(d[:, 0], d[:, 1])
        if np.any(r == 0.0):
            raise FitError("ambiguous projection: point at the center")
        out = frame.center + frame.radius * d / r[:, None]
        return out[0] if single else out
    if np.any(np.all(pts == frame.center, axis=1)):
        raise FitError("ambiguous projection: point at the center")
    eta, theta = frame.to_coords(pts)
    if frame.kind is ConicClass.ELLIPSE:
        out = frame.from_coords(np.full_like(eta, frame.eta0), theta)
    else:
        cs = np.where(np.cos(theta) >= 0, 1.0, -1.0) * np.cos(frame.theta0)
        sn = np.where(np.sin(theta) >= 0, 1.0, -1.0) * np.sin(frame.theta0)
        f = frame.focal_length
        e_par = frame.f_par / f
        e_perp = np.array([-e_par[1], e_par[0]])
        u = f * cs * np.cosh(eta)
        v = f * sn * np.sinh(eta)
        out = frame.center + u[:, None] * e_par + v[:, None] * e_perp
    return out[0] if single else out


def _weights_from_gradients(gz2: np.ndarray) -> np.ndarray:
    if not np.any(gz2 > 0):
        raise FitError("all gradients vanish: degenerate conic")
    floor = 1e-8 * np.median(gz2[gz2 > 0])
    n = gz2.shape[0]
    return 1.0 / (n * np.maximum(gz2, floor))


def optimal_weights(points, g, frame: EllipticalFrame | None = None) -> np.ndarray:
    """``w_i = 1 / (N |grad Z|^2)`` with the gradient taken on the curve.

    Each point is first projected onto the curve with :func:`nearest_point`.
    Squared gradient magnitudes are floored at ``1e-8`` times their median.
    """
    g = np.asarray(g, dtype=float)
    if frame is None:
        frame = elliptical_frame(g)
    on_curve = nearest_point(frame, as_points(points))
    return _weights_from_gradients(gradient_sq(g, on_curve))


def sampson_weights(points, g) -> np.ndarray:
    """Same formula as :func:`optimal_weights` but at the measured points."""
    return _weights_from_gradients(gradient_sq(np.asarray(g, dtype=float), as_points(points)))


def normal_offset(g, point, normal) -> float:
    """Signed distance ``t`` along ``normal`` from ``point`` to the curve ``g``.

    Solves ``Z(point + t normal) = 0`` and returns the root of smallest
    magnitude, or NaN when the line misses the curve.
    """
    g = np.asarray(g, dtype=float)
    p = np.asarray(point, dtype=float)
    n = np.asarray(normal, dtype=float)
    a2 = np.array([[g[0], g[1] / 2], [g[1] / 2, g[2]]])
    qa = n @ a2 @ n
    dx, dy = design_gradient(p)
    qb = n[0] * (dx @ g) + n[1] * (dy @ g)
    qc = design_vector(p) @ g
    if qb == 0.0 and qa == 0.0:
        return float("nan")
    disc = qb * qb - 4 * qa * qc
    if disc < 0:
        return float("nan")
    root = np.sqrt(disc)
    denom = qb + (root if qb >= 0 else -root)
    if denom == 0.0:
        return float("nan")
    return float(-2 * qc / denom)
