"""Minimal deterministic SVG output for curves, bands, and point clouds."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from skimage.measure import find_contours

from . import conic

BAND_LEVELS = (1.0, 2.0, 3.0)
BAND_SHADES = ("#4a6fa5", "#8fa9cf", "#c9d6ea")


def _fmt(v: float) -> str:
    s = f"{v:.2f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


@dataclass
class Canvas:
    """Data-space drawing area mapped to pixels with equal aspect."""

    bounds: tuple
    width: int = 640
    items: list = field(default_factory=list)

    def __post_init__(self):
        x0, x1, y0, y1 = (float(v) for v in self.bounds)
        if not (x1 > x0 and y1 > y0):
            raise ValueError("empty plot bounds")
        self.scale = self.width / (x1 - x0)
        self.height = int(round((y1 - y0) * self.scale))

    def _px(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        x0, _, _, y1 = self.bounds
        return np.column_stack([(pts[:, 0] - x0) * self.scale, (y1 - pts[:, 1]) * self.scale])

    def polyline(self, pts, color="#000", width=1.0, dash=None, opacity=1.0):
        px = self._px(pts)
        if len(px) < 2:
            return
        coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in px)
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        if opacity != 1.0:
            extra += f' stroke-opacity="{_fmt(opacity)}"'
        self.items.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                          f'stroke-width="{_fmt(width)}"{extra}/>')

    def points(self, pts, color="#000", radius=1.5, hollow=False):
        fill = "none" if hollow else color
        for x, y in self._px(pts):
            self.items.append(f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="{_fmt(radius)}" '
                              f'fill="{fill}" stroke="{color}" stroke-width="0.6"/>')

    def marker(self, p, color="#000", size=5.0):
        x, y = self._px(p)[0]
        s = size
        self.items.append(f'<path d="M{_fmt(x - s)},{_fmt(y - s)}L{_fmt(x + s)},{_fmt(y + s)}'
                          f'M{_fmt(x - s)},{_fmt(y + s)}L{_fmt(x + s)},{_fmt(y - s)}" '
                          f'stroke="{color}" stroke-width="1.5"/>')

    def text(self, p, label: str, size=12):
        x, y = self._px(p)[0]
        safe = label.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
        self.items.append(f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-size="{size}" '
                          f'font-family="sans-serif">{safe}</text>')

    def render(self) -> str:
        head = ('<?xml version="1.0" encoding="UTF-8"?>\n'
                f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{self.width}" '
                f'height="{self.height}" viewBox="0 0 {self.width} {self.height}">\n'
                f'<rect width="{self.width}" height="{self.height}" fill="#fff"/>\n')
        return head + "\n".join(self.items) + "\n</svg>\n"


def grid(bounds, resolution: int = 400):
    """Sample coordinates and the (ny, nx, 2) point array over ``bounds``."""
    x0, x1, y0, y1 = bounds
    nx = int(resolution)
    ny = max(2, int(round(resolution * (y1 - y0) / (x1 - x0))))
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    xx, yy = np.meshgrid(xs, ys)
    return xs, ys, np.stack([xx, yy], axis=-1)


def contour_lines(values: np.ndarray, xs, ys, level: float) -> list:
    """Iso-lines of a gridded field, as lists of data-space points."""
    if not np.any(np.isfinite(values)):
        return []
    vals = np.where(np.isfinite(values), values, np.nanmax(np.abs(values)) * 10)
    out = []
    for c in find_contours(vals, level):
        r, k = c[:, 0], c[:, 1]
        out.append(np.column_stack([np.interp(k, np.arange(len(xs)), xs),
                                    np.interp(r, np.arange(len(ys)), ys)]))
    return out


def conic_lines(g, xs, ys, pts) -> list:
    """Zero set of the conic ``g`` traced on the grid."""
    z = conic.algebraic_distance(g, pts.reshape(-1, 2)).reshape(pts.shape[:2])
    return contour_lines(z, xs, ys, 0.0)


def draw_conic(canvas: Canvas, g, xs, ys, pts, **style):
    for line in conic_lines(g, xs, ys, pts):
        canvas.polyline(line, **style)


def draw_band(canvas: Canvas, band, xs, ys, pts):
    """Contours of the standardized distance at +-1, +-2, +-3."""
    flat = pts.reshape(-1, 2)
    d = conic.design_matrix(flat)
    var = np.einsum("ij,jk,ik->i", d, np.asarray(band.v), d)
    z = np.full(len(flat), np.nan)
    ok = var > 0
    z[ok] = (d[ok] @ np.asarray(band.g)) / np.sqrt(var[ok])
    z = z.reshape(pts.shape[:2])
    for level, shade in zip(reversed(BAND_LEVELS), reversed(BAND_SHADES)):
        for sign in (1.0, -1.0):
            for line in contour_lines(z, xs, ys, sign * level):
                canvas.polyline(line, color=shade, width=1.2)


def covariance_ellipse(center, cov, k: float, n: int = 90) -> np.ndarray:
    """Points on the ``k``-sigma ellipse of a 2x2 covariance."""
    vals, vecs = np.linalg.eigh(np.asarray(cov, dtype=float))
    t = np.linspace(0, 2 * np.pi, n)
    circ = np.column_stack([np.cos(t), np.sin(t)]) * (k * np.sqrt(np.maximum(vals, 0.0)))
    return circ @ vecs.T + np.asarray(center, dtype=float)
