"""Point-file parsing and the serializable fit report."""

from __future__ import annotations

import csv
import io
import math

import numpy as np

from .conic import classify
from .recipe import PipelineOptions, PipelineResult

SCHEMA_VERSION = 1


class InputError(ValueError):
    """Malformed point input."""


def parse_points(text: str, source: str = "<input>") -> np.ndarray:
    """Read ``x,y`` rows.

    Blank lines are skipped and the first non-blank row may be a header.
    Every other row must hold exactly two finite decimal numbers.
    """
    rows = []
    seen_first = False
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or all(not c.strip() for c in row):
            continue
        first = not seen_first
        seen_first = True
        if len(row) != 2:
            raise InputError(f"{source}: line {lineno}: expected 2 fields, got {len(row)}")
        try:
            x, y = float(row[0]), float(row[1])
        except ValueError:
            if first and not any(_looks_numeric(c) for c in row):
                continue
            raise InputError(f"{source}: line {lineno}: not a number in {','.join(row)!r}")
        if not (math.isfinite(x) and math.isfinite(y)):
            raise InputError(f"{source}: line {lineno}: non-finite value")
        rows.append((x, y))
    if len(rows) < 6:
        raise InputError(f"{source}: need at least 6 points, got {len(rows)}")
    return np.array(rows, dtype=float)


def _looks_numeric(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def format_points(points) -> str:
    """Inverse of :func:`parse_points`; values keep full precision."""
    return "".join(f"{x!r},{y!r}\n" for x, y in np.asarray(points, dtype=float).tolist())


def _vec(a):
    return [float(v) for v in np.asarray(a, dtype=float).ravel()]


def _mat(a):
    return [[float(v) for v in row] for row in np.asarray(a, dtype=float)]


def build_report(result: PipelineResult, options: PipelineOptions, n_points: int,
                 source: str = "<input>") -> dict:
    """Nested plain-data summary of one pipeline run (all numbers finite)."""
    fin = result.final
    warnings = list(fin.warnings)
    typed = None
    if result.parabola is not None:
        pf = result.parabola
        typed = {"target": options.target, "g_bar": _vec(pf.g_bar),
                 "parabolic_iterations": pf.iterations, "parabolic_residual": pf.residual,
                 "x0": None, "mean": None, "mean_class": None, "covariance": None}
        if result.typed is not None:
            tp = result.typed
            if math.isfinite(tp.x0):
                typed["x0"] = tp.x0
            else:
                warnings.append("x0 unbounded: noise-free fit already of the target type")
            typed["mean"] = _vec(tp.mean)
            typed["mean_class"] = classify(tp.mean).value
            if tp.limiting:
                warnings.append("fit lies on the type boundary; limiting mean used")
        else:
            typed["covariance"] = _mat(pf.v_bar)
    center = None
    if result.center is not None:
        ce = result.center
        center = {"c": _vec(ce.c), "bias": _vec(ce.bias), "corrected": _vec(ce.corrected),
                  "covariance": _mat(ce.covariance)}
    return {
        "schema_version": SCHEMA_VERSION,
        "source": source,
        "n_points": int(n_points),
        "options": options.to_dict(),
        "weighting": fin.weighting,
        "classification": fin.conic_class.value,
        "coefficients": {"corrected": _vec(fin.g0), "raw": _vec(fin.g0_raw)},
        "eigenvalues": _vec(fin.lambdas),
        "sigma2_hat": float(fin.sigma2_hat),
        "covariance": _mat(fin.v0),
        "typed": typed,
        "center": center,
        "diagnostics": {
            "parabolic_iterations": None if result.parabola is None else result.parabola.iterations,
            "warnings": warnings,
        },
    }


def flatten(obj, prefix: str = "") -> list:
    """``(dotted key, value)`` pairs of a nested report."""
    out = []
    if isinstance(obj, dict):
        for k, v in obj.items():
            out += flatten(v, f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            out += flatten(v, f"{prefix}.{i}")
    else:
        out.append((prefix, obj))
    return out


def report_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["key", "value"])
    for k, v in flatten(report):
        if v is None:
            v = ""
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        w.writerow([k, v])
    return buf.getvalue()


__all__ = ["InputError", "SCHEMA_VERSION", "build_report", "flatten",
           "format_points", "parse_points", "report_csv"]
