"""Configured Monte Carlo experiments with CSV summaries and SVG plots."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from typing import Optional

import numpy as np

from . import svg
from .propagate import center_with_errors
from .recipe import PipelineOptions, fitted_conic, run_pipeline
from .synth import CurveSpec, NoiseSpec, curve_from_dict, curve_to_dict, run_ensemble

PLOT_MODES = ("ensemble", "posterior", "centers", "none")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class PanelSpec:
    label: str
    options: PipelineOptions = field(default_factory=PipelineOptions)


@dataclass(frozen=True)
class PlotSpec:
    mode: str = "ensemble"
    bounds: tuple = (-0.1, 1.1, -0.05, 0.15)
    grid: int = 400
    n_curves: int = 50
    width: int = 640
    center_bounds: Optional[tuple] = None

    def __post_init__(self):
        if self.mode not in PLOT_MODES:
            raise ConfigError(f"unknown plot mode {self.mode!r}")
        if self.grid < 4:
            raise ConfigError("plot grid must be >= 4")


@dataclass(frozen=True)
class OutputSpec:
    directory: str = "."
    summary_csv: bool = True
    trials_csv: bool = False
    svg: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to rerun one figure-style experiment."""

    name: str
    curve: CurveSpec = field(default_factory=CurveSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    n_points: int = 20
    n_trials: int = 50
    panels: tuple = (PanelSpec("weighted"),)
    test_points: int = 50
    test_arc: Optional[tuple] = None
    plot: PlotSpec = field(default_factory=PlotSpec)
    outputs: OutputSpec = field(default_factory=OutputSpec)

    def __post_init__(self):
        if not self.name or any(c in self.name for c in "/\\"):
            raise ConfigError("experiment name must be a plain file stem")
        if self.n_points < 6:
            raise ConfigError("n_points must be >= 6")
        if self.n_trials < 1:
            raise ConfigError("n_trials must be >= 1")
        if not self.panels:
            raise ConfigError("at least one panel is required")
        labels = [p.label for p in self.panels]
        if len(set(labels)) != len(labels):
            raise ConfigError("panel labels must be unique")

    def test_params(self) -> np.ndarray:
        lo, hi = self.test_arc if self.test_arc is not None else self.curve.arc
        return np.linspace(lo, hi, self.test_points)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "curve": curve_to_dict(self.curve),
            "noise": asdict(self.noise),
            "n_points": self.n_points,
            "n_trials": self.n_trials,
            "panels": [{"label": p.label, "options": p.options.to_dict()} for p in self.panels],
            "test_points": self.test_points,
            "test_arc": None if self.test_arc is None else list(self.test_arc),
            "plot": {**asdict(self.plot), "bounds": list(self.plot.bounds),
                     "center_bounds": (None if self.plot.center_bounds is None
                                       else list(self.plot.center_bounds))},
            "outputs": asdict(self.outputs),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            return _config_from_dict(d)
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _only(d: dict, klass, where: str) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name for f in fields(klass)}
    extra = sorted(set(d) - known)
    if extra:
        raise ConfigError(f"unknown keys in {where}: {', '.join(extra)}")
    return d


def _tuple(v):
    return None if v is None else tuple(float(x) for x in v)


def _config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(_only(d, ExperimentConfig, "config"))
    if "name" not in d:
        raise ConfigError("config needs a name")
    if "curve" in d:
        d["curve"] = curve_from_dict(_only(d["curve"], CurveSpec, "curve"))
    if "noise" in d:
        d["noise"] = NoiseSpec(**_only(d["noise"], NoiseSpec, "noise"))
    if "panels" in d:
        panels = []
        for p in d["panels"]:
            p = _only(p, PanelSpec, "panel")
            opts = _only(p.get("options", {}), PipelineOptions, "panel options")
            panels.append(PanelSpec(str(p["label"]), PipelineOptions(**opts)))
        d["panels"] = tuple(panels)
    if "test_arc" in d:
        d["test_arc"] = _tuple(d["test_arc"])
    if "plot" in d:
        pl = dict(_only(d["plot"], PlotSpec, "plot"))
        if "bounds" in pl:
            pl["bounds"] = _tuple(pl["bounds"])
        if "center_bounds" in pl:
            pl["center_bounds"] = _tuple(pl["center_bounds"])
        d["plot"] = PlotSpec(**pl)
    if "outputs" in d:
        d["outputs"] = OutputSpec(**_only(d["outputs"], OutputSpec, "outputs"))
    return ExperimentConfig(**d)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return ExperimentConfig.from_dict(data)


def bundled_configs() -> list:
    """Names of the configs shipped with the package."""
    root = resources.files("conicfit") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def bundled_config(name: str) -> ExperimentConfig:
    root = resources.files("conicfit") / "configs"
    path = root / f"{name}.json"
    if not path.is_file():
        raise ConfigError(f"no bundled config {name!r}")
    return ExperimentConfig.from_dict(json.loads(path.read_text(encoding="utf-8")))


def _num(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for r in rows:
        w.writerow([x if isinstance(x, str) else _num(x) for x in r])
    return buf.getvalue()


def _summary_rows(label, params, pts, summ):
    n = len(params)
    nan = np.full(n, math.nan)
    cols = [summ.beyond.get(k, nan) for k in (1, 2, 3)]
    cols += [nan if v is None else v
             for v in (summ.offset_mean, summ.offset_se, summ.halfwidth_mean)]
    return [[label, params[i], pts[i, 0], pts[i, 1]] + [c[i] for c in cols] for i in range(n)]


SUMMARY_HEADER = ["panel", "t", "x", "y", "beyond_1", "beyond_2", "beyond_3",
                  "offset_mean", "offset_se", "halfwidth_mean"]
CENTER_HEADER = ["panel", "n", "kind", "mean_x", "mean_y", "cov_xx", "cov_xy", "cov_yy",
                 "true_x", "true_y"]
TRIAL_HEADER = ["panel", "trial", "ok", "class", "sigma2_hat",
                "g1", "g2", "g3", "g4", "g5", "g6",
                "typed_x0", "m1", "m2", "m3", "m4", "m5", "m6",
                "center_x", "center_y", "bias_x", "bias_y", "error"]


def _trial_rows(label, ens):
    rows = []
    for t in ens.trials:
        if not t.ok:
            rows.append([label, str(t.index), "0", ""] + [None] * 18 + [t.error])
            continue
        r = t.result
        typed = r.typed
        ce = r.center
        rows.append(
            [label, str(t.index), "1", r.final.conic_class.value, r.final.sigma2_hat]
            + list(r.final.g0)
            + ([typed.x0] + list(typed.mean) if typed is not None else [None] * 7)
            + (list(ce.c) + list(ce.bias) if ce is not None else [None] * 4)
            + [""]
        )
    return rows


def _reference(cfg: ExperimentConfig, options: PipelineOptions):
    """Noise-free fit carrying the covariance expected at the configured noise level."""
    ref_opts = PipelineOptions(**{**options.to_dict(), "noise_sigma": cfg.noise.sigma})
    return run_pipeline(cfg.curve.sample(cfg.n_points), ref_opts)


def _curve_svg(cfg, panel, ens, ref) -> str:
    pl = cfg.plot
    canvas = svg.Canvas(pl.bounds, pl.width)
    xs, ys, pts = svg.grid(pl.bounds, pl.grid)
    if pl.mode == "posterior":
        # each of a few samples with its own confidence band
        shown = ens.ok_trials()[:min(3, pl.n_curves)]
        for t in shown:
            svg.draw_band(canvas, t.result.final.band(), xs, ys, pts)
        svg.draw_conic(canvas, cfg.curve.true_conic(), xs, ys, pts, color="#000", width=1.5)
        for t in shown:
            svg.draw_conic(canvas, fitted_conic(t.result), xs, ys, pts, color="#b22222", width=1.0)
            canvas.points(t.points, color="#333", radius=1.2)
    else:
        svg.draw_band(canvas, ref.final.band(), xs, ys, pts)
        for t in ens.ok_trials()[:pl.n_curves]:
            svg.draw_conic(canvas, fitted_conic(t.result), xs, ys, pts, color="#b22222",
                           width=0.6, opacity=0.6)
        if panel.options.target is not None and ref.parabola is not None:
            svg.draw_conic(canvas, ref.parabola.g_bar, xs, ys, pts, color="#000", width=1.0,
                           dash="3,3")
        svg.draw_conic(canvas, cfg.curve.true_conic(), xs, ys, pts, color="#000", width=1.5)
        ok = ens.ok_trials()
        if ok:
            canvas.points(ok[0].points, color="#333", radius=1.2)
    canvas.text((pl.bounds[0], pl.bounds[3]), f" {cfg.name} {panel.label}")
    return canvas.render()


def _center_svgs(cfg, panel, ens, ref):
    truth = np.asarray(cfg.curve.translation, dtype=float)
    raw = np.array([t.result.center.c for t in ens.ok_trials() if t.result.center is not None])
    cor = np.array([t.result.center.corrected for t in ens.ok_trials()
                    if t.result.center is not None])
    pred = center_with_errors(ref.final).covariance
    bounds = cfg.plot.center_bounds
    if bounds is None:
        sd = np.sqrt(np.diag(pred))
        bounds = (truth[0] - 4 * sd[0], truth[0] + 4 * sd[0],
                  truth[1] - 4 * sd[1], truth[1] + 4 * sd[1])
    out = {}
    for kind, cloud in (("raw", raw), ("corrected", cor)):
        canvas = svg.Canvas(bounds, cfg.plot.width)
        if kind == "corrected":
            for k, shade in zip(svg.BAND_LEVELS, svg.BAND_SHADES):
                canvas.polyline(svg.covariance_ellipse(truth, pred, k), color=shade, width=1.2)
        inside = cloud[(cloud[:, 0] >= bounds[0]) & (cloud[:, 0] <= bounds[1])
                       & (cloud[:, 1] >= bounds[2]) & (cloud[:, 1] <= bounds[3])] \
            if len(cloud) else cloud
        canvas.points(inside, color="#333", radius=2.0, hollow=True)
        canvas.marker(truth, color="#b22222")
        canvas.text((bounds[0], bounds[3]), f" {cfg.name} {panel.label} centres {kind}")
        out[kind] = canvas.render()
    return out, raw, cor


def _center_rows(label, raw, cor, truth):
    rows = []
    for kind, cloud in (("raw", raw), ("corrected", cor)):
        if len(cloud) < 2:
            continue
        m = cloud.mean(axis=0)
        c = np.cov(cloud.T)
        rows.append([label, str(len(cloud)), kind, m[0], m[1], c[0, 0], c[0, 1], c[1, 1],
                     truth[0], truth[1]])
    return rows


def run_experiment(cfg: ExperimentConfig, out_dir=None, workers=None) -> list:
    """Run every panel of ``cfg`` and write its outputs.

    Returns the written paths.  If anything fails, files written so far are
    removed before the error propagates.
    """
    out_dir = out_dir if out_dir is not None else cfg.outputs.directory
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def emit(name, text):
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        written.append(path)

    try:
        params = cfg.test_params()
        tp = cfg.curve.point_at(params)
        summary, trial_rows, center_rows = [], [], []
        for panel in cfg.panels:
            ens = run_ensemble(cfg.curve, cfg.noise, cfg.n_points, cfg.n_trials,
                               panel.options, params, workers=workers)
            summary += _summary_rows(panel.label, params, tp, ens.summary)
            if cfg.outputs.trials_csv:
                trial_rows += _trial_rows(panel.label, ens)
            ref = _reference(cfg, panel.options)
            if cfg.plot.mode == "centers":
                pics, raw, cor = _center_svgs(cfg, panel, ens, ref)
                center_rows += _center_rows(panel.label, raw, cor, cfg.curve.translation)
                if cfg.outputs.svg:
                    for kind, text in pics.items():
                        emit(f"{cfg.name}_{panel.label}_centres_{kind}.svg", text)
            elif cfg.plot.mode != "none" and cfg.outputs.svg:
                emit(f"{cfg.name}_{panel.label}.svg", _curve_svg(cfg, panel, ens, ref))
        if cfg.outputs.summary_csv:
            emit(f"{cfg.name}_summary.csv", _csv_text(SUMMARY_HEADER, summary))
            if center_rows:
                emit(f"{cfg.name}_centres.csv", _csv_text(CENTER_HEADER, center_rows))
        if cfg.outputs.trials_csv:
            emit(f"{cfg.name}_trials.csv", _csv_text(TRIAL_HEADER, trial_rows))
    except BaseException:
        for path in written:
            try:
                os.remove(path)
            except OSError:
                pass
        raise
    return written


__all__ = ["ConfigError", "ExperimentConfig", "OutputSpec", "PanelSpec", "PlotSpec",
           "bundled_config", "bundled_configs", "load_config", "run_experiment"]
