"""The full recommended fitting sequence behind one options object."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

from .conic import ConicClass
from .core import FitError
from .pipeline import GenericFit, fit_with_reweight, generic_fit
from .propagate import CenterEstimate, center_with_errors
from .typed import ParabolicFit, TruncatedPosterior, project_to_parabola, type_constrained_mean

WEIGHTING_MODES = ("reweighted", "unweighted", "sampson")
TARGETS = (None, "ellipse", "hyperbola", "parabola")


@dataclass(frozen=True)
class PipelineOptions:
    weighting: str = "reweighted"
    curvature_correction: bool = True
    target: Optional[str] = None
    center: bool = False
    noise_sigma: Optional[float] = None
    reweight_passes: int = 2

    def __post_init__(self):
        if self.reweight_passes < 1:
            raise ValueError("reweight_passes must be >= 1")
        if self.weighting not in WEIGHTING_MODES:
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if self.target not in TARGETS:
            raise ValueError(f"unknown target {self.target!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PipelineResult:
    preliminary: GenericFit
    final: GenericFit
    parabola: Optional[ParabolicFit] = None
    typed: Optional[TruncatedPosterior] = None
    center: Optional[CenterEstimate] = None

    @property
    def warnings(self) -> tuple:
        return self.final.warnings


def run_pipeline(points, options: Optional[PipelineOptions] = None) -> PipelineResult:
    """Fit ``points`` according to ``options``.

    The center is only computed when requested and the final conic is
    central; a parabolic fit skips it rather than failing.
    """
    options = options or PipelineOptions()
    cc = options.curvature_correction
    if options.weighting == "unweighted":
        prelim = final = generic_fit(points, "unweighted", curvature_correction=cc,
                                     noise_sigma=options.noise_sigma)
    else:
        prelim, final = fit_with_reweight(points, curvature_correction=cc,
                                          sampson=options.weighting == "sampson",
                                          noise_sigma=options.noise_sigma,
                                          passes=options.reweight_passes)
    parabola = typed = None
    if options.target is not None:
        parabola = project_to_parabola(final)
        if options.target != "parabola":
            typed = type_constrained_mean(final, parabola, ConicClass(options.target))
    center = None
    if options.center and final.conic_class in (ConicClass.ELLIPSE, ConicClass.HYPERBOLA):
        try:
            center = center_with_errors(final)
        except FitError:
            center = None
    return PipelineResult(prelim, final, parabola, typed, center)


def fitted_conic(result: PipelineResult):
    """The coefficient vector the options asked for."""
    if result.typed is not None:
        return result.typed.mean
    if result.parabola is not None:
        return result.parabola.g_bar
    return result.final.g0


__all__ = ["PipelineOptions", "PipelineResult", "run_pipeline", "fitted_conic"]
