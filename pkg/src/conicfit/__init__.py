"""Conic fitting with posterior covariance, type constraints, and bias control."""

from .conic import ConicClass, classify, conic_center
from .core import FitError
from .pipeline import BandField, GenericFit, fit_with_reweight, generic_fit
from .propagate import CenterEstimate, DerivedParam, center_with_errors, propagate
from .recipe import PipelineOptions, PipelineResult, run_pipeline
from .synth import CurveSpec, NoiseSpec, run_ensemble
from .typed import (
    ParabolicFit,
    TruncatedPosterior,
    project_to_parabola,
    truncated_mean_factor,
    type_constrained_mean,
)

__version__ = "0.1.0"

__all__ = [
    "BandField", "CenterEstimate", "ConicClass", "CurveSpec", "DerivedParam", "FitError",
    "GenericFit", "NoiseSpec", "ParabolicFit", "PipelineOptions", "PipelineResult",
    "TruncatedPosterior", "center_with_errors", "classify", "conic_center",
    "fit_with_reweight", "generic_fit", "project_to_parabola", "propagate", "run_ensemble",
    "run_pipeline", "truncated_mean_factor", "type_constrained_mean",
]
