"""Anytime-valid likelihood confidence sequences for sparse-view CT."""

from .confseq import ConfidenceState, MixingDistribution, membership, mixture_nll, update
from .forward import Geometry, Measurement, mean_counts, radon_backproject, radon_project
from .likelihood import PoissonData, cumulative_nll, nll_gradient, nll_increment
from .phantoms import make_phantom, rotate_image

__version__ = "0.1.0"

__all__ = [
    "ConfidenceState", "MixingDistribution", "membership", "mixture_nll", "update",
    "Geometry", "Measurement", "mean_counts", "radon_backproject", "radon_project",
    "PoissonData", "cumulative_nll", "nll_gradient", "nll_increment",
    "make_phantom", "rotate_image",
]
