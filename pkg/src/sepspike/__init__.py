"""Spiked separable covariance matrices: limiting law, outlier theory, simulation and inference."""

from __future__ import annotations

from .dequiv import EdgeData, density, find_edge, g1c, g2c, solve_at
from .errors import SepspikeError
from .estimators import adaptive_spikes, calibrate_omega, estimate_counts, shrink
from .sampling import EntryLaw, SampleDraw, draw
from .spectra import PopulationSpectrum, SeparableModel, make_spiked, spiked_to, validate
from .theory import overlap_prediction, predict_outliers, separation

__all__ = [
    "EdgeData",
    "EntryLaw",
    "PopulationSpectrum",
    "SampleDraw",
    "SeparableModel",
    "SepspikeError",
    "adaptive_spikes",
    "calibrate_omega",
    "density",
    "draw",
    "estimate_counts",
    "find_edge",
    "g1c",
    "g2c",
    "make_spiked",
    "overlap_prediction",
    "predict_outliers",
    "separation",
    "shrink",
    "solve_at",
    "spiked_to",
    "validate",
]
