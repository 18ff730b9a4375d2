"""Diagnostics on simulated ensembles: spectra, images, structure, lineshapes and fits."""

from .fitting import (
    Candidate,
    EnsembleSimulator,
    FitResult,
    fit_ensemble,
    grid_search,
    sc_temperature_bound,
    sequential_fit,
    staged_heating_fit,
)
from .imaging import CcdImage, ImageConfig, default_psf_sigma, image_similarity, read_pgm, render_ccd
from .lineshape import FitError, LineshapeFit, lineshape_fit, synthetic_lineshape
from .spectra import Peak, Spectrum, find_peaks, power_spectrum, spectrum_fft, spectrum_sweep
from .structure import StructureMetrics, structure_metrics

__all__ = [
    "Candidate",
    "CcdImage",
    "EnsembleSimulator",
    "FitError",
    "FitResult",
    "ImageConfig",
    "LineshapeFit",
    "Peak",
    "Spectrum",
    "StructureMetrics",
    "default_psf_sigma",
    "find_peaks",
    "fit_ensemble",
    "grid_search",
    "image_similarity",
    "lineshape_fit",
    "power_spectrum",
    "read_pgm",
    "render_ccd",
    "sc_temperature_bound",
    "sequential_fit",
    "spectrum_fft",
    "spectrum_sweep",
    "staged_heating_fit",
    "structure_metrics",
    "synthetic_lineshape",
]
