"""Fluorescence lineshape synthesis and Voigt thermometry."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit
from scipy.special import voigt_profile

from ..constants import K_B


class FitError(RuntimeError):
    def __init__(self, message: str, residual: float = math.nan):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class LineshapeFit:
    detuning: np.ndarray  # Hz
    signal: np.ndarray  # synthetic fluorescence (peak-normalized)
    temperature: float  # K
    doppler_sigma: float  # Gaussian standard deviation (Hz)
    center: float  # Hz
    residual: float  # RMS residual relative to the peak

    def model(self, lorentz_hwhm: float) -> np.ndarray:
        return _voigt(self.detuning, 1.0, self.center, self.doppler_sigma, lorentz_hwhm)


def synthetic_lineshape(velocities: np.ndarray, wavelength: float, natural_width: float,
                        detuning: np.ndarray) -> np.ndarray:
    """Lorentzian of FWHM ``natural_width`` averaged over the Doppler shifts v / wavelength.

    This is the exact convolution of the natural line with the sampled
    velocity distribution. The result is normalized to a unit maximum.
    """
    v = np.asarray(velocities, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("no velocity samples")
    det = np.asarray(detuning, dtype=float)
    hw = 0.5 * natural_width
    shifts = v / wavelength
    sig = np.zeros(det.shape)
    for chunk in np.array_split(shifts, max(1, v.size // 4096)):
        d = det[:, None] - chunk[None, :]
        sig += (hw * hw / (d * d + hw * hw)).sum(axis=1)
    return sig / sig.max()


def _voigt(x, amp, center, sigma, gamma):
    norm = voigt_profile(0.0, sigma, gamma)
    return amp * voigt_profile(x - center, sigma, gamma) / norm


def lineshape_fit(
    velocities: np.ndarray,
    mass: float,
    wavelength: float,
    natural_width: float,
    detuning: np.ndarray,
    max_residual: float = 0.05,
) -> LineshapeFit:
    """Synthesize the fluorescence line of the sampled velocities and fit a Voigt profile.

    ``velocities`` are components along the laser axis (m/s), ``natural_width``
    the Lorentzian FWHM (Hz) which is held fixed in the fit. The fitted
    Gaussian standard deviation sigma gives T = m (wavelength sigma)^2 / k_B.
    Raises :class:`FitError` (with the residual) if the fit fails or its RMS
    residual exceeds ``max_residual`` of the peak.
    """
    det = np.asarray(detuning, dtype=float)
    if det.size < 5:
        raise ValueError("scan grid needs at least five points")
    sig = synthetic_lineshape(velocities, wavelength, natural_width, det)
    gamma = 0.5 * natural_width
    v = np.asarray(velocities, dtype=float).ravel()
    sigma0 = max(float(np.std(v)) / wavelength, 1e-3 * gamma)
    center0 = float(np.mean(v)) / wavelength

    def f(x, amp, center, sigma):
        return _voigt(x, amp, center, sigma, gamma)

    try:
        popt, _ = curve_fit(
            f, det, sig, p0=(1.0, center0, sigma0),
            bounds=([0.0, det.min(), 0.0], [np.inf, det.max(), np.ptp(det)]),
            x_scale=(1.0, gamma, gamma), max_nfev=2000,
        )
    except RuntimeError as exc:
        raise FitError(f"Voigt fit did not converge: {exc}") from exc
    resid = float(np.sqrt(np.mean((f(det, *popt) - sig) ** 2)))
    if resid > max_residual:
        raise FitError(f"Voigt fit residual {resid:.3g} exceeds {max_residual}", resid)
    sigma = float(popt[2])
    t = mass * (wavelength * sigma) ** 2 / K_B
    return LineshapeFit(det, sig, t, sigma, float(popt[1]), resid)
