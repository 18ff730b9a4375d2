"""Motional-resonance spectra: FFT of a perturbed ensemble and swept-drive response."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.ndimage import uniform_filter1d

from ..constants import K_B
from ..csvio import write_csv
from ..dynamics import (
    CallbackObserver,
    ExcitationDrive,
    ForceConfig,
    HeatingModel,
    IntegrationError,
    LaserCooling,
    NO_HEATING,
    TrajectoryRecorder,
    evolve,
)
from ..dynamics.state import EnsembleState

#: Peaks must exceed this multiple of the spectral floor.
PEAK_THRESHOLD = 5.0
SMOOTH_BINS = 5
#: Peaks weaker than this fraction of the strongest one are dropped (numerical floor).
MIN_RELATIVE_HEIGHT = 1e-6


@dataclass(frozen=True)
class Peak:
    frequency: float
    height: float
    width: float


@dataclass
class Spectrum:
    """Response on a strictly increasing frequency grid (Hz)."""

    frequencies: np.ndarray
    response: np.ndarray
    method: str
    peaks: list[Peak] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        self.response = np.asarray(self.response, dtype=float)
        if self.frequencies.shape != self.response.shape:
            raise ValueError("frequency and response grids differ in length")
        if np.any(np.diff(self.frequencies) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        if self.method == "fft" and np.any(self.response < 0):
            raise ValueError("power spectrum must be non-negative")

    def peak_near(self, frequency: float, tolerance: float = 0.25) -> Peak | None:
        """Highest peak within ``tolerance`` (relative) of ``frequency``."""
        near = [p for p in self.peaks if abs(p.frequency - frequency) <= tolerance * frequency]
        return max(near, key=lambda p: p.height) if near else None

    def write(self, path) -> None:
        write_csv(path, ("freq_hz", "response"), zip(self.frequencies, self.response))


def spectral_floor(response: np.ndarray, smooth: int = SMOOTH_BINS) -> float:
    return float(np.median(uniform_filter1d(response, smooth, mode="nearest")))


def find_peaks(freqs: np.ndarray, response: np.ndarray, threshold: float = PEAK_THRESHOLD,
               smooth: int = SMOOTH_BINS, floor: float | None = None) -> list[Peak]:
    """Local maxima above ``threshold`` times the floor, refined by quadratic interpolation.

    Candidates are maxima of the ``smooth``-bin moving average; the floor is
    the median of that average. Peaks below :data:`MIN_RELATIVE_HEIGHT` of
    the strongest are discarded. Each candidate is refined on the raw response
    around its highest bin. Width is the full width at half maximum (linear
    interpolation between bins).
    """
    freqs = np.asarray(freqs, dtype=float)
    response = np.asarray(response, dtype=float)
    if len(response) < 3:
        return []
    sm = uniform_filter1d(response, smooth, mode="nearest")
    if floor is None:
        floor = float(np.median(sm))
    level = threshold * floor
    half = smooth // 2
    peaks = []
    for k in range(1, len(sm) - 1):
        if not (sm[k] > level and sm[k] >= sm[k - 1] and sm[k] > sm[k + 1]):
            continue
        lo, hi = max(0, k - half), min(len(response), k + half + 1)
        j = lo + int(np.argmax(response[lo:hi]))
        f, h = _refine(freqs, response, j)
        if peaks and abs(peaks[-1].frequency - f) < 1e-12 * max(1.0, f):
            continue
        peaks.append(Peak(f, h, _fwhm(freqs, response, j, h)))
    if peaks:
        top = max(p.height for p in peaks)
        peaks = [p for p in peaks if p.height >= MIN_RELATIVE_HEIGHT * top]
    return peaks


def _refine(freqs, response, j):
    if j == 0 or j == len(response) - 1:
        return float(freqs[j]), float(response[j])
    a, b, c = response[j - 1], response[j], response[j + 1]
    den = a - 2 * b + c
    if den >= 0:
        return float(freqs[j]), float(b)
    d = 0.5 * (a - c) / den
    step = 0.5 * (freqs[j + 1] - freqs[j - 1])
    return float(freqs[j] + d * step), float(b - 0.25 * (a - c) * d)


def _fwhm(freqs, response, j, height):
    half = 0.5 * height
    lo = j
    while lo > 0 and response[lo] > half:
        lo -= 1
    hi = j
    while hi < len(response) - 1 and response[hi] > half:
        hi += 1

    def cross(i0, i1):
        r0, r1 = response[i0], response[i1]
        if r1 == r0:
            return freqs[i0]
        return freqs[i0] + (half - r0) / (r1 - r0) * (freqs[i1] - freqs[i0])

    return float(cross(hi - 1, hi) - cross(lo, lo + 1)) if hi > lo else 0.0


def power_spectrum(signal: np.ndarray, sample_interval: float) -> tuple[np.ndarray, np.ndarray]:
    """Hann-windowed one-sided power spectrum of a mean-subtracted signal (DC bin dropped)."""
    x = np.asarray(signal, dtype=float)
    x = (x - x.mean()) * np.hanning(len(x))
    p = np.abs(np.fft.rfft(x)) ** 2
    f = np.fft.rfftfreq(len(x), sample_interval)
    return f[1:], p[1:]


def spectrum_fft(
    state: EnsembleState,
    config: ForceConfig,
    target_species: str,
    duration: float,
    offset_fraction: float = 0.05,
    cooling: LaserCooling | None = None,
    heating: HeatingModel = NO_HEATING,
    stride: int = 1,
    lowest_frequency: float | None = None,
    observe: str | None = None,
) -> Spectrum:
    """Displace ``target_species`` radially along x, evolve, and Fourier-transform.

    The displacement is ``offset_fraction`` of the target sub-ensemble's
    radial extent (RMS radius; 100 um for a single ion). The signal is the mean
    x coordinate of ``observe`` (default: the target species). ``state`` is
    modified.
    """
    k = state.species_id(target_species)
    sel = state.alive & (state.species_index == k)
    if not sel.any():
        raise ValueError(f"no live {target_species} ions")
    if lowest_frequency is not None and duration < 10.0 / lowest_frequency:
        raise ValueError("evolution shorter than 10 periods of the lowest expected frequency")
    rho = np.hypot(state.positions[sel, 0], state.positions[sel, 1])
    extent = float(np.sqrt(np.mean(rho**2))) if sel.sum() > 1 else 0.0
    if extent == 0.0:
        extent = 100e-6
    state.positions[sel, 0] += offset_fraction * extent
    obs = state.species_id(observe) if observe is not None else k
    rec = TrajectoryRecorder(stride=stride)
    if config.mode == "rf_full":
        stride = max(stride, config.steps_per_rf_period)
        rec.stride = stride
    evolve(state, config, cooling or LaserCooling(enabled=False), heating, duration=duration, observers=[rec])
    xs = []
    for snap in rec.snapshots:
        m = snap.alive & (snap.species_index == obs)
        xs.append(snap.positions[m, 0].mean() if m.any() else 0.0)
    f, p = power_spectrum(np.array(xs), stride * config.timestep)
    return Spectrum(f, p, "fft", find_peaks(f, p))


def spectrum_sweep(
    state: EnsembleState,
    config: ForceConfig,
    frequencies: Sequence[float],
    amplitude: float,
    dwell: float,
    readout: str,
    cooling: LaserCooling | None = None,
    heating: HeatingModel = NO_HEATING,
    direction=(1.0, 0.0, 0.0),
    settle: float = 0.0,
    stride: int = 10,
    threshold: float = PEAK_THRESHOLD,
) -> Spectrum:
    """Drive at each frequency for ``dwell`` seconds and record the readout response.

    Every frequency starts from a copy of ``state`` (no sweep hysteresis). The
    response is the mean secular kinetic energy of ``readout`` ions (in K)
    over the dwell, after an optional ``settle`` period, minus the undriven
    value. Runs that lose ions or fail numerically are flagged.
    """
    freqs = np.asarray(frequencies, dtype=float)
    if np.any(np.diff(freqs) <= 0):
        raise ValueError("sweep frequencies must be strictly increasing")
    cooling = cooling or LaserCooling()
    k_read = state.species_id(readout)

    def run(freq, amp):
        st = state.copy()
        drive = ExcitationDrive(amp, freq, tuple(direction), start_time=st.time)
        cfg = replace(config, drive=drive)
        if config.mode == "rf_full":
            s = max(stride // config.steps_per_rf_period, 1) * config.steps_per_rf_period
        else:
            s = stride
        if settle > 0:
            evolve(st, cfg, cooling, heating, duration=settle)
        energies = []

        def grab(snap):
            m = snap.alive & (snap.species_index == k_read)
            energies.append(snap.kinetic_energy[m].mean() if m.any() else 0.0)

        n0 = st.n_alive
        evolve(st, cfg, cooling, heating, duration=dwell, observers=[CallbackObserver(s, grab)])
        return float(np.mean(energies)) * 2.0 / (3.0 * K_B), n0 - st.n_alive

    flags = []
    base, _ = run(freqs[0], 0.0)
    resp = np.empty(len(freqs))
    for i, f in enumerate(freqs):
        try:
            e, lost = run(f, amplitude)
        except IntegrationError as exc:
            flags.append(f"{f:.6g} Hz: integration failed ({exc}); drive amplitude too high")
            e, lost = np.nan, 0
        if lost:
            flags.append(f"{f:.6g} Hz: {lost} ions lost")
        resp[i] = max(e - base, 0.0) if np.isfinite(e) else np.nan
    finite = np.where(np.isfinite(resp), resp, 0.0)
    floor = max(spectral_floor(finite), 1e-3 * float(finite.max()) if finite.max() > 0 else 0.0)
    peaks = find_peaks(freqs, finite, threshold, smooth=1, floor=floor) if floor > 0 else []
    sp = Spectrum(freqs, finite, "sweep", peaks, flags)
    for msg in flags:
        warnings.warn(msg, stacklevel=2)
    return sp
