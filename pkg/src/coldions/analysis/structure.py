"""Structural diagnostics: pair correlation, shells, caging and phase label."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import find_peaks
from scipy.spatial.distance import pdist

from ..csvio import write_csv
from ..dynamics import Snapshot

#: Crystallized when the RMS displacement is below this fraction of the spacing.
CAGING_THRESHOLD = 0.3
#: Minimum number of samples per ion in the window.
MIN_SAMPLES = 100
#: A g(r) maximum counts as a peak when it exceeds the following minimum by this much.
PEAK_CONTRAST = 0.05
#: ... and by this many standard errors of the pair-count statistics.
PEAK_SIGNIFICANCE = 3.0
#: Relative prominence of a density maximum counted as a shell.
SHELL_PROMINENCE = 0.25


@dataclass(frozen=True)
class StructureMetrics:
    r: np.ndarray  # bin centres (m)
    g: np.ndarray
    shell_radius: np.ndarray  # bin centres of the spheroidal-radius profile (m)
    shell_density: np.ndarray  # relative density (mean 1 inside the cloud)
    shell_count: int
    shell_contrast: float  # mean prominence of the detected shells (0 without shells)
    caging_ratio: float
    spacing: float  # mean nearest-neighbour distance (m)
    phase: str
    g_error: np.ndarray | None = None  # standard error of g from the pair counts

    @property
    def g_monotonic(self) -> bool:
        return not _has_peak(self.g, self.g_error)

    def write_g(self, path) -> None:
        write_csv(path, ("r_m", "g"), zip(self.r, self.g))


def _has_peak(g: np.ndarray, error: np.ndarray | None = None, contrast: float = PEAK_CONTRAST,
              significance: float = PEAK_SIGNIFICANCE) -> bool:
    """Whether g (3-bin average) exceeds a later value by more than ``contrast``.

    With ``error`` the excess must also exceed ``significance`` combined
    standard errors, so that sparse pair counts at small r are not mistaken
    for structure.
    """
    gs = uniform_filter1d(g, 3, mode="nearest")
    if error is None:
        later_min = np.minimum.accumulate(gs[::-1])[::-1]
        return bool(np.any(gs[:-1] - later_min[1:] > contrast))
    es = np.sqrt(uniform_filter1d(np.square(error), 3, mode="nearest") / 3.0)
    for i in range(len(gs) - 1):
        drop = gs[i] - gs[i + 1:]
        if np.any((drop > contrast) & (drop > significance * np.hypot(es[i], es[i + 1:]))):
            return True
    return False


def _positions(window: Sequence[Snapshot], species: str | None) -> np.ndarray:
    snap = window[0]
    sel = snap.alive.copy()
    if species is not None:
        k = [sp.name for sp in snap.species_table].index(species)
        sel &= snap.species_index == k
    for s in window:
        sel &= s.alive
    return np.stack([s.positions[sel] for s in window])


def _align(pos: np.ndarray) -> np.ndarray:
    """Remove the centre-of-mass motion and the rigid rotation about z."""
    p = pos - pos.mean(axis=1, keepdims=True)
    ref = p[0]
    out = p.copy()
    for t in range(1, len(p)):
        x, y = p[t, :, 0], p[t, :, 1]
        # angle minimizing sum |R p - ref|^2 in the xy plane
        th = math.atan2(np.sum(x * ref[:, 1] - y * ref[:, 0]), np.sum(x * ref[:, 0] + y * ref[:, 1]))
        c, s = math.cos(th), math.sin(th)
        out[t, :, 0] = c * x - s * y
        out[t, :, 1] = s * x + c * y
    return out


def _nearest_spacing(p: np.ndarray) -> float:
    from scipy.spatial import cKDTree

    d, _ = cKDTree(p).query(p, k=2)
    return float(d[:, 1].mean())


def structure_metrics(
    window: Sequence[Snapshot],
    species: str | None = None,
    r_max: float | None = None,
    bins: int = 60,
    shell_bins: int = 80,
    seed: int = 0,
    min_samples: int = MIN_SAMPLES,
    blur_fraction: float = 0.5,
) -> StructureMetrics:
    """Pair correlation, spheroidal shell profile, caging ratio and phase.

    g(r) is the same-time pair-distance histogram divided by that of an
    uncorrelated reference drawn from the window's one-body density, blurred
    by ``blur_fraction`` spacings and shrunk back to the same second moments,
    which keeps the cloud envelope but removes any lattice structure. The caging ratio is the RMS displacement of each ion from its
    window mean (centre of mass and rigid rotation removed) over the mean
    nearest-neighbour distance. Phase: "crystallized" when the caging ratio is
    below :data:`CAGING_THRESHOLD`, otherwise "liquid" for a non-monotonic
    g(r) and "gas" for a monotonic one.
    """
    if len(window) < min_samples:
        raise ValueError(f"need at least {min_samples} samples per ion, got {len(window)}")
    pos = _positions(window, species)
    n = pos.shape[1]
    if n < 3:
        raise ValueError("need at least three ions")
    spacing = float(np.mean([_nearest_spacing(p) for p in pos[:: max(1, len(pos) // 20)]]))
    if r_max is None:
        r_max = 4.0 * spacing
    edges = np.linspace(0.0, r_max, bins + 1)
    centres = 0.5 * (edges[1:] + edges[:-1])

    # same-time pairs
    stride = max(1, len(pos) // 50)
    frames = pos[::stride]
    hist = np.zeros(bins)
    for p in frames:
        hist += np.histogram(pdist(p), edges)[0]
    # reference: blurred one-body density, same number of frames and ions
    rng = np.random.default_rng(seed)
    pool = pos.reshape(-1, 3)
    centre = pool.mean(axis=0)
    var = pool.var(axis=0)
    blur = blur_fraction * spacing
    # shrink after blurring so the reference keeps the cloud's second moments
    shrink = np.sqrt(var / (var + blur**2))
    ref = np.zeros(bins)
    reps = 4
    for _ in range(reps * len(frames)):
        q = pool[rng.integers(0, len(pool), n)] + rng.normal(scale=blur, size=(n, 3))
        q = centre + (q - centre) * shrink
        ref += np.histogram(pdist(q), edges)[0]
    with np.errstate(invalid="ignore", divide="ignore"):
        g = np.where(ref > 10 * reps, hist * reps / np.maximum(ref, 1.0), 0.0)
        g_err = g * np.sqrt(1.0 / np.maximum(hist, 1.0) + 1.0 / np.maximum(ref, 1.0))

    aligned = _align(pos)
    disp = aligned - aligned.mean(axis=0, keepdims=True)
    rms = float(np.sqrt(np.mean(np.sum(disp**2, axis=2))))
    caging = rms / spacing

    # spheroidal radius u = R * sqrt((rho/R)^2 + (z/Z)^2) with R, Z from the second moments
    c = pos - pos.mean(axis=1, keepdims=True)
    rad2 = np.mean(c[..., 0] ** 2 + c[..., 1] ** 2)
    zz2 = np.mean(c[..., 2] ** 2)
    big_r = math.sqrt(2.5 * rad2)
    big_z = math.sqrt(5.0 * zz2)
    u = big_r * np.sqrt((c[..., 0] ** 2 + c[..., 1] ** 2) / big_r**2 + c[..., 2] ** 2 / big_z**2).ravel()
    s_edges = np.linspace(0.0, 1.2 * big_r, shell_bins + 1)
    s_centres = 0.5 * (s_edges[1:] + s_edges[:-1])
    counts = np.histogram(u, s_edges)[0].astype(float)
    shell_vol = np.diff(s_edges**3)
    dens = counts / shell_vol
    inside = s_centres < big_r
    dens = dens / dens[inside].mean() if dens[inside].mean() > 0 else dens
    smooth = uniform_filter1d(dens, 3, mode="nearest")
    # ignore the innermost bins, where the density estimate is too noisy
    start = max(2, int(0.15 * shell_bins))
    peaks, props = find_peaks(smooth[start:], prominence=SHELL_PROMINENCE)
    contrast = float(props["prominences"].mean()) if len(peaks) else 0.0

    if caging < CAGING_THRESHOLD:
        phase = "crystallized"
    elif _has_peak(g, g_err):
        phase = "liquid"
    else:
        phase = "gas"
    return StructureMetrics(centres, g, s_centres, dens, len(peaks), contrast, caging, spacing, phase, g_err)
