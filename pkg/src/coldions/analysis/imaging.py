"""Synthetic CCD images of the fluorescing ions and image comparison."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from ..dynamics import Snapshot
from ..trapmodel import IonSpecies, TrapConfig, plasma_estimate

VIEW_PLANES = {"zy": (2, 1), "zx": (2, 0), "xy": (0, 1)}
#: Gaussian kernel half-width in standard deviations.
PSF_TRUNCATE = 6.0
PGM_MAX = 65535


@dataclass(frozen=True)
class ImageConfig:
    """Camera geometry.

    The image has ``shape = (rows, columns)``; columns run along the first
    axis of ``view_plane`` and rows along the second, both centred on the trap
    axis. ``brightness`` is the count deposited per fluorescing-ion sample.
    """

    view_plane: str = "zy"
    pixel_size: float = 2e-6
    shape: tuple[int, int] = (128, 256)
    exposure: float = 1e-3
    psf_sigma: float = 0.0
    brightness: float = 1.0

    def __post_init__(self):
        if self.view_plane not in VIEW_PLANES:
            raise ValueError(f"view_plane must be one of {sorted(VIEW_PLANES)}")
        if not self.pixel_size > 0:
            raise ValueError("pixel_size must be positive")
        if not self.exposure > 0:
            raise ValueError("exposure must be positive")
        if self.psf_sigma < 0:
            raise ValueError("psf_sigma must be >= 0")
        if min(self.shape) < 1:
            raise ValueError("image shape must be positive")
        object.__setattr__(self, "shape", tuple(int(v) for v in self.shape))


def default_psf_sigma(trap: TrapConfig, species: IonSpecies) -> float:
    """One interparticle spacing at the cold reference density."""
    return plasma_estimate(trap, species, 1.0).spacing


@dataclass
class CcdImage:
    data: np.ndarray
    config: ImageConfig
    species: tuple[str, ...] = ()
    time_span: tuple[float, float] = (0.0, 0.0)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape != self.config.shape:
            raise ValueError("image data does not match the configured shape")
        if np.any(self.data < 0):
            raise ValueError("image intensities must be >= 0")

    @property
    def total(self) -> float:
        return float(self.data.sum())

    def metadata(self) -> str:
        items = dict(asdict(self.config))
        items["shape"] = "x".join(str(v) for v in self.config.shape)
        items["species"] = ",".join(self.species)
        items["t_start"] = repr(float(self.time_span[0]))
        items["t_end"] = repr(float(self.time_span[1]))
        items.update(self.extra)
        return ";".join(f"{k}={v}" for k, v in items.items())

    def write_pgm(self, path) -> float:
        """Write a 16-bit binary PGM scaled so the brightest pixel is 65535.

        Returns the scale factor (counts per grey level); it is also stored
        in the comment line as ``scale``.
        """
        peak = float(self.data.max())
        scale = peak / PGM_MAX if peak > 0 else 1.0
        pix = np.rint(self.data / scale).astype(">u2")
        rows, cols = self.config.shape
        header = f"P5\n# {self.metadata()};scale={scale!r}\n{cols} {rows}\n{PGM_MAX}\n".encode("ascii")
        Path(path).write_bytes(header + pix.tobytes())
        return scale


def read_pgm(path) -> tuple[np.ndarray, dict]:
    """Pixel values (as float counts, multiplied by ``scale``) and the metadata comment."""
    raw = Path(path).read_bytes()
    fields, meta, pos = [], {}, 0
    while len(fields) < 4:
        end = raw.index(b"\n", pos)
        line = raw[pos:end].decode("ascii")
        pos = end + 1
        if line.startswith("#"):
            for item in line[1:].strip().split(";"):
                if "=" in item:
                    k, v = item.split("=", 1)
                    meta[k] = v
            continue
        fields += line.split()
    if fields[0] != "P5":
        raise ValueError("not a binary PGM file")
    cols, rows, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    dtype = ">u2" if maxval > 255 else "u1"
    pix = np.frombuffer(raw[pos:], dtype=dtype, count=rows * cols).reshape(rows, cols)
    return pix.astype(float) * float(meta.get("scale", 1.0)), meta


def _fluorescing(snap: Snapshot, species: Sequence[str] | None) -> np.ndarray:
    if species is None:
        names = {sp.name for sp in snap.species_table if sp.is_laser_cooled}
    else:
        names = set(species)
    ok = np.array([sp.name in names for sp in snap.species_table])
    return snap.alive & ok[snap.species_index]


def deposit(points: np.ndarray, config: ImageConfig) -> np.ndarray:
    """Histogram projected ``(u, v)`` points (m) onto the pixel grid (no PSF)."""
    rows, cols = config.shape
    col = np.floor(points[:, 0] / config.pixel_size + 0.5 * cols).astype(np.int64)
    row = np.floor(points[:, 1] / config.pixel_size + 0.5 * rows).astype(np.int64)
    inside = (col >= 0) & (col < cols) & (row >= 0) & (row < rows)
    img = np.bincount(row[inside] * cols + col[inside], minlength=rows * cols).astype(float)
    return img.reshape(rows, cols) * config.brightness


def render_ccd(samples: Sequence[Snapshot], config: ImageConfig, species: Sequence[str] | None = None) -> CcdImage:
    """Time-integrated projection of the fluorescing ions.

    Every sample of a fluorescing ion (by default all laser-cooled species)
    deposits ``brightness`` in its pixel; the sum is blurred with a Gaussian
    point-spread function. Sympathetically cooled ions leave no signal.
    """
    if not samples:
        raise ValueError("no trajectory samples to render")
    a, b = VIEW_PLANES[config.view_plane]
    pts = []
    for snap in samples:
        m = _fluorescing(snap, species)
        pts.append(snap.positions[m][:, [a, b]])
    pts = np.concatenate(pts) if pts else np.empty((0, 2))
    if len(pts) == 0:
        raise ValueError("no fluorescing ion samples to render")
    img = deposit(pts, config)
    sigma = config.psf_sigma / config.pixel_size
    if sigma > 0:
        img = gaussian_filter(img, sigma, mode="constant", truncate=PSF_TRUNCATE)
        np.maximum(img, 0.0, out=img)
    table = samples[0].species_table
    names = tuple(sp.name for sp in table if (sp.is_laser_cooled if species is None else sp.name in species))
    return CcdImage(img, config, names, (samples[0].time, samples[-1].time))


def image_similarity(a: CcdImage | np.ndarray, b: CcdImage | np.ndarray) -> float:
    """Normalized cross-correlation of mean-subtracted images, in [-1, 1].

    A uniform image has no structure to correlate and scores 0.
    """
    x = np.asarray(a.data if isinstance(a, CcdImage) else a, dtype=float)
    y = np.asarray(b.data if isinstance(b, CcdImage) else b, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"image dimensions differ: {x.shape} vs {y.shape}")
    x = x - x.mean()
    y = y - y.mean()
    den = math.sqrt(float((x * x).sum()) * float((y * y).sum()))
    if den == 0:
        return 0.0
    return float(np.clip((x * y).sum() / den, -1.0, 1.0))
