"""Rovibrational population kinetics under blackbody radiation, IR pumping and UV dissociation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import curve_fit

from .constants import C_LIGHT, H_PLANCK, K_B
from .csvio import write_csv

#: RK4 step as a fraction of the fastest decay time.
STEP_FRACTION = 0.1
#: Smallest step accepted before the system is declared too stiff (s).
MIN_STEP = 1e-12
#: RMS log-residual above which a Boltzmann fit is flagged non-thermal.
THERMAL_RESIDUAL = 0.1

Level = tuple[int, int]


class StiffnessError(RuntimeError):
    pass


@dataclass
class LevelScheme:
    """Levels (v, J) with energies, Einstein A coefficients and UV cross sections."""

    energies: dict[Level, float]
    einstein_a: dict[Level, dict[Level, float]] = field(default_factory=dict)
    dissociation: dict[Level, float] = field(default_factory=dict)

    def __post_init__(self):
        self.levels: list[Level] = sorted(self.energies)
        self.index = {lv: i for i, lv in enumerate(self.levels)}
        for v in {lv[0] for lv in self.levels}:
            js = sorted(j for vv, j in self.levels if vv == v)
            es = [self.energies[(v, j)] for j in js]
            if any(b < a for a, b in zip(es, es[1:])):
                raise ValueError(f"energies of v = {v} are not ordered by J")
        for up, lows in self.einstein_a.items():
            for low, a in lows.items():
                for lv in (up, low):
                    if lv not in self.energies:
                        raise ValueError(f"transition references unknown level {lv}")
                if a < 0:
                    raise ValueError(f"negative A coefficient for {up} -> {low}")
                if abs(up[1] - low[1]) != 1:
                    raise ValueError(f"{up} -> {low} violates the dJ = +-1 selection rule")
                if self.energies[up] <= self.energies[low]:
                    raise ValueError(f"{up} -> {low}: upper level is not above the lower one")
        for lv, s in self.dissociation.items():
            if lv not in self.energies:
                raise ValueError(f"dissociation references unknown level {lv}")
            if s < 0:
                raise ValueError("negative dissociation cross section")

    def __len__(self):
        return len(self.levels)

    @staticmethod
    def degeneracy(level: Level) -> int:
        return 2 * level[1] + 1

    def subset(self, keep) -> "LevelScheme":
        keep = set(keep)
        a = {u: {l: x for l, x in lows.items() if l in keep} for u, lows in self.einstein_a.items() if u in keep}
        return LevelScheme({lv: self.energies[lv] for lv in keep}, a,
                           {lv: s for lv, s in self.dissociation.items() if lv in keep})

    def boltzmann(self, temperature: float, v: int | None = 0) -> np.ndarray:
        """Thermal populations at ``temperature`` (restricted to vibrational state ``v``)."""
        p = np.zeros(len(self))
        e0 = min(self.energies.values())
        for i, lv in enumerate(self.levels):
            if v is None or lv[0] == v:
                p[i] = self.degeneracy(lv) * math.exp(-(self.energies[lv] - e0) / (K_B * temperature))
        return p / p.sum()

    @classmethod
    def parse(cls, text: str, source: str = "<string>") -> "LevelScheme":
        energies, a, diss = {}, {}, {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            f = line.split()
            try:
                if f[0] == "level" and len(f) == 4:
                    energies[(int(f[1]), int(f[2]))] = float(f[3])
                elif f[0] == "line" and len(f) == 6:
                    a.setdefault((int(f[1]), int(f[2])), {})[(int(f[3]), int(f[4]))] = float(f[5])
                elif f[0] == "diss" and len(f) == 4:
                    diss[(int(f[1]), int(f[2]))] = float(f[3])
                else:
                    raise ValueError("unrecognized record")
            except ValueError as exc:
                raise ValueError(f"{source}:{n}: {exc}: {raw.strip()!r}") from None
        return cls(energies, a, diss)

    @classmethod
    def load(cls, path) -> "LevelScheme":
        return cls.parse(Path(path).read_text(), str(path))


def toy_hdplus() -> LevelScheme:
    """The shipped toy HD+-like scheme (order-of-magnitude values, not molecular data)."""
    text = resources.files("coldions").joinpath("data/hdplus_toy.levels").read_text()
    return LevelScheme.parse(text, "hdplus_toy.levels")


@dataclass(frozen=True)
class IrPump:
    lower: Level
    upper: Level
    rate: float  # upward rate per molecule in the lower level (1/s)


@dataclass(frozen=True)
class RadiationEnv:
    t_bbr: float = 300.0
    ir: IrPump | None = None
    uv_intensity: float = 0.0  # W/m^2
    uv_wavelength: float = 266e-9

    def __post_init__(self):
        if self.t_bbr < 0:
            raise ValueError("t_bbr must be >= 0")
        if self.uv_intensity < 0:
            raise ValueError("uv_intensity must be >= 0")


def planck_occupation(energy: float, temperature: float) -> float:
    """Mean photon number at transition energy ``energy`` (J)."""
    if temperature <= 0:
        return 0.0
    x = energy / (K_B * temperature)
    return 1.0 / math.expm1(x) if x < 700 else 0.0


def build_rate_matrix(scheme: LevelScheme, env: RadiationEnv) -> np.ndarray:
    """Generator M with dp/dt = M p; the last row/column is the dissociated sink.

    Every column sums to zero, so total probability is conserved exactly.
    """
    n = len(scheme)
    m = np.zeros((n + 1, n + 1))
    ix = scheme.index
    for up, lows in scheme.einstein_a.items():
        for low, a in lows.items():
            i, j = ix[up], ix[low]
            nbar = planck_occupation(scheme.energies[up] - scheme.energies[low], env.t_bbr)
            m[j, i] += a * (1.0 + nbar)
            m[i, j] += a * nbar * scheme.degeneracy(up) / scheme.degeneracy(low)
    if env.ir is not None:
        lo, hi = env.ir.lower, env.ir.upper
        for lv in (lo, hi):
            if lv not in ix:
                raise ValueError(f"IR transition references unknown level {lv}")
        w = env.ir.rate
        m[ix[hi], ix[lo]] += w
        m[ix[lo], ix[hi]] += w * scheme.degeneracy(lo) / scheme.degeneracy(hi)
    if env.uv_intensity > 0:
        flux = env.uv_intensity * env.uv_wavelength / (H_PLANCK * C_LIGHT)
        for lv, sigma in scheme.dissociation.items():
            m[n, ix[lv]] += sigma * flux
    np.fill_diagonal(m, 0.0)
    m -= np.diag(m.sum(axis=0))
    return m


def _rk4_propagator(m: np.ndarray, h: float) -> np.ndarray:
    a = h * m
    eye = np.eye(len(m))
    a2 = a @ a
    return eye + a + a2 / 2 + a2 @ a / 6 + a2 @ a2 / 24


def integrate(populations: np.ndarray, matrix: np.ndarray, duration: float, samples: int = 101,
              step_fraction: float = STEP_FRACTION) -> tuple[np.ndarray, np.ndarray]:
    """Fixed-step RK4 solution sampled at ``samples`` equally spaced times.

    The step is at most ``step_fraction`` / max|diagonal| and divides the
    sampling interval. For a linear system one RK4 step is the matrix
    polynomial I + A + A^2/2 + A^3/6 + A^4/24 (A = hM), which is applied as a
    matrix power per sampling interval. Returns ``(times, populations)``
    with shape ``(samples, n)``.
    """
    p = np.asarray(populations, dtype=float)
    if not duration > 0:
        raise ValueError("duration must be positive")
    if p.shape != (len(matrix),):
        raise ValueError("population vector does not match the matrix")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("initial populations must be non-negative and normalized")
    samples = max(int(samples), 2)
    interval = duration / (samples - 1)
    fastest = float(np.max(np.abs(np.diag(matrix))))
    if fastest == 0:
        return np.linspace(0.0, duration, samples), np.tile(p, (samples, 1))
    h_max = step_fraction / fastest
    k = math.ceil(interval / h_max)
    h = interval / k
    if h < MIN_STEP:
        raise StiffnessError(f"required RK4 step {h:.3g} s is below {MIN_STEP:g} s (fastest rate {fastest:.3g}/s)")
    prop = np.linalg.matrix_power(_rk4_propagator(matrix, h), k)
    out = np.empty((samples, len(p)))
    out[0] = p
    for s in range(1, samples):
        p = prop @ p
        out[s] = p
    return np.linspace(0.0, duration, samples), out


def stationary(matrix: np.ndarray) -> np.ndarray:
    """Steady state of the level block (sink excluded), normalized to one.

    Meaningful when no population flows into the sink, i.e. without UV light.
    """
    block = matrix[:-1, :-1]
    n = len(block)
    a = np.vstack([block, np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    x = np.linalg.lstsq(a, b, rcond=None)[0]
    return x / x.sum()


def rempd_survival(scheme: LevelScheme, env: RadiationEnv, initial: np.ndarray | float, duration: float,
                   samples: int = 201) -> tuple[np.ndarray, np.ndarray]:
    """Surviving fraction N(t)/N0 = 1 - sink(t).

    ``initial`` is a population vector over the levels or a rotational
    temperature for a v = 0 Boltzmann start.
    """
    p0 = scheme.boltzmann(initial) if np.isscalar(initial) else np.asarray(initial, dtype=float)
    p0 = np.append(p0, 0.0)
    t, pops = integrate(p0, build_rate_matrix(scheme, env), duration, samples)
    return t, 1.0 - pops[:, -1]


def write_populations(path, scheme: LevelScheme, times: np.ndarray, pops: np.ndarray) -> None:
    header = ("t_s", *(f"v{v}J{j}" for v, j in scheme.levels), "sink")
    write_csv(path, header, (tuple([t, *row]) for t, row in zip(times, pops)))


@dataclass(frozen=True)
class BoltzmannFit:
    temperature: float
    residual: float
    thermal: bool


def boltzmann_fit(energies: Sequence[float], populations: Sequence[float], j: Sequence[int],
                  weights: Sequence[float] | None = None) -> BoltzmannFit:
    """Weighted least-squares slope of ln(p_J / (2J + 1)) against E_J.

    A non-negative slope (no thermal decay with energy) gives an infinite
    temperature and ``thermal`` False, as does an RMS residual above
    :data:`THERMAL_RESIDUAL`.
    """
    e = np.asarray(energies, dtype=float)
    p = np.asarray(populations, dtype=float)
    jj = np.asarray(j, dtype=float)
    ok = p > 0
    if ok.sum() < 3:
        raise ValueError("need at least three levels with positive weight")
    y = np.log(p[ok] / (2 * jj[ok] + 1))
    x = e[ok]
    w = np.ones(ok.sum()) if weights is None else np.asarray(weights, dtype=float)[ok]
    slope, intercept = np.polyfit(x, y, 1, w=np.sqrt(w))
    resid = float(np.sqrt(np.average((y - (slope * x + intercept)) ** 2, weights=w)))
    if slope >= 0:
        return BoltzmannFit(math.inf, resid, False)
    return BoltzmannFit(-1.0 / (K_B * slope), resid, resid <= THERMAL_RESIDUAL)


@dataclass(frozen=True)
class TwoRateFit:
    fast: float
    slow: float
    fast_fraction: float
    residual: float

    @property
    def ratio(self) -> float:
        return self.fast / self.slow if self.slow > 0 else math.inf


def fit_two_exponentials(t: np.ndarray, y: np.ndarray) -> TwoRateFit:
    """Fit y = a exp(-k1 t) + (1 - a) exp(-k2 t) with k1 >= k2."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    span = t[-1] - t[0]

    def f(x, a, lk1, lk2):
        return a * np.exp(-np.exp(lk1) * x) + (1 - a) * np.exp(-np.exp(lk2) * x)

    p0 = (max(0.01, 1 - y[len(y) // 4]), math.log(20.0 / span), math.log(0.5 / span))
    popt, _ = curve_fit(f, t, y, p0=p0, bounds=([0.0, -50, -50], [1.0, 50, 50]), maxfev=20000)
    a, k1, k2 = popt[0], math.exp(popt[1]), math.exp(popt[2])
    if k2 > k1:
        a, k1, k2 = 1 - a, k2, k1
    resid = float(np.sqrt(np.mean((f(t, *popt) - y) ** 2)))
    return TwoRateFit(k1, k2, a, resid)
