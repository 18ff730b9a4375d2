"""Ensemble state and its initialization."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import brentq

from ..constants import EPSILON_0, K_B
from ..trapmodel import IonSpecies, TrapConfig, principal_frequencies

#: Ions farther than this multiple of the initial crystal half-length are lost.
Z_LIMIT_FACTOR = 5.0


@dataclass(frozen=True)
class IonState:
    """Read-only view of a single ion."""

    position: np.ndarray
    velocity: np.ndarray
    species_index: int
    alive: bool


@dataclass
class EnsembleState:
    """Mutable ensemble evolved by the integrator.

    Lost ions keep their slot (``alive`` False, position NaN) so that ion ids
    stay stable across a run.
    """

    positions: np.ndarray
    velocities: np.ndarray
    species_index: np.ndarray
    species_table: list[IonSpecies]
    rng: np.random.Generator
    time: float = 0.0
    alive: np.ndarray = None
    death_time: np.ndarray = None
    z_limit: float = math.inf

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=float)
        self.velocities = np.ascontiguousarray(self.velocities, dtype=float)
        self.species_index = np.ascontiguousarray(self.species_index, dtype=np.int64)
        n = len(self.positions)
        if n == 0:
            raise ValueError("ensemble must contain at least one ion")
        if self.positions.shape != (n, 3) or self.velocities.shape != (n, 3):
            raise ValueError("positions and velocities must have shape (N, 3)")
        if self.alive is None:
            self.alive = np.ones(n, dtype=bool)
        if self.death_time is None:
            self.death_time = np.full(n, np.nan)
        if self.species_index.min() < 0 or self.species_index.max() >= len(self.species_table):
            raise ValueError("species index out of range")

    def __len__(self):
        return len(self.positions)

    @property
    def n_alive(self) -> int:
        return int(self.alive.sum())

    @property
    def ions(self) -> list[IonState]:
        return [
            IonState(self.positions[i].copy(), self.velocities[i].copy(), int(self.species_index[i]), bool(self.alive[i]))
            for i in range(len(self))
        ]

    def species_of(self, i: int) -> IonSpecies:
        return self.species_table[self.species_index[i]]

    def species_id(self, name: str) -> int:
        for k, sp in enumerate(self.species_table):
            if sp.name == name:
                return k
        raise KeyError(f"species {name!r} not in the ensemble")

    def add_species(self, species: IonSpecies) -> int:
        """Index of ``species`` in the table, appending it if needed."""
        for k, sp in enumerate(self.species_table):
            if sp.name == species.name:
                if sp != species:
                    raise ValueError(f"species {species.name!r} already defined differently")
                return k
        self.species_table.append(species)
        return len(self.species_table) - 1

    def per_ion(self, attr: str) -> np.ndarray:
        values = np.array([getattr(sp, attr) for sp in self.species_table], dtype=float)
        return values[self.species_index]

    @property
    def masses(self) -> np.ndarray:
        return self.per_ion("mass")

    @property
    def charges(self) -> np.ndarray:
        return self.per_ion("charge")

    def counts(self) -> dict[str, int]:
        out = {}
        for k, sp in enumerate(self.species_table):
            out[sp.name] = int(np.count_nonzero(self.alive & (self.species_index == k)))
        return out

    def mark_lost(self, idx, time: float) -> None:
        idx = np.atleast_1d(idx)
        self.alive[idx] = False
        self.death_time[idx] = time
        self.positions[idx] = np.nan
        self.velocities[idx] = np.nan

    def copy(self) -> "EnsembleState":
        rng = np.random.Generator(type(self.rng.bit_generator)())
        rng.bit_generator.state = self.rng.bit_generator.state
        return EnsembleState(
            self.positions.copy(), self.velocities.copy(), self.species_index.copy(),
            list(self.species_table), rng, self.time, self.alive.copy(), self.death_time.copy(),
            self.z_limit,
        )


def _prolate_nz(alpha: float) -> float:
    """Axial depolarization factor of a uniformly charged spheroid with aspect Z/R."""
    if abs(alpha - 1.0) < 1e-9:
        return 1.0 / 3.0
    if alpha > 1.0:
        e = math.sqrt(1.0 - 1.0 / alpha**2)
        return (1.0 - e**2) / e**3 * (math.atanh(e) - e)
    e = math.sqrt(1.0 / alpha**2 - 1.0)
    return (1.0 + e**2) / e**3 * (e - math.atan(e))


def spheroid_aspect(omega_r: float, omega_z: float) -> float:
    """Aspect ratio Z/R of a cold uniform plasma with the given trap frequencies."""
    if omega_z <= 0:
        return math.inf
    target = omega_z**2 / omega_r**2

    def f(log_alpha):
        nz = _prolate_nz(math.exp(log_alpha))
        return 2.0 * nz / (1.0 - nz) - target

    return math.exp(brentq(f, -12.0, 12.0, xtol=1e-14))


@dataclass(frozen=True)
class Spheroid:
    radius: float
    half_length: float
    density: float


def cold_spheroid(trap: TrapConfig, species: IonSpecies, count: int) -> Spheroid:
    """Zero-temperature spheroid holding ``count`` ions of ``species``."""
    wx, wy, wz = principal_frequencies(trap, species)
    if not (math.isfinite(wx) and math.isfinite(wy)):
        raise ValueError(f"{species.name} is not radially confined")
    wr2 = 0.5 * (wx**2 + wy**2)
    wz2 = wz**2 if math.isfinite(wz) else 0.0
    density = EPSILON_0 * species.mass * (wz2 + 2.0 * wr2) / species.charge**2
    volume = count / density
    alpha = spheroid_aspect(math.sqrt(wr2), math.sqrt(wz2))
    if not math.isfinite(alpha):
        raise ValueError("no axial confinement: spheroid undefined")
    radius = (3.0 * volume / (4.0 * math.pi * alpha)) ** (1.0 / 3.0)
    return Spheroid(radius, alpha * radius, density)


def init_ensemble(
    counts: Mapping[IonSpecies, int] | Sequence[tuple[IonSpecies, int]],
    trap: TrapConfig,
    seed: int,
    initial_temperature: float = 0.0,
) -> EnsembleState:
    """Ions placed uniformly in the cold spheroid, Maxwell-Boltzmann velocities.

    The spheroid volume is the sum of the per-species cold volumes and its
    aspect ratio is that of the most numerous species. Species order (and the
    order of ions) follows ``counts``.
    """
    items = list(counts.items()) if isinstance(counts, Mapping) else list(counts)
    if any(n < 0 for _, n in items):
        raise ValueError("counts must be >= 0")
    total = sum(n for _, n in items)
    if total < 1:
        raise ValueError("ensemble must contain at least one ion")
    if initial_temperature < 0:
        raise ValueError("initial_temperature must be >= 0")
    rng = np.random.default_rng(seed)
    table = [sp for sp, _ in items]
    idx = np.concatenate([np.full(n, k, dtype=np.int64) for k, (_, n) in enumerate(items)])

    volume = 0.0
    for sp, n in items:
        if n:
            volume += n / cold_spheroid(trap, sp, 1).density
    main = max(items, key=lambda it: it[1])[0]
    shape = cold_spheroid(trap, main, 1)
    alpha = shape.half_length / shape.radius
    radius = (3.0 * volume / (4.0 * math.pi * alpha)) ** (1.0 / 3.0)
    half = alpha * radius

    # uniform in the unit ball, then stretched
    u = rng.standard_normal((total, 3))
    u /= np.linalg.norm(u, axis=1)[:, None]
    u *= rng.random(total)[:, None] ** (1.0 / 3.0)
    pos = u * np.array([radius, radius, half])

    masses = np.array([sp.mass for sp in table])[idx]
    vel = rng.standard_normal((total, 3)) * np.sqrt(K_B * initial_temperature / masses)[:, None]
    return EnsembleState(pos, vel, idx, table, rng, 0.0, z_limit=Z_LIMIT_FACTOR * half)
