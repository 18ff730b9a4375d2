"""Species-selective removal and destructive extraction protocols."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ..trapmodel import principal_frequencies, secular_frequencies
from .engine import (
    NO_COOLING,
    NO_HEATING,
    ExcitationDrive,
    ForceConfig,
    HeatingModel,
    LaserCooling,
    evolve,
)
from .state import EnsembleState

#: Relative half-width within which a drive is considered resonant with a species.
RESONANCE_TOLERANCE = 0.05


@dataclass(frozen=True)
class EscapeEvent:
    ion: int
    species: str
    time: float
    v_rf: float


@dataclass(frozen=True)
class RemovalReport:
    before: dict
    after: dict

    @property
    def removed(self) -> dict:
        return {k: self.before[k] - self.after.get(k, 0) for k in self.before}

    def retained_fraction(self, species: str) -> float:
        b = self.before.get(species, 0)
        return self.after.get(species, 0) / b if b else 1.0

    @property
    def removed_species(self) -> list[str]:
        return [k for k, v in self.removed.items() if v > 0 and self.after.get(k, 0) == 0]


def ramp_extraction(
    state: EnsembleState,
    config: ForceConfig,
    ramp: tuple[float, float, float],
    v_offset: float,
    cooling: LaserCooling = NO_COOLING,
    heating: HeatingModel = NO_HEATING,
    segments: int = 200,
) -> list[EscapeEvent]:
    """Lower V_RF linearly from ``ramp[0]`` to ``ramp[1]`` over ``ramp[2]`` seconds.

    A static offset ``v_offset`` makes one radial direction unstable once the
    rf confinement is weak enough; ions whose radial excursion exceeds r0 are
    logged with the V_RF at their escape time. The ramp is applied as
    ``segments`` constant-voltage steps. Returns the log sorted by time.
    """
    v_start, v_end, duration = ramp
    if v_end > v_start:
        raise ValueError("ramp must be monotonically decreasing")
    if not duration > 0:
        raise ValueError("ramp duration must be positive")
    if v_offset == 0:
        raise ValueError("ramp extraction needs a non-zero offset potential")
    t0 = state.time
    seg = duration / segments
    was_alive = state.alive.copy()
    for k in range(segments):
        v = v_start + (v_end - v_start) * (k + 0.5) / segments
        cfg = replace(config, trap=config.trap.replace(v_rf=v, v_offset=v_offset))
        evolve(state, cfg, cooling, heating, duration=seg)
        if not state.alive.any():
            break
    log = []
    for i in np.flatnonzero(was_alive & ~state.alive):
        t = state.death_time[i]
        frac = min(max((t - t0) / duration, 0.0), 1.0)
        log.append(EscapeEvent(int(i), state.species_of(i).name, float(t), v_start + (v_end - v_start) * frac))
    log.sort(key=lambda e: (e.time, e.ion))
    return log


def eject_heavy(
    state: EnsembleState,
    config: ForceConfig,
    v_dc: float,
    duration: float,
    cooling: LaserCooling = NO_COOLING,
    heating: HeatingModel = NO_HEATING,
) -> RemovalReport:
    """Apply a static quadrupole ``v_dc`` for ``duration`` and report losses.

    Species whose y confinement turns negative (mass-to-charge above the
    threshold for this ``v_dc``) leave the trap along y.
    """
    before = state.counts()
    cfg = replace(config, trap=config.trap.replace(v_dc=v_dc))
    evolve(state, cfg, cooling, heating, duration=duration)
    return RemovalReport(before, state.counts())


def unstable_species(config: ForceConfig, state: EnsembleState, v_dc: float) -> list[str]:
    """Species with a deconfined radial direction for static quadrupole ``v_dc``."""
    trap = config.trap.replace(v_dc=v_dc)
    out = []
    for k in np.unique(state.species_index[state.alive]):
        sp = state.species_table[k]
        if not all(math.isfinite(w) for w in principal_frequencies(trap, sp)[:2]):
            out.append(sp.name)
    return out


def eject_light(
    state: EnsembleState,
    config: ForceConfig,
    target_species: str,
    amplitude: float,
    duration: float,
    cooling_off: bool = True,
    cooling: LaserCooling = NO_COOLING,
    heating: HeatingModel = NO_HEATING,
    direction: Sequence[float] = (1.0, 0.0, 0.0),
    frequency: float | None = None,
) -> RemovalReport:
    """Resonantly drive ``target_species`` at its single-particle radial frequency.

    With ``cooling_off`` the laser cooling is disabled for the duration (the
    ensemble should be in its gas state). Warns when the drive lies within
    :data:`RESONANCE_TOLERANCE` of another species' radial frequency.
    """
    sp = state.species_table[state.species_id(target_species)]
    if frequency is None:
        frequency = secular_frequencies(config.trap, sp).omega_r / (2 * math.pi)
    for k in np.unique(state.species_index[state.alive]):
        other = state.species_table[k]
        if other.name == target_species:
            continue
        f = secular_frequencies(config.trap, other).omega_r / (2 * math.pi)
        if abs(f - frequency) <= RESONANCE_TOLERANCE * f:
            warnings.warn(
                f"drive at {frequency:.6g} Hz is within the linewidth of {other.name} ({f:.6g} Hz)",
                stacklevel=2,
            )
    before = state.counts()
    drive = ExcitationDrive(amplitude, frequency, tuple(direction), start_time=state.time)
    cfg = replace(config, drive=drive)
    evolve(state, cfg, NO_COOLING if cooling_off else cooling, heating, duration=duration)
    return RemovalReport(before, state.counts())
