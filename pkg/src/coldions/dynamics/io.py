"""CSV output of temperature logs and ensemble snapshots."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..csvio import write_csv
from .engine import Snapshot, TemperatureLog
from .state import EnsembleState

TEMPERATURE_HEADER = ("t_s", "species", "N", "T_mK", "E_kin_J", "E_pot_J")
SNAPSHOT_HEADER = ("id", "species", "x_m", "y_m", "z_m", "vx", "vy", "vz")


def temperature_rows(log: TemperatureLog):
    for t, name, n, temp, ke, pe in log.rows:
        yield (float(t), name, int(n), float(temp) * 1e3, float(ke), float(pe))


def write_temperature_log(path: str | Path, log: TemperatureLog) -> Path:
    return write_csv(path, TEMPERATURE_HEADER, temperature_rows(log))


def snapshot_rows(obj: EnsembleState | Snapshot):
    table = obj.species_table
    for i in np.flatnonzero(obj.alive):
        p = obj.positions[i]
        v = obj.velocities[i]
        yield (int(i), table[obj.species_index[i]].name, *map(float, p), *map(float, v))


def write_snapshot(path: str | Path, obj: EnsembleState | Snapshot) -> Path:
    return write_csv(path, SNAPSHOT_HEADER, snapshot_rows(obj))
