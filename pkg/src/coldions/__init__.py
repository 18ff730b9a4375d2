"""Simulation and analysis of cold multi-species ion ensembles in linear rf traps."""

from . import presets
from .trapmodel import (
    IonSpecies,
    NeutralGas,
    PlasmaEstimate,
    Role,
    SpeciesRateRow,
    TrapConfig,
)

__all__ = [
    "IonSpecies",
    "NeutralGas",
    "PlasmaEstimate",
    "Role",
    "SpeciesRateRow",
    "TrapConfig",
    "presets",
]

__version__ = "0.1.0"
