"""Molecular-dynamics engine for ion ensembles in linear rf traps."""

from .engine import (
    NO_COOLING,
    NO_HEATING,
    CallbackObserver,
    ExcitationDrive,
    ForceConfig,
    HeatingModel,
    IntegrationError,
    LaserCooling,
    Observer,
    Snapshot,
    TemperatureLog,
    TrajectoryRecorder,
    evolve,
    instantaneous_temperature,
    kick_ion,
    kinetic_energy,
    potential_energy,
    secular_temperature,
    snapshot,
    step,
    thermostat_heating,
)
from .state import EnsembleState, IonState, cold_spheroid, init_ensemble

__all__ = [
    "NO_COOLING",
    "NO_HEATING",
    "CallbackObserver",
    "EnsembleState",
    "ExcitationDrive",
    "ForceConfig",
    "HeatingModel",
    "IntegrationError",
    "IonState",
    "LaserCooling",
    "Observer",
    "Snapshot",
    "TemperatureLog",
    "TrajectoryRecorder",
    "cold_spheroid",
    "evolve",
    "init_ensemble",
    "instantaneous_temperature",
    "kick_ion",
    "kinetic_energy",
    "potential_energy",
    "secular_temperature",
    "snapshot",
    "step",
    "thermostat_heating",
]

from .protocols import (  # noqa: E402
    EscapeEvent,
    RemovalReport,
    eject_heavy,
    eject_light,
    ramp_extraction,
    unstable_species,
)

__all__ += ["EscapeEvent", "RemovalReport", "eject_heavy", "eject_light", "ramp_extraction", "unstable_species"]
