"""Named trap, ion and neutral-gas presets shipped in ``data/presets.ini``."""

from __future__ import annotations

import math
from functools import lru_cache
from importlib import resources

from .constants import AMU, ANGSTROM3
from .inifile import ConfigError, Section, parse_text
from .trapmodel import IonSpecies, NeutralGas, Role, TrapConfig

TRAP_KEYS = ("r0", "kappa", "rf_frequency", "v_rf", "v_ec", "v_dc", "v_offset")


@lru_cache(maxsize=1)
def _sections() -> dict[str, Section]:
    text = resources.files("coldions").joinpath("data/presets.ini").read_text()
    return {s.name: s for s in parse_text(text)}


def _section(kind: str, name: str) -> Section:
    sec = _sections().get(f"{kind}.{name}")
    if sec is None:
        raise KeyError(f"unknown {kind} preset {name!r}; known: {', '.join(names(kind))}")
    return sec


def names(kind: str) -> list[str]:
    prefix = kind + "."
    return [k[len(prefix):] for k in _sections() if k.startswith(prefix)]


def trap_from_section(sec: Section, base: TrapConfig | None = None) -> TrapConfig:
    """Build a TrapConfig from ``sec`` (keys in :data:`TRAP_KEYS`), starting from ``base``."""
    values = {}
    if base is not None:
        values = dict(
            r0=base.r0, kappa=base.kappa, rf_frequency=base.omega_rf / (2 * math.pi),
            v_rf=base.v_rf, v_ec=base.v_ec, v_dc=base.v_dc, v_offset=base.v_offset,
        )
    for key in TRAP_KEYS:
        v = sec.float(key)
        if v is not None:
            values[key] = v
    missing = [k for k in ("r0", "kappa", "rf_frequency", "v_rf") if k not in values]
    if missing:
        raise ConfigError(f"[{sec.name}] missing {', '.join(missing)}", sec.line)
    freq = values.pop("rf_frequency")
    return TrapConfig(omega_rf=2 * math.pi * freq, **values)


def species_from_section(sec: Section, name: str) -> IonSpecies:
    base = None
    preset = sec.get("preset")
    if preset is not None:
        base = species(preset)
    mass_u = sec.float("mass_u")
    if mass_u is None and base is None:
        raise ConfigError(f"[{sec.name}] needs mass_u or preset", sec.line)
    charge = sec.int("charge", base.charge_number if base else 1)
    role = sec.get("role", base.role.value if base else Role.SYMPATHETIC.value)
    try:
        role = Role(role)
    except ValueError:
        raise ConfigError(f"unknown role {role!r}", sec.entry("role").line) from None
    if mass_u is not None:
        sp = IonSpecies.from_amu(name, mass_u, charge, role)
    else:
        sp = base.replace(name=name, role=role)
        if charge != base.charge_number:
            raise ConfigError(f"[{sec.name}] charge override requires mass_u", sec.line)
    beta_over_m = sec.float("beta_over_m", base.beta_over_m if base else 0.0)
    if role is not Role.LASER_COOLED:
        beta_over_m = 0.0
    v_eq = sec.float("light_pressure_v_eq", 0.0)
    beta = beta_over_m * sp.mass
    light = sec.float("light_pressure", beta * v_eq)
    return sp.replace(beta=beta, light_pressure=light)


def species(name: str, role: Role | str | None = None, beta_over_m: float | None = None) -> IonSpecies:
    """Preset ion species. ``role``/``beta_over_m`` override the preset values."""
    sec = _section("species", name)
    sp = species_from_section(sec, name)
    if role is not None:
        sp = sp.replace(role=Role(role))
        if sp.role is not Role.LASER_COOLED:
            sp = sp.replace(beta=0.0, light_pressure=0.0)
    if beta_over_m is not None:
        sp = sp.replace(beta=beta_over_m * sp.mass)
    return sp


def gas(name: str, pressure: float = 0.0, temperature: float = 300.0) -> NeutralGas:
    """Preset neutral gas at ``pressure`` (Pa) and ``temperature`` (K)."""
    sec = _section("gas", name)
    return NeutralGas(
        name,
        sec.float("mass_u") * AMU,
        sec.float("polarizability_a3") * ANGSTROM3,
        pressure,
        temperature,
    )


def trap(name: str, **overrides) -> TrapConfig:
    """Preset trap; keyword overrides use TrapConfig field names."""
    cfg = trap_from_section(_section("trap", name))
    return cfg.replace(**overrides) if overrides else cfg
