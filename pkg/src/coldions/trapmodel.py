"""Closed-form trap and plasma calculators for linear rf traps.

All quantities are SI. Heating and cooling rates are expressed in "K/s",
i.e. an energy rate divided by k_B, which is the unit used for the rate
tables of multi-species ensembles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import NamedTuple, Sequence

from .constants import AMU, E_CHARGE, EPSILON_0, K_B, K_COULOMB, M_ELECTRON

#: Single-ion stability limit on the Mathieu q parameter.
Q_STABILITY_LIMIT = 0.9
#: Coupling parameter at which an infinite one-component plasma crystallizes.
GAMMA_CRYSTAL = 170.0


class RadialDeconfinement(ValueError):
    """The endcap field overwhelms the radial pseudopotential."""


@dataclass(frozen=True)
class TrapConfig:
    """Linear rf trap geometry and drive.

    ``v_offset`` is the static part V0 of the electrode voltage
    ``V0 - V_RF cos(Omega t)``; ``v_dc`` is an additional static quadrupole
    applied with the same electrode geometry. Both deform the radial
    potential along x (confining for positive Q*V) and y (deconfining).
    """

    r0: float
    kappa: float
    omega_rf: float
    v_rf: float
    v_ec: float = 0.0
    v_dc: float = 0.0
    v_offset: float = 0.0

    def __post_init__(self):
        if not self.r0 > 0:
            raise ValueError(f"r0 must be positive, got {self.r0}")
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not self.omega_rf > 0:
            raise ValueError(f"omega_rf must be positive, got {self.omega_rf}")
        for name in ("v_rf", "v_ec", "v_dc", "v_offset"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def v_static(self) -> float:
        return self.v_offset + self.v_dc

    @property
    def rf_period(self) -> float:
        return 2.0 * math.pi / self.omega_rf

    def replace(self, **changes) -> "TrapConfig":
        return replace(self, **changes)


class Role(str, Enum):
    LASER_COOLED = "laser_cooled"
    SYMPATHETIC = "sympathetic"


@dataclass(frozen=True)
class IonSpecies:
    """An ion species. ``beta`` is the laser friction coefficient in kg/s."""

    name: str
    mass: float
    charge: float
    role: Role = Role.SYMPATHETIC
    beta: float = 0.0
    light_pressure: float = 0.0

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError(f"{self.name}: mass must be positive")
        if self.charge == 0:
            raise ValueError(f"{self.name}: charge must be non-zero")
        ne = self.charge / E_CHARGE
        if abs(ne - round(ne)) > 1e-6:
            raise ValueError(f"{self.name}: charge must be an integer multiple of e")
        if self.beta < 0:
            raise ValueError(f"{self.name}: beta must be >= 0")
        object.__setattr__(self, "role", Role(self.role))

    @classmethod
    def from_amu(
        cls,
        name: str,
        mass_u: float,
        charge_e: int = 1,
        role: Role | str = Role.SYMPATHETIC,
        beta_over_m: float = 0.0,
        light_pressure: float = 0.0,
        atomic: bool = True,
    ) -> "IonSpecies":
        """Build a species from a neutral mass in u.

        With ``atomic=True`` the mass of the removed electrons is subtracted
        so that ``mass_u`` can be a tabulated atomic/molecular mass.
        """
        mass = mass_u * AMU - (charge_e * M_ELECTRON if atomic else 0.0)
        return cls(name, mass, charge_e * E_CHARGE, Role(role), beta_over_m * mass, light_pressure)

    @property
    def charge_number(self) -> int:
        return int(round(self.charge / E_CHARGE))

    @property
    def mass_u(self) -> float:
        return self.mass / AMU

    @property
    def mass_to_charge(self) -> float:
        return self.mass / self.charge

    @property
    def beta_over_m(self) -> float:
        return self.beta / self.mass

    @property
    def is_laser_cooled(self) -> bool:
        return self.role is Role.LASER_COOLED

    def replace(self, **changes) -> "IonSpecies":
        return replace(self, **changes)


@dataclass(frozen=True)
class NeutralGas:
    """Neutral collision/reaction partner.

    Both polarizability conventions are kept: ``polarizability_si``
    (C m^2/V) enters the collision rates, ``polarizability_volume`` (m^3)
    enters the Langevin capture rate.
    """

    name: str
    mass: float
    polarizability_volume: float
    pressure: float = 0.0
    temperature: float = 300.0
    polarizability_si: float = field(init=False)

    def __post_init__(self):
        if not self.polarizability_volume > 0:
            raise ValueError(f"{self.name}: polarizability must be positive")
        if self.pressure < 0:
            raise ValueError(f"{self.name}: pressure must be >= 0")
        if not self.temperature > 0:
            raise ValueError(f"{self.name}: temperature must be positive")
        object.__setattr__(
            self, "polarizability_si", 4.0 * math.pi * EPSILON_0 * self.polarizability_volume
        )

    @property
    def number_density(self) -> float:
        return self.pressure / (K_B * self.temperature)

    def with_pressure(self, pressure: float) -> "NeutralGas":
        return replace(self, pressure=pressure)


@dataclass(frozen=True)
class PlasmaEstimate:
    density: float
    spacing: float
    gamma: float
    t_crystal: float


@dataclass(frozen=True)
class SpeciesRateRow:
    species: IonSpecies
    count: int
    temperature: float
    cooling_rate: float
    heating_rate: float

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("count must be >= 0")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


class SecularFrequencies(NamedTuple):
    omega0: float
    omega_r: float
    omega_z: float


class CollisionRates(NamedTuple):
    h_coll: float  # K/s per ion
    gamma_elastic: float  # 1/s per ion
    mean_transfer: float  # K per collision


class EnergyBalance(NamedTuple):
    residual: float  # K/s summed over ions
    lc_temperature_predicted: float  # K
    gross_cooling: float  # |c_LC| N_LC in K/s


# --------------------------------------------------------------------------
# single-particle trap quantities
# --------------------------------------------------------------------------

def mathieu_q(trap: TrapConfig, species: IonSpecies) -> float:
    return 2.0 * species.charge * trap.v_rf / (species.mass * trap.omega_rf**2 * trap.r0**2)


def is_stable(trap: TrapConfig, species: IonSpecies) -> bool:
    return abs(mathieu_q(trap, species)) < Q_STABILITY_LIMIT


def secular_frequencies(trap: TrapConfig, species: IonSpecies) -> SecularFrequencies:
    """Pseudopotential frequencies (rad/s) ignoring static quadrupoles."""
    q, m = species.charge, species.mass
    omega0 = q * trap.v_rf / (math.sqrt(2.0) * m * trap.omega_rf * trap.r0**2)
    omega_z_sq = 2.0 * trap.kappa * q * trap.v_ec / m
    if omega_z_sq < 0:
        raise ValueError(f"{species.name}: endcap voltage is axially deconfining")
    radial_sq = omega0**2 - omega_z_sq / 2.0
    if radial_sq <= 0:
        raise RadialDeconfinement(f"{species.name}: radially deconfined (omega0^2 - omega_z^2/2 <= 0)")
    return SecularFrequencies(abs(omega0), math.sqrt(radial_sq), math.sqrt(omega_z_sq))


def principal_frequencies(trap: TrapConfig, species: IonSpecies) -> tuple[float, float, float]:
    """(omega_x, omega_y, omega_z) including the static quadrupole.

    Returns ``nan`` for an unconfined direction.
    """
    q, m = species.charge, species.mass
    k0 = q**2 * trap.v_rf**2 / (2.0 * m * trap.omega_rf**2 * trap.r0**4)
    kec = q * trap.kappa * trap.v_ec
    ks = q * trap.v_static / trap.r0**2
    out = []
    for k in (k0 - kec + ks, k0 - kec - ks, 2.0 * kec):
        out.append(math.sqrt(k / m) if k > 0 else math.nan)
    return tuple(out)


def calibrate_v_rf(trap: TrapConfig, species: IonSpecies, omega_r: float) -> TrapConfig:
    """Return ``trap`` with V_RF set so that ``species`` has radial frequency ``omega_r``."""
    omega_z_sq = 2.0 * trap.kappa * species.charge * trap.v_ec / species.mass
    omega0 = math.sqrt(omega_r**2 + omega_z_sq / 2.0)
    v_rf = omega0 * math.sqrt(2.0) * species.mass * trap.omega_rf * trap.r0**2 / species.charge
    return trap.replace(v_rf=v_rf)


def calibrate_v_ec(trap: TrapConfig, species: IonSpecies, omega_z: float) -> TrapConfig:
    v_ec = omega_z**2 * species.mass / (2.0 * trap.kappa * species.charge)
    return trap.replace(v_ec=v_ec)


def dc_ejection_threshold(trap: TrapConfig, species: IonSpecies) -> float:
    """Static quadrupole voltage V_s at which motion along y becomes unbound.

    Heavier (larger m/Q) species have a lower threshold.
    """
    radial = secular_frequencies(trap.replace(v_dc=0.0, v_offset=0.0), species).omega_r
    return species.mass * trap.r0**2 * radial**2 / species.charge


# --------------------------------------------------------------------------
# plasma
# --------------------------------------------------------------------------

def plasma_estimate(trap: TrapConfig, species: IonSpecies, temperature: float) -> PlasmaEstimate:
    """Zero-temperature density, spacing and coupling parameter.

    The density is the number density n = eps0 V_RF^2 / (m Omega^2 r0^4),
    i.e. 2 eps0 m omega0^2 / Q^2 for a singly charged ion.
    """
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    q, m = species.charge, species.mass
    # the 1/Q^2 * Q^2 form keeps multiply charged species on the same footing:
    # n = 2 eps0 m omega0^2 / Q^2 reduces to the expression above for any Q
    density = EPSILON_0 * trap.v_rf**2 / (m * trap.omega_rf**2 * trap.r0**4)
    spacing = density ** (-1.0 / 3.0)
    coulomb_k = q**2 * K_COULOMB / spacing / K_B
    return PlasmaEstimate(density, spacing, coulomb_k / temperature, coulomb_k / GAMMA_CRYSTAL)


def temperature_for_gamma(trap: TrapConfig, species: IonSpecies, gamma: float) -> float:
    est = plasma_estimate(trap, species, 1.0)
    return est.gamma / gamma


def radius_ratio(inner: IonSpecies, outer: IonSpecies) -> float:
    """r1/r2 for the lower-m/Q (inner) and higher-m/Q (outer) sub-ensembles."""
    if inner.mass_to_charge > outer.mass_to_charge * (1 + 1e-12):
        raise ValueError("inner species must have the lower mass-to-charge ratio")
    return math.sqrt(outer.charge * inner.mass / (inner.charge * outer.mass))


# --------------------------------------------------------------------------
# collisions and reactions
# --------------------------------------------------------------------------

def reduced_mass(m1: float, m2: float) -> float:
    return m1 * m2 / (m1 + m2)


def collision_rates(ion: IonSpecies, ion_temperature: float, gas: NeutralGas) -> CollisionRates:
    """Polarization-potential collision heating and momentum-transfer rates.

    Uses the SI polarizability. ``h_coll`` is in K/s per ion and changes sign
    with (T_n - T_c).
    """
    mu = reduced_mass(gas.mass, ion.mass)
    n_n = gas.number_density
    alpha = gas.polarizability_si
    e = abs(ion.charge)
    gamma = 2.21 / 4.0 * e / EPSILON_0 * n_n * math.sqrt(alpha / mu)
    # h_coll = (3 * 2.21/4) e k_B/eps0 n_n sqrt(alpha mu) dT/(m_n + m_c), which
    # factors exactly into gamma times the mean energy transfer per collision
    mean = 2.0 * mu / (gas.mass + ion.mass) * 1.5 * (gas.temperature - ion_temperature)
    h = gamma * mean
    return CollisionRates(h, gamma, mean)


def langevin_rate(ion: IonSpecies, gas: NeutralGas) -> float:
    """Langevin capture rate coefficient (m^3/s), using the polarizability volume."""
    mu = reduced_mass(gas.mass, ion.mass)
    return abs(ion.charge) * math.sqrt(math.pi * gas.polarizability_volume / (EPSILON_0 * mu))


# --------------------------------------------------------------------------
# heating / cooling bookkeeping
# --------------------------------------------------------------------------

def cooling_rate(species: IonSpecies, temperature: float) -> float:
    """Laser-cooling energy rate in K/s per ion (negative)."""
    return -species.beta_over_m * temperature


def equilibrium_temperature(species: IonSpecies, heating_rate: float) -> float:
    """Temperature at which laser cooling balances ``heating_rate`` (K/s)."""
    if species.beta <= 0:
        if heating_rate > 0:
            return math.inf
        return 0.0
    return heating_rate / species.beta_over_m


def common_heating_rate(beta_over_m: float, t_lc0: float, n_lc0: int, n_sc2_0: int) -> float:
    """Heating rate shared by the coolant and its co-trapped isotopes (K/s)."""
    return beta_over_m * t_lc0 * n_lc0 / (n_lc0 + n_sc2_0)


def energy_balance(rows: Sequence[SpeciesRateRow]) -> EnergyBalance:
    """Residual of the steady-state energy balance and the implied coolant temperature.

    The cooling rate of the laser-cooled row is recomputed from its
    temperature and beta; ``cooling_rate`` fields of other rows are ignored
    (they are zero by definition). Rows other than the coolant are treated as
    sympathetically cooled species; when one of them shares the coolant's
    heating rate it plays the role of the co-trapped isotope group.
    """
    lc = [r for r in rows if r.species.is_laser_cooled]
    if len(lc) != 1:
        raise ValueError(f"exactly one laser-cooled row required, got {len(lc)}")
    lc_row = lc[0]
    residual = 0.0
    for r in rows:
        c = cooling_rate(r.species, r.temperature) if r is lc_row else 0.0
        residual += (c + r.heating_rate) * r.count
    if lc_row.count == 0 or lc_row.species.beta <= 0:
        t_pred = math.inf
    else:
        total_heating = sum(r.heating_rate * r.count for r in rows)
        t_pred = total_heating / lc_row.count / lc_row.species.beta_over_m
    gross = abs(cooling_rate(lc_row.species, lc_row.temperature)) * lc_row.count
    return EnergyBalance(residual, t_pred, gross)
