"""Stochastic ion-neutral and photon-driven reactions that change ion species in place."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

from . import presets
from .constants import AMU, C_LIGHT, H_PLANCK, K_B
from .csvio import write_csv
from .dynamics import ForceConfig, HeatingModel, LaserCooling, NO_HEATING, evolve
from .dynamics.state import EnsembleState
from .trapmodel import IonSpecies, NeutralGas, langevin_rate

#: Warn when a single bin fires with more than this probability.
MAX_BIN_PROBABILITY = 0.1

# neutral byproduct masses (u)
M_H = 1.00782503
M_D = 2.01410178
M_H2 = 2 * M_H
M_HD = M_H + M_D
M_CO = 27.99491462
M_AR = 39.9623831


@dataclass(frozen=True)
class NeutralTrigger:
    gas: NeutralGas


@dataclass(frozen=True)
class PhotonTrigger:
    intensity: float  # W/m^2
    cross_section: float  # m^2
    wavelength: float  # m

    @property
    def photon_flux(self) -> float:
        return self.intensity / (H_PLANCK * C_LIGHT / self.wavelength)


@dataclass(frozen=True)
class Branch:
    """One product channel: ion product (None destroys the ion) and the neutral byproduct mass (kg)."""

    product: IonSpecies | None
    fraction: float
    neutral_mass: float = 0.0


@dataclass(frozen=True)
class ReactionChannel:
    """Reactant ion + trigger -> branches.

    ``rate_model`` is "langevin" or a fixed rate coefficient k (m^3/s) for
    neutral triggers; photon triggers use the cross section. ``gate`` is the
    fraction of reactant ions in the reactive (e.g. excited) state.
    ``exothermicity`` (J) is released into the product ion and neutral.
    """

    name: str
    reactant: IonSpecies
    trigger: NeutralTrigger | PhotonTrigger
    branches: tuple[Branch, ...]
    rate_model: str | float = "langevin"
    gate: float = 1.0
    exothermicity: float = 0.0

    def __post_init__(self):
        total = sum(b.fraction for b in self.branches)
        if not self.branches or abs(total - 1.0) > 1e-9:
            raise ValueError(f"{self.name}: branching fractions must sum to 1, got {total}")
        if any(b.fraction < 0 for b in self.branches):
            raise ValueError(f"{self.name}: negative branching fraction")
        if not 0.0 <= self.gate <= 1.0:
            raise ValueError(f"{self.name}: gate must be in [0, 1]")
        if not isinstance(self.rate_model, str) and not self.rate_model > 0:
            raise ValueError(f"{self.name}: fixed rate coefficient must be positive")
        if isinstance(self.rate_model, str) and self.rate_model != "langevin":
            raise ValueError(f"{self.name}: rate_model must be 'langevin' or a number")
        if self.exothermicity < 0:
            raise ValueError(f"{self.name}: exothermicity must be >= 0")
        for b in self.branches:
            if b.product is not None and b.product.charge != self.reactant.charge:
                raise ValueError(f"{self.name}: product {b.product.name} does not conserve charge")

    @property
    def destructive(self) -> bool:
        return any(b.product is None for b in self.branches)

    def with_pressure(self, pressure: float) -> "ReactionChannel":
        if not isinstance(self.trigger, NeutralTrigger):
            raise TypeError(f"{self.name} is not a neutral-gas channel")
        return replace(self, trigger=NeutralTrigger(self.trigger.gas.with_pressure(pressure)))

    def with_intensity(self, intensity: float) -> "ReactionChannel":
        if not isinstance(self.trigger, PhotonTrigger):
            raise TypeError(f"{self.name} is not a photon channel")
        return replace(self, trigger=replace(self.trigger, intensity=intensity))


@dataclass(frozen=True)
class ReactionEvent:
    time: float
    ion: int
    channel: str
    product: str  # empty when the ion was destroyed


def rate_coefficient(channel: ReactionChannel) -> float:
    """Bimolecular rate coefficient k (m^3/s) of a neutral-gas channel."""
    if not isinstance(channel.trigger, NeutralTrigger):
        raise TypeError(f"{channel.name} is not a neutral-gas channel")
    if channel.rate_model == "langevin":
        return langevin_rate(channel.reactant, channel.trigger.gas)
    return float(channel.rate_model)


def channel_rate(channel: ReactionChannel) -> float:
    """Per-ion reaction rate (1/s)."""
    trig = channel.trigger
    if isinstance(trig, NeutralTrigger):
        return channel.gate * rate_coefficient(channel) * trig.gas.number_density
    if isinstance(trig, PhotonTrigger):
        return channel.gate * trig.cross_section * trig.photon_flux
    raise TypeError(f"{channel.name}: missing trigger")


def _recoil(v: np.ndarray, m_reactant: float, m_ion: float, m_neutral: float, energy: float,
            rng: np.random.Generator) -> np.ndarray:
    """Product-ion velocity after releasing ``energy`` between ion and neutral byproduct.

    The pre-event ion momentum is shared so that ion and neutral momenta add
    up to it; in the centre-of-mass frame the products fly apart isotropically
    and the neutral takes the fraction m_ion / (m_ion + m_neutral) of the
    released energy.
    """
    total = m_ion + m_neutral
    com = m_reactant * v / total
    if energy <= 0 or m_neutral <= 0:
        return com
    mu = m_ion * m_neutral / total
    u = math.sqrt(2.0 * energy / mu)
    d = rng.standard_normal(3)
    d /= np.linalg.norm(d)
    return com + (m_neutral / total) * u * d


def step_reactions(
    state: EnsembleState,
    dt: float,
    channels: Sequence[ReactionChannel],
    rng: np.random.Generator | None = None,
    time: float | None = None,
) -> list[ReactionEvent]:
    """Fire reactions for a bin of length ``dt`` and transform the ions in place.

    Every live ion of a reactant species reacts with probability
    1 - exp(-R dt), R being the summed rate of its channels; the channel and
    then the branch are drawn in proportion to rates and fractions. Events
    are processed in ion order.
    """
    if not channels:
        return []
    rng = state.rng if rng is None else rng
    time = state.time if time is None else time
    by_reactant: dict[str, list[tuple[ReactionChannel, float]]] = {}
    for ch in channels:
        r = channel_rate(ch)
        if r > 0:
            by_reactant.setdefault(ch.reactant.name, []).append((ch, r))
    events = []
    names = [sp.name for sp in state.species_table]
    # the candidates are fixed before any ion changes species
    todo = []
    for name, chans in by_reactant.items():
        if name not in names:
            continue
        k = names.index(name)
        idx = np.flatnonzero(state.alive & (state.species_index == k))
        if len(idx) == 0:
            continue
        total = sum(r for _, r in chans)
        if total * dt > MAX_BIN_PROBABILITY:
            warnings.warn(f"reaction probability {total * dt:.3g} per bin for {name}; reduce dt", stacklevel=2)
        fire = rng.random(len(idx)) < -math.expm1(-total * dt)
        for i in idx[fire]:
            todo.append((int(i), chans, total))
    todo.sort(key=lambda t: t[0])
    for i, chans, total in todo:
        x = rng.random() * total
        for ch, r in chans:
            x -= r
            if x < 0:
                break
        y = rng.random()
        for br in ch.branches:
            y -= br.fraction
            if y < 0:
                break
        if br.product is None:
            state.mark_lost(i, time)
            events.append(ReactionEvent(time, i, ch.name, ""))
            continue
        m_old = state.species_of(i).mass
        state.velocities[i] = _recoil(state.velocities[i], m_old, br.product.mass, br.neutral_mass,
                                      ch.exothermicity, rng)
        state.species_index[i] = state.add_species(br.product)
        events.append(ReactionEvent(time, i, ch.name, br.product.name))
    return events


@dataclass
class ExposureResult:
    events: list[ReactionEvent] = field(default_factory=list)
    composition: list[tuple[float, str, int]] = field(default_factory=list)

    def counts(self, species: str) -> tuple[np.ndarray, np.ndarray]:
        rows = [r for r in self.composition if r[1] == species]
        return np.array([r[0] for r in rows]), np.array([r[2] for r in rows])

    def write_log(self, path) -> None:
        write_csv(path, ("t_s", "ion_id", "channel", "product"),
                  ((e.time, e.ion, e.channel, e.product) for e in self.events))

    def write_composition(self, path) -> None:
        write_csv(path, ("t_s", "species", "N"), self.composition)


def _record(state: EnsembleState, out: ExposureResult) -> None:
    for name, n in state.counts().items():
        out.composition.append((state.time, name, n))


def expose(
    state: EnsembleState,
    channels: Sequence[ReactionChannel],
    duration: float,
    bin_width: float,
    config: ForceConfig | None = None,
    cooling: LaserCooling | None = None,
    heating: HeatingModel = NO_HEATING,
) -> ExposureResult:
    """Expose the ensemble to the channels' environment for ``duration``.

    Without ``config`` only the chemistry is advanced (in bins of
    ``bin_width``); with it the ensemble is also integrated and reactions are
    applied every ``bin_width`` (rounded to whole timesteps).
    """
    if not duration > 0 or not bin_width > 0:
        raise ValueError("duration and bin_width must be positive")
    out = ExposureResult()
    _record(state, out)
    if config is None:
        nbins = int(round(duration / bin_width))
        t0 = state.time
        for b in range(nbins):
            state.time = t0 + (b + 1) * bin_width
            out.events += step_reactions(state, bin_width, channels)
            _record(state, out)
        return out
    stride = max(1, int(round(bin_width / config.timestep)))
    if config.mode == "rf_full":
        k = config.steps_per_rf_period
        stride = max(k, stride // k * k)
    dt_bin = stride * config.timestep

    def react(st):
        out.events.extend(step_reactions(st, dt_bin, channels))
        _record(st, out)

    evolve(state, config, cooling or LaserCooling(), heating, duration=duration, stride=stride, on_block=react)
    return out


@dataclass(frozen=True)
class DecayFit:
    gamma: float  # 1/s
    k: float  # m^3/s
    n0: float
    residual: float  # RMS residual relative to n0
    monotonic: bool


def fit_decay(times: Sequence[float], counts: Sequence[float], number_density: float) -> DecayFit:
    """Least-squares fit of N(t) = N0 exp(-Gamma t); k = Gamma / n_n.

    ``monotonic`` is False when the counts rise by more than the fit
    residual anywhere, i.e. the series is not decay-dominated.
    """
    t = np.asarray(times, dtype=float)
    n = np.asarray(counts, dtype=float)
    if len(t) < 5:
        raise ValueError("need at least five points")
    if np.any(n <= 0):
        raise ValueError("counts must be positive")
    if not number_density > 0:
        raise ValueError("number density must be positive")
    slope, intercept = np.polyfit(t, np.log(n), 1)
    p0 = (math.exp(intercept), -slope)

    def f(x, n0, g):
        return n0 * np.exp(-g * x)

    try:
        with warnings.catch_warnings():
            # flat data has no covariance estimate; only the optimum is used
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, _ = curve_fit(f, t, n, p0=p0, xtol=1e-15, ftol=1e-15, gtol=1e-15, maxfev=10000)
    except RuntimeError:
        popt = p0
    # keep the log-linear estimate when it is at least as good (exact data)
    if np.sum((f(t, *p0) - n) ** 2) <= np.sum((f(t, *popt) - n) ** 2):
        popt = p0
    n0, g = float(popt[0]), float(popt[1])
    resid = float(np.sqrt(np.mean((f(t, n0, g) - n) ** 2)))
    rise = float(np.max(np.diff(n), initial=0.0))
    return DecayFit(g, g / number_density, n0, resid / n0, rise <= max(resid, 1e-12 * n0) * 3)


def channel_library(
    pressures: Mapping[str, float] | None = None,
    gate: float = 1.0,
    photodestruction_reactant: str = "AF+",
    photon: PhotonTrigger | None = None,
) -> dict[str, ReactionChannel]:
    """Preset reaction channels.

    ``pressures`` (Pa) per gas name set the neutral densities (default 0,
    i.e. no exposure); ``gate`` is the reactive-state fraction of the
    photoactivated Be+ channels.
    """
    pressures = dict(pressures or {})
    sp = presets.species

    def g(name):
        return NeutralTrigger(presets.gas(name, pressure=pressures.get(name, 0.0)))

    def br(product, fraction, neutral_u):
        return Branch(sp(product), fraction, neutral_u * AMU)

    photon = photon or PhotonTrigger(0.0, 1e-21, 532e-9)
    chans = [
        ReactionChannel("Be+*+H2", sp("Be+"), g("H2"), (br("BeH+", 1.0, M_H),), gate=gate),
        ReactionChannel("Be+*+HD", sp("Be+"), g("HD"), (br("BeH+", 0.5, M_D), br("BeD+", 0.5, M_H)), gate=gate),
        ReactionChannel("Be+*+D2", sp("Be+"), g("D2"), (br("BeD+", 1.0, M_D),), gate=gate),
        ReactionChannel("Ba++CO2", sp("Ba+"), g("CO2"), (br("BaO+", 1.0, M_CO),)),
        ReactionChannel("H2++H2", sp("H2+"), g("H2"), (br("H3+", 1.0, M_H),)),
        ReactionChannel("H3++HD", sp("H3+"), g("HD"), (br("H2D+", 1.0, M_H2),), exothermicity=232.0 * K_B),
        ReactionChannel("H2D++H2", sp("H2D+"), g("H2"), (br("H3+", 1.0, M_HD),)),
        ReactionChannel("Ar++H2", sp("Ar+"), g("H2"), (br("ArH+", 1.0, M_H),)),
        ReactionChannel("ArH++H2", sp("ArH+"), g("H2"), (br("H3+", 1.0, M_AR),)),
        ReactionChannel("H2++Ar", sp("H2+"), g("Ar"), (br("ArH+", 1.0, M_H),)),
        ReactionChannel("H3++O2", sp("H3+"), g("O2"), (br("HO2+", 1.0, M_H2),)),
        ReactionChannel("photodestruction", sp(photodestruction_reactant), photon, (Branch(None, 1.0),)),
    ]
    return {c.name: c for c in chans}
