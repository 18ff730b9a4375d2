"""Force model, integrator driver, observers and temperature estimators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from ..constants import K_B
from ..trapmodel import IonSpecies, NeutralGas, TrapConfig, principal_frequencies
from . import kernels
from .state import EnsembleState

MODES = ("rf_full", "pseudopotential")
#: Largest noise block drawn at once (steps).
NOISE_BLOCK = 1024


class IntegrationError(RuntimeError):
    """Non-finite state or unphysically close ions."""

    def __init__(self, message: str, time: float, ion: int):
        super().__init__(f"t = {time:.9g} s, ion {ion}: {message}")
        self.time = time
        self.ion = ion


@dataclass(frozen=True)
class ExcitationDrive:
    """Uniform oscillating field ``amplitude * cos(phase) * direction``.

    ``frequency`` in Hz (0 gives a static field). With ``sweep =
    (f_start, f_end, rate)`` the frequency ramps linearly at ``rate`` Hz/s from
    ``start_time`` and then holds at ``f_end``.
    """

    amplitude: float
    frequency: float
    direction: tuple[float, float, float] = (1.0, 0.0, 0.0)
    sweep: tuple[float, float, float] | None = None
    start_time: float = 0.0

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("drive amplitude must be >= 0")
        d = np.asarray(self.direction, dtype=float)
        norm = np.linalg.norm(d)
        if norm == 0:
            raise ValueError("drive direction must be non-zero")
        object.__setattr__(self, "direction", tuple(float(v) for v in d / norm))

    def packed(self) -> np.ndarray:
        if self.sweep is None:
            f0, rate, f_end = self.frequency, 0.0, self.frequency
        else:
            f0, f_end, rate = self.sweep
            if rate == 0.0 or (f_end - f0) / rate < 0:
                raise ValueError("sweep rate must move from f_start towards f_end")
        return np.array([self.amplitude, *self.direction, f0, rate, f_end, self.start_time])


@dataclass(frozen=True)
class ForceConfig:
    mode: str
    trap: TrapConfig
    timestep: float
    coulomb: bool = True
    drive: ExcitationDrive | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.timestep > 0:
            raise ValueError("timestep must be positive")
        if self.mode == "rf_full" and self.timestep > self.trap.rf_period / 50 * (1 + 1e-12):
            raise ValueError("rf_full timestep must be <= RF period / 50")

    @property
    def steps_per_rf_period(self) -> int:
        """RF period in steps (rf_full requires it to be an integer)."""
        k = self.trap.rf_period / self.timestep
        return int(round(k))

    def check(self, species: Sequence[IonSpecies]) -> None:
        if self.mode == "rf_full":
            k = self.trap.rf_period / self.timestep
            if abs(k - round(k)) > 1e-6 * k:
                raise ValueError("rf_full timestep must divide the RF period")
            return
        w = max_secular_frequency(self.trap, species)
        if self.timestep > 2 * math.pi / w / 100 * (1 + 1e-12):
            raise ValueError(
                f"pseudopotential timestep {self.timestep:g} s exceeds 1/100 of the shortest "
                f"secular period ({2 * math.pi / w:g} s)"
            )

    @staticmethod
    def rf_timestep(trap: TrapConfig, steps_per_period: int = 50) -> float:
        if steps_per_period < 50:
            raise ValueError("need at least 50 steps per RF period")
        return trap.rf_period / steps_per_period

    @staticmethod
    def pseudo_timestep(trap: TrapConfig, species: Sequence[IonSpecies], steps_per_period: int = 100) -> float:
        if steps_per_period < 100:
            raise ValueError("need at least 100 steps per secular period")
        return 2 * math.pi / max_secular_frequency(trap, species) / steps_per_period


def max_secular_frequency(trap: TrapConfig, species: Sequence[IonSpecies]) -> float:
    best = 0.0
    for sp in species:
        for w in principal_frequencies(trap, sp):
            if math.isfinite(w):
                best = max(best, w)
    if best == 0.0:
        raise ValueError("no confined direction")
    return best


@dataclass(frozen=True)
class LaserCooling:
    """Viscous cooling of laser-cooled species.

    ``axes`` selects the damped velocity components ("z" for the laser axis,
    "xyz" for an isotropic friction used as a thermostat). ``beta`` maps
    species names to friction coefficients (kg/s) overriding the species value;
    ``light_pressure`` likewise for the constant axial force (N).
    """

    enabled: bool = True
    axes: str = "z"
    beta: Mapping[str, float] = field(default_factory=dict)
    light_pressure: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.axes or set(self.axes) - set("xyz"):
            raise ValueError(f"axes must be a subset of 'xyz', got {self.axes!r}")
        if any(b < 0 for b in self.beta.values()):
            raise ValueError("beta must be >= 0")

    def beta_of(self, sp: IonSpecies) -> float:
        if not self.enabled:
            return 0.0
        if sp.name in self.beta:
            return self.beta[sp.name]
        return sp.beta if sp.is_laser_cooled else 0.0

    def light_of(self, sp: IonSpecies) -> float:
        if not self.enabled:
            return 0.0
        if sp.name in self.light_pressure:
            return self.light_pressure[sp.name]
        return sp.light_pressure if sp.is_laser_cooled else 0.0


NO_COOLING = LaserCooling(enabled=False)


@dataclass(frozen=True)
class HeatingModel:
    """Uniform heating by small velocity kicks plus optional discrete collisions.

    ``rates`` maps species names to h_j in K/s (energy rate / k_B per ion);
    ``floor`` is added to every species. ``gas`` enables hard elastic
    collisions with a background gas at the per-ion rate ``collision_rate``
    (1/s), which defaults to the polarization-model rate.
    """

    rates: Mapping[str, float] = field(default_factory=dict)
    floor: float = 0.0
    gas: NeutralGas | None = None
    collision_rate: float | None = None

    def __post_init__(self):
        if any(h < 0 for h in self.rates.values()) or self.floor < 0:
            raise ValueError("heating rates must be >= 0")

    def rate_of(self, sp: IonSpecies) -> float:
        return self.rates.get(sp.name, 0.0) + self.floor


NO_HEATING = HeatingModel()


def thermostat_heating(temperature: float, beta_over_m: float, axes: str = "xyz") -> float:
    """Heating rate (K/s) that balances friction on ``axes`` at ``temperature``."""
    return len(axes) * beta_over_m * temperature


@dataclass(frozen=True)
class Snapshot:
    """Immutable observation of the ensemble.

    ``secular_velocities`` are averaged over the last RF period in rf_full mode
    and equal ``velocities`` in pseudopotential mode.
    """

    time: float
    positions: np.ndarray
    velocities: np.ndarray
    secular_velocities: np.ndarray
    species_index: np.ndarray
    alive: np.ndarray
    species_table: tuple
    kinetic_energy: np.ndarray  # per ion, from secular velocities
    potential_energy: float

    @property
    def masses(self) -> np.ndarray:
        return np.array([sp.mass for sp in self.species_table])[self.species_index]


# ---------------------------------------------------------------- force setup

def _per_ion_springs(state: EnsembleState, config: ForceConfig):
    trap = config.trap
    table = state.species_table
    kx = np.empty(len(table))
    ky = np.empty(len(table))
    kz = np.empty(len(table))
    crf = np.zeros(len(table))
    for k, sp in enumerate(table):
        q, m = sp.charge, sp.mass
        kec = q * trap.kappa * trap.v_ec
        ks = q * trap.v_static / trap.r0**2
        k0 = 0.0
        if config.mode == "pseudopotential":
            k0 = q**2 * trap.v_rf**2 / (2.0 * m * trap.omega_rf**2 * trap.r0**4)
        else:
            crf[k] = q * trap.v_rf / trap.r0**2
        kx[k] = k0 - kec + ks
        ky[k] = k0 - kec - ks
        kz[k] = 2.0 * kec
    idx = state.species_index
    return kx[idx], ky[idx], kz[idx], crf[idx]


def trap_potential_energy(state: EnsembleState, config: ForceConfig, positions=None) -> np.ndarray:
    """Per-ion trap potential energy in the pseudopotential (secular) approximation."""
    cfg = config if config.mode == "pseudopotential" else ForceConfig(
        "pseudopotential", config.trap, config.timestep, config.coulomb
    )
    kx, ky, kz, _ = _per_ion_springs(state, cfg)
    p = state.positions if positions is None else positions
    e = 0.5 * (kx * p[:, 0] ** 2 + ky * p[:, 1] ** 2 + kz * p[:, 2] ** 2)
    return np.where(state.alive, e, 0.0)


def potential_energy(state: EnsembleState, config: ForceConfig) -> float:
    p = np.where(state.alive[:, None], state.positions, 0.0)
    e = float(trap_potential_energy(state, config, p).sum())
    if config.coulomb:
        e += kernels.coulomb_energy(
            np.ascontiguousarray(p[:, 0]), np.ascontiguousarray(p[:, 1]), np.ascontiguousarray(p[:, 2]),
            state.charges, state.alive,
        )
    return e


def kinetic_energy(state: EnsembleState, velocities=None) -> np.ndarray:
    v = state.velocities if velocities is None else velocities
    e = 0.5 * state.masses * np.einsum("ij,ij->i", v, v)
    return np.where(state.alive, e, 0.0)


# ---------------------------------------------------------------- collisions

def _apply_collisions(state: EnsembleState, heating: HeatingModel, span: float) -> int:
    """Discrete elastic collisions for a block of length ``span`` (applied at its end)."""
    gas = heating.gas
    if gas is None or span <= 0:
        return 0
    from ..trapmodel import collision_rates

    rng = state.rng
    n = len(state)
    rate = np.empty(n)
    for k, sp in enumerate(state.species_table):
        r = heating.collision_rate
        if r is None:
            r = collision_rates(sp, 0.0, gas).gamma_elastic
        rate[state.species_index == k] = r
    events = rng.poisson(rate * span)
    events[~state.alive] = 0
    total = 0
    m_n = gas.mass
    for i in np.flatnonzero(events):
        m = state.masses[i]
        for _ in range(events[i]):
            u = rng.standard_normal(3) * math.sqrt(K_B * gas.temperature / m_n)
            v = state.velocities[i]
            g = np.linalg.norm(v - u)
            com = (m * v + m_n * u) / (m + m_n)
            d = rng.standard_normal(3)
            d /= np.linalg.norm(d)
            state.velocities[i] = com + m_n / (m + m_n) * g * d
            total += 1
    return total


# ---------------------------------------------------------------- driver

class _Runner:
    """Packs the state into kernel arrays once and runs blocks of steps."""

    def __init__(self, state: EnsembleState, config: ForceConfig, cooling: LaserCooling, heating: HeatingModel,
                 origin: tuple[float, int] | None = None):
        config.check([state.species_table[k] for k in np.unique(state.species_index[state.alive])]
                     or state.species_table)
        self.state = state
        self.config = config
        self.heating = heating
        # time = t_start + steps * dt avoids accumulating rounding in the clock
        self.t_start, self.steps = origin if origin is not None else (state.time, 0)
        n = len(state)
        dt = config.timestep
        table = state.species_table
        idx = state.species_index
        self.mass = np.ascontiguousarray(state.masses)
        self.charge = np.ascontiguousarray(state.charges)
        self.kx, self.ky, self.kz, self.crf = (np.ascontiguousarray(a) for a in _per_ion_springs(state, config))
        beta = np.array([cooling.beta_of(sp) for sp in table])[idx]
        light = np.array([cooling.light_of(sp) for sp in table])[idx]
        self.fz0 = np.ascontiguousarray(light)
        damp = np.exp(-beta / self.mass * dt)
        ones = np.ones(n)
        self.damp = [np.ascontiguousarray(damp if ax in cooling.axes else ones) for ax in "xyz"]
        h = np.array([heating.rate_of(sp) for sp in table])[idx]
        self.sigma = np.sqrt(2.0 * h * K_B * dt / (3.0 * self.mass))
        self.noisy = bool(np.any(self.sigma > 0))
        self.drive = (config.drive.packed() if config.drive is not None else np.zeros(8))
        self.mode = kernels.MODE_RF if config.mode == "rf_full" else kernels.MODE_PSEUDO
        self.alive = state.alive.copy()
        park = np.arange(1, n + 1) * 1e6
        p = state.positions
        self.px = np.ascontiguousarray(np.where(self.alive, p[:, 0], park))
        self.py = np.ascontiguousarray(np.where(self.alive, p[:, 1], 0.0))
        self.pz = np.ascontiguousarray(np.where(self.alive, p[:, 2], 0.0))
        v = np.where(self.alive[:, None], state.velocities, 0.0)
        self.vx, self.vy, self.vz = (np.ascontiguousarray(v[:, k]) for k in range(3))
        self.vsum = np.zeros((n, 3))
        self.death = np.full(n, -1, dtype=np.int64)
        self.acc = [np.zeros(n) for _ in range(3)]
        self.fc2 = np.zeros(n)
        self.empty_noise = np.zeros((0, n, 3))

    def run(self, nsteps: int, avg_steps: int = 0) -> None:
        """Run ``nsteps``; ``vsum`` receives the velocity sum over the last ``avg_steps``."""
        st = self.state
        cfg = self.config
        done = 0
        self.vsum = np.zeros((len(st), 3))
        block_sum = np.zeros((len(st), 3))
        while done < nsteps:
            block = min(NOISE_BLOCK, nsteps - done)
            noise = st.rng.standard_normal((block, len(st), 3)) if self.noisy else self.empty_noise
            avg = min(block, max(0, avg_steps - (nsteps - done - block)))
            self.death[:] = -1
            t0 = st.time
            status, s, ion = kernels.integrate(
                self.px, self.py, self.pz, self.vx, self.vy, self.vz, self.mass, self.charge, self.alive,
                self.kx, self.ky, self.kz, self.fz0, self.crf, self.damp[0], self.damp[1], self.damp[2],
                self.sigma, noise, cfg.trap.omega_rf, self.mode, self.drive, cfg.coulomb,
                t0, cfg.timestep, block, cfg.trap.r0, st.z_limit, avg, block_sum,
                self.death, self.acc[0], self.acc[1], self.acc[2], self.fc2,
            )
            if status != kernels.OK:
                t_err = t0 + (s + 1) * cfg.timestep
                self.sync()
                msg = "non-finite position or velocity" if status == kernels.ERR_NONFINITE else \
                    "pair separation below 100 nm (timestep too large or unphysical start)"
                raise IntegrationError(msg, t_err, int(ion))
            if avg:
                self.vsum += block_sum
            lost = np.flatnonzero(self.death >= 0)
            if len(lost):
                st.mark_lost(lost, 0.0)
                st.death_time[lost] = t0 + (self.death[lost] + 1) * cfg.timestep
            self.steps += block
            st.time = self.t_start + self.steps * cfg.timestep
            done += block
            if self.heating.gas is not None:
                # collisions act on the synced state, then flow back into the kernel arrays
                self.sync()
                if _apply_collisions(st, self.heating, block * cfg.timestep):
                    v = np.where(self.alive[:, None], st.velocities, 0.0)
                    self.vx[:], self.vy[:], self.vz[:] = v[:, 0], v[:, 1], v[:, 2]

    def sync(self) -> None:
        st = self.state
        a = self.alive
        st.positions[a, 0] = self.px[a]
        st.positions[a, 1] = self.py[a]
        st.positions[a, 2] = self.pz[a]
        st.velocities[a, 0] = self.vx[a]
        st.velocities[a, 1] = self.vy[a]
        st.velocities[a, 2] = self.vz[a]
        st.alive[:] = a


def step(state: EnsembleState, config: ForceConfig, cooling: LaserCooling = NO_COOLING,
         heating: HeatingModel = NO_HEATING) -> EnsembleState:
    """Advance ``state`` by one timestep in place and return it."""
    r = _Runner(state, config, cooling, heating)
    r.run(1)
    r.sync()
    return state


class Observer:
    """Base class: receives a :class:`Snapshot` every ``stride`` steps."""

    stride: int = 1

    def __call__(self, snap: Snapshot) -> None:  # pragma: no cover - interface
        raise NotImplementedError


def snapshot(state: EnsembleState, config: ForceConfig, secular_v: np.ndarray | None = None) -> Snapshot:
    """Observation of ``state``; ``secular_v`` defaults to the raw velocities."""
    return _make_snapshot(state, config, state.velocities if secular_v is None else secular_v)


def _make_snapshot(state: EnsembleState, config: ForceConfig, secular_v: np.ndarray) -> Snapshot:
    pe = potential_energy(state, config)
    ke = kinetic_energy(state, secular_v)
    return Snapshot(
        state.time, state.positions.copy(), state.velocities.copy(), secular_v.copy(),
        state.species_index.copy(), state.alive.copy(), tuple(state.species_table), ke, pe,
    )


def evolve(
    state: EnsembleState,
    config: ForceConfig,
    cooling: LaserCooling = NO_COOLING,
    heating: HeatingModel = NO_HEATING,
    duration: float = 0.0,
    observers: Sequence[Observer] = (),
    stride: int | None = None,
    on_block: Callable[[EnsembleState], None] | None = None,
) -> list:
    """Integrate for ``duration`` seconds, sampling every ``stride`` steps.

    ``stride`` defaults to the smallest observer stride (all observer strides
    must be multiples of it); in rf_full mode it must be a multiple of the
    RF period in steps. ``on_block`` is called with the synced state after
    every stride (used for reactions). Returns the observers.
    """
    if not duration > 0:
        raise ValueError("duration must be positive")
    nsteps = int(round(duration / config.timestep))
    if nsteps < 1:
        raise ValueError("duration shorter than one timestep")
    strides = [o.stride for o in observers]
    if stride is None:
        stride = min(strides) if strides else nsteps
    if any(s % stride for s in strides):
        raise ValueError("observer strides must be multiples of the sampling stride")
    avg = 0
    if config.mode == "rf_full":
        avg = config.steps_per_rf_period
        if stride % avg:
            raise ValueError("in rf_full mode the stride must be a whole number of RF periods")
    runner = _Runner(state, config, cooling, heating)
    done = 0
    count = 0
    while done < nsteps:
        block = min(stride, nsteps - done)
        vsec = _run_block(runner, block, avg)
        done += block
        count += block
        runner.sync()
        if on_block is not None:
            on_block(state)
            # the callback may change species, velocities or the alive mask
            runner = _Runner(state, config, cooling, heating, (runner.t_start, runner.steps))
        due = [o for o in observers if count % o.stride == 0]
        if due:
            snap = _make_snapshot(state, config, vsec)
            for o in due:
                o(snap)
    return list(observers)


def _run_block(runner: _Runner, block: int, avg: int) -> np.ndarray:
    """Run ``block`` steps; return secular velocities (RF-period mean in rf_full)."""
    if avg == 0 or block < avg:
        runner.run(block)
        runner.sync()
        return runner.state.velocities.copy()
    if block > avg:
        runner.run(block - avg)
    runner.run(avg, avg_steps=avg)
    runner.sync()
    vsec = runner.vsum / avg
    return np.where(runner.alive[:, None], vsec, np.nan)


# ---------------------------------------------------------------- observers

class TemperatureLog(Observer):
    """Per-species secular temperature and energies at every sample.

    With ``remove_drift`` the species' mean velocity is subtracted before the
    temperature is formed (see :func:`secular_temperature`); energies are
    always the full values.
    """

    def __init__(self, stride: int = 1, remove_drift: bool = False):
        self.stride = stride
        self.remove_drift = remove_drift
        self.rows: list[tuple] = []  # (t, species, N, T_K, E_kin, E_pot)

    def __call__(self, snap: Snapshot) -> None:
        for k, sp in enumerate(snap.species_table):
            sel = snap.alive & (snap.species_index == k)
            n = int(sel.sum())
            ke = float(snap.kinetic_energy[sel].sum())
            t = _species_temperature(snap, k, self.remove_drift) if n else 0.0
            self.rows.append((snap.time, sp.name, n, t, ke, snap.potential_energy))

    def series(self, species: str) -> tuple[np.ndarray, np.ndarray]:
        rows = [r for r in self.rows if r[1] == species]
        return np.array([r[0] for r in rows]), np.array([r[3] for r in rows])

    def total_energy(self) -> tuple[np.ndarray, np.ndarray]:
        times = sorted({r[0] for r in self.rows})
        ke = {t: 0.0 for t in times}
        pe = {}
        for t, _, _, _, e, p in self.rows:
            ke[t] += e
            pe[t] = p
        return np.array(times), np.array([ke[t] + pe[t] for t in times])


class TrajectoryRecorder(Observer):
    """Keeps position (and secular velocity) samples, e.g. for imaging."""

    def __init__(self, stride: int = 1, velocities: bool = False):
        self.stride = stride
        self.keep_velocities = velocities
        self.snapshots: list[Snapshot] = []

    def __call__(self, snap: Snapshot) -> None:
        if not self.keep_velocities:
            snap = Snapshot(snap.time, snap.positions, np.empty((0, 3)), snap.secular_velocities,
                            snap.species_index, snap.alive, snap.species_table, snap.kinetic_energy,
                            snap.potential_energy)
        self.snapshots.append(snap)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])

    def positions(self) -> np.ndarray:
        return np.stack([s.positions for s in self.snapshots])


class CallbackObserver(Observer):
    def __init__(self, stride: int, fn: Callable[[Snapshot], None]):
        self.stride = stride
        self.fn = fn

    def __call__(self, snap: Snapshot) -> None:
        self.fn(snap)


# ---------------------------------------------------------------- temperatures

def _species_sums(snap: Snapshot, k: int, remove_drift: bool) -> tuple[float, float]:
    """(sum of v_sec^2, effective number of ions) for species ``k``."""
    sel = snap.alive & (snap.species_index == k)
    n = int(sel.sum())
    if n == 0:
        return 0.0, 0.0
    v = snap.secular_velocities[sel]
    if remove_drift:
        if n < 2:
            return 0.0, 0.0
        v = v - v.mean(axis=0)
        # one velocity per axis is spent on the mean
        return float(np.einsum("ij,ij->", v, v)), n - 1.0
    return float(np.einsum("ij,ij->", v, v)), float(n)


def _species_temperature(snap: Snapshot, k: int, remove_drift: bool) -> float:
    v2, n = _species_sums(snap, k, remove_drift)
    return snap.species_table[k].mass * v2 / n / (3.0 * K_B) if n else 0.0


def secular_temperature(window: Sequence[Snapshot], mode: str = "pseudopotential",
                        rf_period: float | None = None, remove_drift: bool = False) -> dict[str, float]:
    """Per-species secular temperature T_j = m_j <v_sec^2> / (3 k_B) over a window.

    In rf_full mode the window must span at least five RF periods. With
    ``remove_drift`` the per-species centre-of-mass velocity of each sample is
    subtracted first: in a harmonic trap the centre-of-mass modes decouple from
    the internal motion, so with cooling along one axis only the radial ones
    are never damped and would otherwise bias the thermal value.
    """
    if not window:
        raise ValueError("empty window")
    if mode == "rf_full":
        if rf_period is None:
            raise ValueError("rf_full mode needs rf_period")
        span = window[-1].time - window[0].time
        if span < 5 * rf_period * (1 - 1e-9):
            raise ValueError("window shorter than 5 RF periods")
    table = window[0].species_table
    sums = np.zeros(len(table))
    counts = np.zeros(len(table))
    for snap in window:
        for k in range(len(table)):
            v2, n = _species_sums(snap, k, remove_drift)
            sums[k] += v2
            counts[k] += n
    out = {}
    for k, sp in enumerate(table):
        if counts[k]:
            out[sp.name] = sp.mass * sums[k] / counts[k] / (3.0 * K_B)
    return out


def instantaneous_temperature(state: EnsembleState) -> dict[str, float]:
    out = {}
    for k, sp in enumerate(state.species_table):
        sel = state.alive & (state.species_index == k)
        if sel.any():
            v = state.velocities[sel]
            out[sp.name] = sp.mass * float(np.einsum("ij,ij->", v, v)) / sel.sum() / (3.0 * K_B)
    return out


def kick_ion(state: EnsembleState, ion_index: int, delta_v) -> EnsembleState:
    """Add ``delta_v`` (m/s) to one ion's velocity."""
    if not 0 <= ion_index < len(state):
        raise IndexError(f"ion index {ion_index} out of range")
    if not state.alive[ion_index]:
        raise ValueError(f"ion {ion_index} is not alive")
    state.velocities[ion_index] += np.asarray(delta_v, dtype=float)
    return state
