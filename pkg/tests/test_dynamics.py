import math
import subprocess
import sys
import textwrap

import numpy as np
import pytest

from coldions import presets
from coldions.constants import E_CHARGE, EPSILON_0, K_B
from coldions.dynamics import (
    ExcitationDrive,
    ForceConfig,
    HeatingModel,
    IntegrationError,
    LaserCooling,
    NO_COOLING,
    TemperatureLog,
    TrajectoryRecorder,
    eject_heavy,
    eject_light,
    evolve,
    init_ensemble,
    kick_ion,
    ramp_extraction,
    secular_temperature,
    snapshot,
    step,
    unstable_species,
)
from coldions.dynamics import kernels
from coldions.dynamics.engine import _Runner
from coldions.trapmodel import dc_ejection_threshold, mathieu_q, secular_frequencies


@pytest.fixture(scope="module")
def be_trap():
    return presets.trap("be_trap")


@pytest.fixture(scope="module")
def be():
    return presets.species("Be+")


def peak_frequency(x, dt):
    """FFT peak of a sampled signal with Gaussian (log-quadratic) interpolation."""
    spec = np.abs(np.fft.rfft((x - x.mean()) * np.hanning(len(x))))
    f = np.fft.rfftfreq(len(x), dt)
    k = int(np.argmax(spec[1:])) + 1
    a, b, c = np.log(spec[k - 1:k + 2])
    return f[k] + 0.5 * (a - c) / (a - 2 * b + c) * (f[1] - f[0])


# ---------------------------------------------------------------- initialization

def test_init_is_deterministic(be_trap, be):
    a = init_ensemble({be: 50}, be_trap, seed=11, initial_temperature=0.1)
    b = init_ensemble({be: 50}, be_trap, seed=11, initial_temperature=0.1)
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.velocities, b.velocities)
    c = init_ensemble({be: 50}, be_trap, seed=12, initial_temperature=0.1)
    assert not np.array_equal(a.positions, c.positions)


def test_init_zero_temperature_has_zero_velocities(be_trap, be):
    st = init_ensemble({be: 20}, be_trap, seed=1)
    assert not st.velocities.any()


def test_init_rejects_empty_ensemble(be_trap, be):
    with pytest.raises(ValueError):
        init_ensemble({be: 0}, be_trap, seed=1)


def test_init_fills_cold_spheroid(be_trap, be):
    from coldions.dynamics import cold_spheroid

    shape = cold_spheroid(be_trap, be, 400)
    st = init_ensemble({be: 400}, be_trap, seed=4)
    rho = np.hypot(st.positions[:, 0], st.positions[:, 1])
    u = (rho / shape.radius) ** 2 + (st.positions[:, 2] / shape.half_length) ** 2
    assert u.max() <= 1.0
    # uniform filling: half the ions inside the scaled spheroid of volume 1/2
    assert np.mean(u <= 0.5 ** (2 / 3)) == pytest.approx(0.5, abs=0.06)


# ---------------------------------------------------------------- forces

def test_coulomb_forces_obey_newtons_third_law():
    rng = np.random.default_rng(0)
    p = rng.normal(scale=20e-6, size=(30, 3))
    q = np.full(30, E_CHARGE)
    q[::3] *= 2
    f = kernels.coulomb_forces(p[:, 0].copy(), p[:, 1].copy(), p[:, 2].copy(), q)
    assert np.abs(f.sum(axis=0)).max() < 1e-12 * np.abs(f).max()


def test_kernel_acceleration_matches_direct_sum(be_trap, be):
    st = init_ensemble({be: 40}, be_trap, seed=2)
    cfg = ForceConfig("pseudopotential", be_trap, 1e-8, coulomb=True)
    r = _Runner(st, cfg, NO_COOLING, HeatingModel())
    r.kx[:] = r.ky[:] = r.kz[:] = 0.0
    n = len(st)
    qk = 8.9875517923e9 * st.charges
    kernels._accelerations(r.px, r.py, r.pz, qk, 1 / st.masses, st.charges, r.kx, r.ky, r.kz,
                           np.zeros(n), np.zeros(n), 0.0, 0.0, 0.0, 0.0, True,
                           r.acc[0], r.acc[1], r.acc[2], r.fc2)
    f = kernels.coulomb_forces(r.px, r.py, r.pz, st.charges)
    acc = np.stack(r.acc, axis=1)
    np.testing.assert_allclose(acc * st.masses[:, None], f, rtol=1e-6, atol=1e-9 * np.abs(f).max())


def test_two_ion_axial_spacing(be_trap, be):
    wz = secular_frequencies(be_trap, be).omega_z
    st = init_ensemble({be: 2}, be_trap, seed=3)
    cfg = ForceConfig("pseudopotential", be_trap, ForceConfig.pseudo_timestep(be_trap, [be]))
    evolve(st, cfg, LaserCooling(beta={"Be+": be.mass * 2e5}, axes="xyz"), duration=2e-4)
    d = abs(st.positions[0, 2] - st.positions[1, 2])
    d0 = (E_CHARGE**2 / (2 * math.pi * EPSILON_0 * be.mass * wz**2)) ** (1 / 3)
    assert d == pytest.approx(d0, rel=5e-3)
    assert np.abs(st.positions[:, :2]).max() < 1e-3 * d0


def test_energy_drift_over_1e5_steps(be_trap, be):
    st = init_ensemble({be: 2}, be_trap, seed=3, initial_temperature=0.01)
    cfg = ForceConfig("pseudopotential", be_trap, ForceConfig.pseudo_timestep(be_trap, [be]))
    log = TemperatureLog(stride=10)
    evolve(st, cfg, duration=cfg.timestep * 100_000, observers=[log])
    _, e = log.total_energy()
    n = len(e) // 10
    drift = abs(e[-n:].mean() - e[:n].mean()) / abs(e.mean())
    assert drift < 1e-6


def test_single_ion_pseudopotential_frequencies(be_trap, be):
    w0, wr, wz = secular_frequencies(be_trap, be)
    st = init_ensemble({be: 1}, be_trap, seed=1)
    st.positions[:] = [[10e-6, 0.0, 10e-6]]
    dt = ForceConfig.pseudo_timestep(be_trap, [be], 200)
    rec = TrajectoryRecorder(stride=10)
    evolve(st, ForceConfig("pseudopotential", be_trap, dt, coulomb=False), duration=10e-3, observers=[rec])
    p = rec.positions()[:, 0]
    assert peak_frequency(p[:, 0], 10 * dt) == pytest.approx(wr / (2 * math.pi), rel=1e-3)
    assert peak_frequency(p[:, 2], 10 * dt) == pytest.approx(wz / (2 * math.pi), rel=1e-3)


def test_rf_full_matches_pseudopotential(be_trap, be):
    dt = ForceConfig.rf_timestep(be_trap, 50)
    freqs = {}
    for mode in ("rf_full", "pseudopotential"):
        st = init_ensemble({be: 1}, be_trap, seed=1)
        st.positions[:] = [[10e-6, 5e-6, 3e-6]]
        rec = TrajectoryRecorder(stride=50)
        evolve(st, ForceConfig(mode, be_trap, dt, coulomb=False), duration=2e-3, observers=[rec])
        freqs[mode] = peak_frequency(rec.positions()[:, 0, 0], 50 * dt)
    assert mathieu_q(be_trap, be) < 0.1
    assert freqs["rf_full"] == pytest.approx(freqs["pseudopotential"], rel=0.02)


def micromotion_amplitude(trap, species, x0):
    """RF-frequency amplitude of x(t) for an ion released at rest at x0."""
    dt = ForceConfig.rf_timestep(trap, 50)
    st = init_ensemble({species: 1}, trap, seed=1)
    st.positions[:] = [[x0, 0.0, 0.0]]
    cfg = ForceConfig("rf_full", trap, dt, coulomb=False)
    trace = []
    for _ in range(500):
        step(st, cfg)
        trace.append(st.positions[0, 0])
    x = np.array(trace)
    # remove the secular motion with a one-period moving average
    smooth = np.convolve(x, np.ones(50) / 50, mode="same")
    resid = (x - smooth)[50:-50]
    return 0.5 * (resid.max() - resid.min())


def test_micromotion_amplitude_scales_with_q_and_offset(be_trap, be):
    a1 = micromotion_amplitude(be_trap, be, 10e-6)
    a2 = micromotion_amplitude(be_trap, be, 20e-6)
    a3 = micromotion_amplitude(be_trap.replace(v_rf=2 * be_trap.v_rf), be, 10e-6)
    assert a2 / a1 == pytest.approx(2.0, rel=0.02)
    q1 = mathieu_q(be_trap, be)
    # lowest-order Mathieu solution: micromotion amplitude q x / 2
    assert a1 == pytest.approx(0.5 * q1 * 10e-6, rel=0.1)
    assert a3 / a1 == pytest.approx(2.0, rel=0.1)


# ---------------------------------------------------------------- temperatures

def test_maxwell_gas_temperature(be_trap, be):
    st = init_ensemble({be: 4000}, be_trap, seed=5, initial_temperature=1.0)
    cfg = ForceConfig("pseudopotential", be_trap, 1e-8)
    t = secular_temperature([snapshot(st, cfg)])["Be+"]
    # statistical error of a 3N-sample variance estimate
    assert t == pytest.approx(1.0, abs=4 * math.sqrt(2 / (3 * 4000)))


def test_rf_full_excludes_micromotion(be_trap, be):
    st = init_ensemble({be: 1}, be_trap, seed=1)
    st.positions[:] = [[20e-6, 0.0, 0.0]]
    dt = ForceConfig.rf_timestep(be_trap, 50)
    # a static field holds the ion off the rf null
    w0 = secular_frequencies(be_trap, be).omega0
    field = be.mass * w0**2 * 20e-6 / be.charge
    cfg = ForceConfig("rf_full", be_trap, dt, coulomb=False, drive=ExcitationDrive(field, 0.0))
    rec = TrajectoryRecorder(stride=50, velocities=True)
    evolve(st, cfg, duration=40 * 50 * dt, observers=[rec])
    window = rec.snapshots[10:]
    t_sec = secular_temperature(window, "rf_full", be_trap.rf_period)["Be+"]
    inst = []
    st2 = st.copy()
    for _ in range(50):
        step(st2, cfg)
        inst.append(st2.velocities[0] @ st2.velocities[0])
    t_micro = np.mean(inst) * be.mass / (3 * K_B)
    assert t_micro > 1e-3
    assert t_sec < 1e-3 * t_micro


def test_rf_window_too_short_is_rejected(be_trap, be):
    st = init_ensemble({be: 1}, be_trap, seed=1)
    cfg = ForceConfig("pseudopotential", be_trap, 1e-8)
    snaps = [snapshot(st, cfg)]
    with pytest.raises(ValueError):
        secular_temperature(snaps, "rf_full", be_trap.rf_period)


def test_heating_injects_energy_at_configured_rate():
    trap = presets.trap("ba_trap")
    ba = presets.species("Ba+")
    st = init_ensemble({ba: 100}, trap, seed=7, initial_temperature=0.01)
    cfg = ForceConfig("pseudopotential", trap, 1e-7)
    h = 200.0
    log = TemperatureLog(stride=1000)
    evolve(st, cfg, NO_COOLING, HeatingModel(rates={"Ba+": h}), duration=10e-3, observers=[log])
    t, e = log.total_energy()
    rate = np.polyfit(t, e, 1)[0]
    assert rate == pytest.approx(h * K_B * 100, rel=0.10)


def test_kick_raises_temperature_by_kinetic_bookkeeping(be_trap, be):
    st = init_ensemble({be: 10}, be_trap, seed=1)
    cfg = ForceConfig("pseudopotential", be_trap, 1e-8)
    t0 = secular_temperature([snapshot(st, cfg)])["Be+"]
    dv = np.array([30.0, 0.0, 40.0])
    kick_ion(st, 3, dv)
    t1 = secular_temperature([snapshot(st, cfg)])["Be+"]
    assert t1 - t0 == pytest.approx(be.mass * (dv @ dv) / (3 * K_B * 10), rel=1e-12)


def test_kick_validates_index(be_trap, be):
    st = init_ensemble({be: 3}, be_trap, seed=1)
    with pytest.raises(IndexError):
        kick_ion(st, 3, (1.0, 0.0, 0.0))


def test_kick_energy_is_conserved_after_thermalization():
    trap = presets.trap("ba_trap")
    ba = presets.species("Ba+")
    st = init_ensemble({ba: 30}, trap, seed=8)
    cfg = ForceConfig("pseudopotential", trap, 1e-7)
    evolve(st, cfg, LaserCooling(beta={"Ba+": ba.mass * 5e4}, axes="xyz"), duration=1e-3)
    st.velocities[:] = 0.0
    e0 = snapshot(st, cfg)
    e_before = e0.kinetic_energy.sum() + e0.potential_energy
    kick_ion(st, 0, (76.8, 0.0, 0.0))
    e_kick = 0.5 * ba.mass * 76.8**2
    log = TemperatureLog(stride=1000)
    evolve(st, cfg, duration=2e-3, observers=[log])
    _, e = log.total_energy()
    assert e[-1] == pytest.approx(e_before + e_kick, rel=0.01)


# ---------------------------------------------------------------- errors and loss

def test_close_pair_is_reported(be_trap, be):
    st = init_ensemble({be: 2}, be_trap, seed=1)
    st.positions[:] = [[0, 0, 0], [0, 0, 50e-9]]
    cfg = ForceConfig("pseudopotential", be_trap, 1e-8)
    with pytest.raises(IntegrationError) as exc:
        evolve(st, cfg, duration=1e-7)
    assert exc.value.ion in (0, 1)


def test_nonfinite_state_is_reported(be_trap, be):
    st = init_ensemble({be: 2}, be_trap, seed=1)
    st.velocities[1, 0] = np.inf
    cfg = ForceConfig("pseudopotential", be_trap, 1e-8)
    with pytest.raises(IntegrationError) as exc:
        evolve(st, cfg, duration=1e-7)
    assert exc.value.ion == 1


def test_timestep_limits(be_trap, be):
    with pytest.raises(ValueError):
        ForceConfig("rf_full", be_trap, be_trap.rf_period / 10)
    st = init_ensemble({be: 1}, be_trap, seed=1)
    with pytest.raises(ValueError):
        evolve(st, ForceConfig("pseudopotential", be_trap, 1e-5), duration=1e-3)


def test_ion_beyond_electrodes_is_lost(be_trap, be):
    st = init_ensemble({be: 3}, be_trap, seed=1)
    st.velocities[0] = [5e4, 0.0, 0.0]
    cfg = ForceConfig("pseudopotential", be_trap, 1e-8)
    evolve(st, cfg, duration=2e-6)
    assert not st.alive[0] and st.alive[1:].all()
    assert np.isnan(st.positions[0]).all()
    assert 0 < st.death_time[0] <= st.time


def test_step_advances_clock(be_trap, be):
    st = init_ensemble({be: 2}, be_trap, seed=1)
    cfg = ForceConfig("pseudopotential", be_trap, 1e-8)
    step(st, cfg)
    assert st.time == pytest.approx(1e-8)


DETERMINISM_SCRIPT = textwrap.dedent(
    """
    import hashlib
    from coldions import presets
    from coldions.dynamics import *
    trap = presets.trap("ba_trap"); ba = presets.species("Ba+")
    st = init_ensemble({ba: 120}, trap, seed=5, initial_temperature=0.05)
    cfg = ForceConfig("pseudopotential", trap, 1e-7)
    evolve(st, cfg, LaserCooling(), HeatingModel(rates={"Ba+": 10.0}), duration=3e-4)
    print(hashlib.sha256(st.positions.tobytes() + st.velocities.tobytes()).hexdigest())
    """
)


def test_trajectory_is_identical_across_thread_counts():
    import os

    out = set()
    for n in (1, 3):
        env = dict(os.environ, NUMBA_NUM_THREADS=str(n))
        res = subprocess.run([sys.executable, "-c", DETERMINISM_SCRIPT], env=env, capture_output=True,
                             text=True, check=True)
        out.add(res.stdout.strip())
    assert len(out) == 1


def test_same_seed_same_trajectory():
    trap = presets.trap("ba_trap")
    ba = presets.species("Ba+")
    res = []
    for _ in range(2):
        st = init_ensemble({ba: 50}, trap, seed=9, initial_temperature=0.05)
        evolve(st, ForceConfig("pseudopotential", trap, 1e-7), LaserCooling(),
               HeatingModel(rates={"Ba+": 10.0}), duration=2e-4)
        res.append(st.positions.copy())
    assert np.array_equal(res[0], res[1])


# ---------------------------------------------------------------- protocols

def test_ramp_extraction_heavy_first():
    trap = presets.trap("ba_trap")
    ba = presets.species("Ba+")
    af = presets.species("AF+")
    st = init_ensemble({ba: 40, af: 20}, trap, seed=2, initial_temperature=0.1)
    log = ramp_extraction(st, ForceConfig("pseudopotential", trap, 1e-7), (300.0, 20.0, 2e-3), v_offset=2.0)
    v = {name: np.median([e.v_rf for e in log if e.species == name]) for name in ("Ba+", "AF+")}
    assert v["AF+"] > v["Ba+"]
    assert [e.time for e in log] == sorted(e.time for e in log)


def test_ramp_extraction_validates_schedule():
    trap = presets.trap("ba_trap")
    st = init_ensemble({presets.species("Ba+"): 2}, trap, seed=1)
    cfg = ForceConfig("pseudopotential", trap, 1e-7)
    with pytest.raises(ValueError):
        ramp_extraction(st, cfg, (100.0, 200.0, 1e-3), v_offset=1.0)
    with pytest.raises(ValueError):
        ramp_extraction(st, cfg, (200.0, 100.0, 1e-3), v_offset=0.0)


def test_eject_heavy_removes_species_above_threshold():
    trap = presets.trap("ba_trap")
    ba = presets.species("Ba+")
    af = presets.species("AF+")
    st = init_ensemble({ba: 30, af: 10}, trap, seed=3, initial_temperature=0.01)
    cfg = ForceConfig("pseudopotential", trap, 1e-7)
    v_dc = 0.5 * (dc_ejection_threshold(trap, ba) + dc_ejection_threshold(trap, af))
    assert unstable_species(cfg, st, v_dc) == ["AF+"]
    rep = eject_heavy(st, cfg, v_dc, 2e-3, LaserCooling())
    assert rep.removed_species == ["AF+"]
    assert rep.retained_fraction("Ba+") == 1.0


def test_eject_light_removes_target_only():
    trap = presets.trap("be_trap")
    be = presets.species("Be+")
    h3 = presets.species("H3+")
    st = init_ensemble({be: 30, h3: 5}, trap, seed=4, initial_temperature=1.0)
    cfg = ForceConfig("pseudopotential", trap, ForceConfig.pseudo_timestep(trap, [be, h3]))
    rep = eject_light(st, cfg, "H3+", amplitude=20.0, duration=1e-3)
    assert rep.after["H3+"] == 0
    assert rep.retained_fraction("Be+") >= 0.9


def test_eject_light_warns_on_overlapping_species():
    trap = presets.trap("ba_trap")
    b138 = presets.species("Ba+")
    b137 = presets.species("Ba137+")
    st = init_ensemble({b138: 5, b137: 5}, trap, seed=4)
    cfg = ForceConfig("pseudopotential", trap, 1e-7)
    with pytest.warns(UserWarning, match="Ba"):
        eject_light(st, cfg, "Ba137+", amplitude=0.01, duration=1e-5)
