import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coldions import presets
from coldions.constants import AMU, E_CHARGE, MBAR
from coldions.trapmodel import (
    GAMMA_CRYSTAL,
    IonSpecies,
    NeutralGas,
    RadialDeconfinement,
    Role,
    SpeciesRateRow,
    TrapConfig,
    calibrate_v_rf,
    collision_rates,
    common_heating_rate,
    cooling_rate,
    dc_ejection_threshold,
    energy_balance,
    equilibrium_temperature,
    is_stable,
    langevin_rate,
    mathieu_q,
    plasma_estimate,
    radius_ratio,
    secular_frequencies,
)

TWO_PI = 2 * math.pi


@pytest.fixture
def be():
    return presets.species("Be+")


@pytest.fixture
def be_trap_380():
    return TrapConfig(4.32e-3, 1.5e3, TWO_PI * 14.2e6, 380.0)


def test_config_invariants():
    with pytest.raises(ValueError):
        TrapConfig(0.0, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        TrapConfig(1e-3, -1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        TrapConfig(1e-3, 1.0, 1.0, math.inf)
    with pytest.raises(ValueError):
        IonSpecies("x", -1.0, E_CHARGE)
    with pytest.raises(ValueError):
        IonSpecies("x", 1e-26, 0.0)
    with pytest.raises(ValueError):
        IonSpecies("x", 1e-26, 1.5 * E_CHARGE)
    with pytest.raises(ValueError):
        NeutralGas("x", 1e-26, 1e-30, pressure=-1.0)


def test_mathieu_q_be_trap(be, be_trap_380):
    # 2 e 380 / (m_Be+ (2 pi 14.2 MHz)^2 (4.32 mm)^2) evaluated by hand
    assert mathieu_q(be_trap_380, be) == pytest.approx(0.05477, rel=1e-3)
    assert is_stable(be_trap_380, be)
    assert mathieu_q(be_trap_380.replace(v_rf=0.0), be) == 0.0
    assert mathieu_q(be_trap_380.replace(v_rf=760.0), be) == pytest.approx(
        2 * mathieu_q(be_trap_380, be), rel=1e-15
    )


def test_stability_limit(be, be_trap_380):
    trap = be_trap_380.replace(v_rf=380.0 * 0.95 / 0.05477)
    assert not is_stable(trap, be)


def test_secular_no_endcap(be, be_trap_380):
    w0, wr, wz = secular_frequencies(be_trap_380, be)
    assert wz == 0.0
    assert wr == w0
    assert w0 == pytest.approx(mathieu_q(be_trap_380, be) * be_trap_380.omega_rf / (2 * math.sqrt(2)))


def test_radial_deconfinement(be, be_trap_380):
    with pytest.raises(RadialDeconfinement):
        secular_frequencies(be_trap_380.replace(v_ec=1e4), be)


@pytest.mark.parametrize(
    "name, khz",
    [("Ar+", 63.0), ("N2+", 90.0), ("Ar2+", 126.0), ("H3+", 840.0), ("H2+", 1260.0), ("H+", 2520.0)],
)
def test_frequency_ladder(be, be_trap_380, name, khz):
    trap = calibrate_v_rf(be_trap_380, be, TWO_PI * 280e3)
    assert secular_frequencies(trap, be).omega_r / TWO_PI == pytest.approx(280e3, rel=1e-12)
    f = secular_frequencies(trap, presets.species(name)).omega_r / TWO_PI
    assert f == pytest.approx(khz * 1e3, rel=0.01)


def test_plasma_checkpoints(be, be_trap_380):
    trap = calibrate_v_rf(be_trap_380, be, TWO_PI * 280e3)
    est = plasma_estimate(trap, be, 10e-3)
    assert est.spacing == pytest.approx(30e-6, rel=0.10)
    assert est.t_crystal == pytest.approx(3e-3, rel=0.10)
    assert est.spacing == pytest.approx(est.density ** (-1 / 3), rel=1e-14)
    again = plasma_estimate(trap, be, est.t_crystal)
    assert again.gamma == pytest.approx(GAMMA_CRYSTAL, rel=1e-12)
    # Gamma * T is constant
    assert plasma_estimate(trap, be, 1e-3).gamma * 1e-3 == pytest.approx(
        plasma_estimate(trap, be, 7e-3).gamma * 7e-3, rel=1e-12
    )
    with pytest.raises(ValueError):
        plasma_estimate(trap, be, 0.0)


def test_density_matches_omega0_form(be, be_trap_380):
    from coldions.constants import EPSILON_0

    w0 = secular_frequencies(be_trap_380, be).omega0
    n = plasma_estimate(be_trap_380, be, 1.0).density
    assert n == pytest.approx(2 * EPSILON_0 * be.mass * w0**2 / be.charge**2, rel=1e-12)


def test_radius_ratio(be):
    ba = presets.species("Ba+")
    assert radius_ratio(be, be) == 1.0
    assert radius_ratio(IonSpecies.from_amu("a", 9.0), IonSpecies.from_amu("b", 138.0)) == pytest.approx(
        math.sqrt(9 / 138), rel=1e-3
    )
    heavy = IonSpecies.from_amu("P", 16000.0, 10, atomic=False)
    assert radius_ratio(IonSpecies.from_amu("b", 138.0, atomic=False), heavy) == pytest.approx(0.2937, rel=1e-3)
    with pytest.raises(ValueError):
        radius_ratio(ba, be)


def test_collision_rates_ba_n2():
    ba = presets.species("Ba+")
    n2 = presets.gas("N2", pressure=1e-9 * MBAR, temperature=300.0)
    h, gamma, mean = collision_rates(ba, 0.0, n2)
    assert gamma == pytest.approx(0.017, rel=0.05)
    assert h == pytest.approx(2.2, rel=0.05)
    assert mean == pytest.approx(128.0, rel=0.03)
    # independent numbers: mean = 2 mu/M * 3/2 * 300 K
    mu = ba.mass * n2.mass / (ba.mass + n2.mass)
    assert mean == pytest.approx(2 * mu / (ba.mass + n2.mass) * 450.0, rel=1e-12)
    assert h == gamma * mean
    h_eq, gamma_eq, _ = collision_rates(ba, 300.0, n2)
    assert h_eq == 0.0
    assert gamma_eq == gamma
    assert collision_rates(ba, 400.0, n2).h_coll < 0


def test_langevin_be_hd(be):
    hd = presets.gas("HD")
    k = langevin_rate(be, hd)
    assert k == pytest.approx(1.384e-15, rel=0.01)
    assert abs(k - 1.1e-15) / 1.1e-15 < 0.30
    # independent of pressure and temperature
    assert langevin_rate(be, hd.with_pressure(1.0)) == k


def test_langevin_scalings():
    g = NeutralGas("g", 1e-26, 1e-30)
    ion1 = IonSpecies("a", 2e-26, E_CHARGE)
    ion2 = IonSpecies("b", 2e-26, 2 * E_CHARGE)
    assert langevin_rate(ion2, g) == pytest.approx(2 * langevin_rate(ion1, g), rel=1e-14)
    # mu -> 4 mu: scale both masses by 4
    g4 = NeutralGas("g", 4e-26, 1e-30)
    ion4 = IonSpecies("a", 8e-26, E_CHARGE)
    assert langevin_rate(ion1, g) / langevin_rate(ion4, g4) == pytest.approx(2.0, rel=1e-14)


def test_equilibrium_and_cooling():
    ba = presets.species("Ba+", beta_over_m=866.4)
    assert equilibrium_temperature(ba, 11.55) == pytest.approx(13.33e-3, rel=1e-3)
    assert equilibrium_temperature(ba, 0.0) == 0.0
    ba760 = presets.species("Ba+", beta_over_m=760.0)
    assert cooling_rate(ba760, 25e-3) == pytest.approx(-19.0, rel=1e-12)
    dark = presets.species("Ba+", role="sympathetic")
    assert equilibrium_temperature(dark, 1.0) == math.inf


TABLE = [
    ("Ba+", Role.LASER_COOLED, 830, 25e-3, 9.9),
    ("AF+", Role.SYMPATHETIC, 200, 88e-3, 15.9),
    ("Ba_iso+", Role.SYMPATHETIC, 420, 37e-3, 9.9),
]


def _table_rows():
    rows = []
    for name, role, n, t, h in TABLE:
        sp = presets.species(name, role=role, beta_over_m=760.0 if role is Role.LASER_COOLED else 0.0)
        rows.append(SpeciesRateRow(sp, n, t, cooling_rate(sp, t), h))
    return rows


def test_energy_balance_table():
    res = energy_balance(_table_rows())
    # -19*830 + 9.9*830 + 15.9*200 + 9.9*420 = -215
    assert res.residual == pytest.approx(-215.0, abs=1e-9)
    assert res.lc_temperature_predicted == pytest.approx(24.66e-3, rel=1e-3)
    assert res.lc_temperature_predicted == pytest.approx(25e-3, rel=0.02)
    assert abs(res.residual) / res.gross_cooling < 0.02


def test_energy_balance_errors_and_trivial():
    rows = _table_rows()
    with pytest.raises(ValueError):
        energy_balance(rows[1:])
    with pytest.raises(ValueError):
        energy_balance([rows[0], rows[0]])
    zero = [SpeciesRateRow(r.species, r.count, 0.0 if r.species.is_laser_cooled else r.temperature, 0.0, 0.0)
            for r in rows]
    assert energy_balance(zero).residual == 0.0


def test_common_heating_rate():
    assert common_heating_rate(760.0, 20e-3, 800, 400) == pytest.approx(760 * 20e-3 * 800 / 1200)


def test_dc_threshold_ordering():
    trap = presets.trap("ba_trap")
    n2 = presets.species("N2+")
    ar = presets.species("Ar+")
    assert dc_ejection_threshold(trap, ar) < dc_ejection_threshold(trap, n2)


masses = st.floats(1.0, 500.0)
charges = st.integers(1, 5)
volts = st.floats(1.0, 2000.0)


@settings(max_examples=50, deadline=None)
@given(masses, charges, volts, st.floats(1.0, 5.0))
def test_q_scaling(m_u, z, v, factor):
    sp = IonSpecies(f"m{m_u}", m_u * AMU, z * E_CHARGE)
    trap = TrapConfig(4e-3, 1e3, TWO_PI * 5e6, v)
    q = mathieu_q(trap, sp)
    assert mathieu_q(trap.replace(v_rf=v * factor), sp) == pytest.approx(q * factor, rel=1e-12)
    assert mathieu_q(trap.replace(r0=4e-3 * factor), sp) == pytest.approx(q / factor**2, rel=1e-12)
    assert mathieu_q(trap.replace(omega_rf=trap.omega_rf * factor), sp) == pytest.approx(q / factor**2, rel=1e-12)
    heavy = IonSpecies("h", m_u * factor * AMU, z * E_CHARGE)
    assert mathieu_q(trap, heavy) == pytest.approx(q / factor, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(masses, masses)
def test_secular_ratio_inverse_mass(m1, m2):
    trap = TrapConfig(4e-3, 1e3, TWO_PI * 5e6, 100.0)
    a = IonSpecies("a", m1 * AMU, E_CHARGE)
    b = IonSpecies("b", m2 * AMU, E_CHARGE)
    ratio = secular_frequencies(trap, a).omega_r / secular_frequencies(trap, b).omega_r
    assert ratio == pytest.approx(m2 / m1, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(1.0, 500.0), st.floats(0.0, 1000.0), st.floats(1.0, 1000.0))
def test_collision_sign(m_u, t_ion, t_gas):
    sp = IonSpecies("a", m_u * AMU, E_CHARGE)
    g = NeutralGas("g", 28 * AMU, 1.76e-30, 1e-7, t_gas)
    h, gamma, mean = collision_rates(sp, t_ion, g)
    assert gamma > 0
    assert math.copysign(1, h) == math.copysign(1, t_gas - t_ion) or h == 0
    assert h == gamma * mean


@settings(max_examples=50, deadline=None)
@given(st.floats(10.0, 5000.0), st.floats(0.1, 100.0), st.integers(1, 1000))
def test_single_species_balance_zero(beta_over_m, h, n):
    sp = IonSpecies.from_amu("a", 9.0, 1, Role.LASER_COOLED, beta_over_m)
    t = equilibrium_temperature(sp, h)
    res = energy_balance([SpeciesRateRow(sp, n, t, cooling_rate(sp, t), h)])
    assert res.residual == pytest.approx(0.0, abs=1e-9 * h * n)
    assert res.lc_temperature_predicted == pytest.approx(t, rel=1e-12)
