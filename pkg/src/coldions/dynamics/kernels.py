"""Compiled inner loops of the integrator.

Positions and velocities are passed as separate x/y/z arrays (structure of
arrays), which lets the pair loop vectorize. Each ion sums its Coulomb force
over all partners in index order, so the result does not depend on how the
outer loop is split across threads.
"""

import math

import numba as nb
import numpy as np

from ..constants import K_COULOMB

if nb.config.THREADING_LAYER == "default":
    # OpenMP is always available with the numba wheels; the default search
    # would try (and warn about) an outdated TBB first
    nb.config.THREADING_LAYER = "omp"

# no nnan/ninf: the integrator must see non-finite values to report them
_JIT = dict(fastmath={"nsz", "arcp", "contract", "afn", "reassoc"}, error_model="numpy", cache=True)

MODE_PSEUDO = 0
MODE_RF = 1

OK = 0
ERR_NONFINITE = 1
ERR_CLOSE_PAIR = 2

#: Minimum allowed pair separation squared (100 nm)^2.
MIN_PAIR_R2 = 1e-14


@nb.njit(parallel=True, **_JIT)
def _accelerations(px, py, pz, qk, inv_m, qeff, kx, ky, kz, fz0, crf, cos_rf, e_x, e_y, e_z,
                   coulomb, ax, ay, az, fc2):
    n = px.shape[0]
    for i in nb.prange(n):
        xi = px[i]
        yi = py[i]
        zi = pz[i]
        fx = 0.0
        fy = 0.0
        fz = 0.0
        if coulomb:
            for j in range(n):
                dx = xi - px[j]
                dy = yi - py[j]
                dz = zi - pz[j]
                r2 = dx * dx + dy * dy + dz * dz
                # self term: r = 1 m and zero offset, contributes nothing
                r2 += 1.0 if j == i else 0.0
                inv = 1.0 / math.sqrt(r2)
                s = qk[j] * inv * inv * inv
                fx += s * dx
                fy += s * dy
                fz += s * dz
            fx *= qeff[i]
            fy *= qeff[i]
            fz *= qeff[i]
            fc2[i] = fx * fx + fy * fy + fz * fz
        c = crf[i] * cos_rf
        fx += (c - kx[i]) * xi + qeff[i] * e_x
        fy += (-c - ky[i]) * yi + qeff[i] * e_y
        fz += -kz[i] * zi + fz0[i] + qeff[i] * e_z
        ax[i] = fx * inv_m[i]
        ay[i] = fy * inv_m[i]
        az[i] = fz * inv_m[i]


@nb.njit(**_JIT)
def _drive_phase(t, f0, rate, f_end, t_on):
    tau = t - t_on
    if rate == 0.0:
        return 2.0 * math.pi * f0 * tau
    tau_end = (f_end - f0) / rate
    if tau <= tau_end:
        return 2.0 * math.pi * (f0 * tau + 0.5 * rate * tau * tau)
    return 2.0 * math.pi * (f0 * tau_end + 0.5 * rate * tau_end * tau_end + f_end * (tau - tau_end))


@nb.njit(**_JIT)
def _field(t, drive):
    # drive = [amp, dx, dy, dz, f0, rate, f_end, t_on]
    amp = drive[0]
    if amp == 0.0:
        return 0.0, 0.0, 0.0
    e = amp * math.cos(_drive_phase(t, drive[4], drive[5], drive[6], drive[7]))
    return e * drive[1], e * drive[2], e * drive[3]


@nb.njit(**_JIT)
def integrate(px, py, pz, vx, vy, vz, mass, charge, alive, kx, ky, kz, fz0, crf,
              damp_x, damp_y, damp_z, sigma, noise, omega_rf, mode, drive, coulomb,
              t0, dt, nsteps, r0, zlim, avg_steps, vsum, death_step, ax, ay, az, fc2):
    """Advance ``nsteps`` velocity-Verlet steps in place.

    Returns ``(status, step, ion)``; ``status`` is OK or an error code with the
    offending step and ion. ``vsum`` accumulates the velocities of the last
    ``avg_steps`` steps. Lost ions get ``alive = False`` and their step index
    in ``death_step``.
    """
    n = px.shape[0]
    inv_m = np.empty(n)
    qeff = np.empty(n)
    qk = np.empty(n)
    for i in range(n):
        inv_m[i] = 1.0 / mass[i]
        qeff[i] = charge[i] if alive[i] else 0.0
        qk[i] = K_COULOMB * qeff[i]
    has_noise = noise.shape[0] > 0
    # A partner closer than 100 nm exerts a force of at least k q_i q_min / r^2,
    # orders of magnitude above any other contribution, so the Coulomb force
    # magnitude flags close pairs without a separate distance search.
    qmin = 1e300
    for i in range(n):
        if alive[i]:
            qmin = min(qmin, abs(charge[i]))
    fc2_max = np.empty(n)
    for i in range(n):
        lim = 0.5 * K_COULOMB * abs(charge[i]) * qmin / MIN_PAIR_R2
        fc2_max[i] = lim * lim
    for i in range(n):
        vsum[i, 0] = 0.0
        vsum[i, 1] = 0.0
        vsum[i, 2] = 0.0

    for i in range(n):
        if alive[i] and not (math.isfinite(px[i]) and math.isfinite(py[i]) and math.isfinite(pz[i])
                             and math.isfinite(vx[i]) and math.isfinite(vy[i]) and math.isfinite(vz[i])):
            return ERR_NONFINITE, -1, i

    t = t0
    cos_rf = math.cos(omega_rf * t) if mode == MODE_RF else 0.0
    e_x, e_y, e_z = _field(t, drive)
    _accelerations(px, py, pz, qk, inv_m, qeff, kx, ky, kz, fz0, crf, cos_rf, e_x, e_y, e_z,
                   coulomb, ax, ay, az, fc2)
    if coulomb:
        for i in range(n):
            if alive[i] and fc2[i] > fc2_max[i]:
                return ERR_CLOSE_PAIR, -1, i
    half = 0.5 * dt
    for s in range(nsteps):
        for i in range(n):
            if alive[i]:
                vx[i] += half * ax[i]
                vy[i] += half * ay[i]
                vz[i] += half * az[i]
                px[i] += dt * vx[i]
                py[i] += dt * vy[i]
                pz[i] += dt * vz[i]
        t = t0 + (s + 1) * dt
        cos_rf = math.cos(omega_rf * t) if mode == MODE_RF else 0.0
        e_x, e_y, e_z = _field(t, drive)
        _accelerations(px, py, pz, qk, inv_m, qeff, kx, ky, kz, fz0, crf, cos_rf, e_x, e_y, e_z,
                       coulomb, ax, ay, az, fc2)
        lost = False
        for i in range(n):
            if not alive[i]:
                continue
            vx[i] = (vx[i] + half * ax[i]) * damp_x[i]
            vy[i] = (vy[i] + half * ay[i]) * damp_y[i]
            vz[i] = (vz[i] + half * az[i]) * damp_z[i]
            if has_noise:
                sg = sigma[i]
                vx[i] += sg * noise[s, i, 0]
                vy[i] += sg * noise[s, i, 1]
                vz[i] += sg * noise[s, i, 2]
            if not (math.isfinite(px[i]) and math.isfinite(py[i]) and math.isfinite(pz[i])
                    and math.isfinite(vx[i]) and math.isfinite(vy[i]) and math.isfinite(vz[i])):
                return ERR_NONFINITE, s, i
            if coulomb and fc2[i] > fc2_max[i]:
                return ERR_CLOSE_PAIR, s, i
            if px[i] * px[i] + py[i] * py[i] > r0 * r0 or abs(pz[i]) > zlim:
                alive[i] = False
                death_step[i] = s
                lost = True
            if s >= nsteps - avg_steps:
                vsum[i, 0] += vx[i]
                vsum[i, 1] += vy[i]
                vsum[i, 2] += vz[i]
        if lost:
            for i in range(n):
                qeff[i] = charge[i] if alive[i] else 0.0
                qk[i] = K_COULOMB * qeff[i]
                if not alive[i]:
                    # park lost ions far away so they never meet a live one
                    px[i] = 1e6 * (i + 1)
                    py[i] = 0.0
                    pz[i] = 0.0
            _accelerations(px, py, pz, qk, inv_m, qeff, kx, ky, kz, fz0, crf, cos_rf, e_x, e_y, e_z,
                           coulomb, ax, ay, az, fc2)
    return OK, nsteps, -1


@nb.njit(**_JIT)
def coulomb_energy(px, py, pz, charge, alive):
    n = px.shape[0]
    e = 0.0
    for i in range(n):
        if not alive[i]:
            continue
        ei = 0.0
        for j in range(i + 1, n):
            if not alive[j]:
                continue
            dx = px[i] - px[j]
            dy = py[i] - py[j]
            dz = pz[i] - pz[j]
            ei += charge[j] / math.sqrt(dx * dx + dy * dy + dz * dz)
        e += charge[i] * ei
    return K_COULOMB * e


@nb.njit(**_JIT)
def coulomb_forces(px, py, pz, charge):
    """Plain Coulomb forces (N), used by tests and diagnostics."""
    n = px.shape[0]
    f = np.zeros((n, 3))
    for i in range(n):
        for j in range(n):
            if j == i:
                continue
            dx = px[i] - px[j]
            dy = py[i] - py[j]
            dz = pz[i] - pz[j]
            r2 = dx * dx + dy * dy + dz * dz
            s = K_COULOMB * charge[i] * charge[j] / (r2 * math.sqrt(r2))
            f[i, 0] += s * dx
            f[i, 1] += s * dy
            f[i, 2] += s * dz
    return f
