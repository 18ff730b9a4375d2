"""Generate the toy HD+-like level scheme shipped in coldions/data/hdplus_toy.levels.

The numbers are order-of-magnitude stand-ins, not molecular data:

- rotational constant B = 12 cm^-1 (chosen: with the real value of about
  22 cm^-1 a 300 K Boltzmann distribution puts less than 5% in J = 6; the
  smaller value keeps more than 5% up to J = 6)
- vibrational term G(v) = we (v + 1/2) - wexe (v + 1/2)^2 with
  we = 1913 cm^-1, wexe = 52 cm^-1; B_v = B - alpha (v + 1/2), alpha = 0.5 cm^-1
- pure rotational lines J -> J-1 within each v:
  A = A10 * J^3 * 3J / (2J + 1) with A10 = 5e-4 1/s (nu^3 and Hoenl-London scaling)
- vibrational lines v -> v-1 with dJ = -1 / +1 shares J/(2J+1), (J+1)/(2J+1)
  of a band rate 100 v 1/s (harmonic scaling of a 100/s fundamental)
- UV dissociation cross section 2.4e-22 m^2 from every level of the top
  vibrational state, zero elsewhere

Usage: python tools/make_hdplus_toy.py [output path]
"""

import sys
from pathlib import Path

from scipy.constants import c, h

CM = 100.0 * h * c  # J per cm^-1
B0, ALPHA, WE, WEXE = 12.0, 0.5, 1913.0, 52.0
A10, A_VIB = 5e-4, 100.0
V_MAX, J_MAX = 4, 10
SIGMA_UV = 2.4e-22


def energy(v, j):
    g = WE * (v + 0.5) - WEXE * (v + 0.5) ** 2
    bv = B0 - ALPHA * (v + 0.5)
    return (g + bv * j * (j + 1) - (WE * 0.5 - WEXE * 0.25)) * CM


def main(out):
    lines = [
        "# Toy HD+-like level scheme (non-authoritative, order-of-magnitude values).",
        "# Generated by tools/make_hdplus_toy.py; see that script for the model.",
        "# records: level v J energy_J | line v J v' J' A_per_s (upper -> lower) | diss v J sigma_m2",
    ]
    for v in range(V_MAX + 1):
        for j in range(J_MAX + 1):
            lines.append(f"level {v} {j} {energy(v, j)!r}")
    for v in range(V_MAX + 1):
        for j in range(1, J_MAX + 1):
            a = A10 * j**3 * 3 * j / (2 * j + 1)
            lines.append(f"line {v} {j} {v} {j - 1} {a!r}")
    for v in range(1, V_MAX + 1):
        for j in range(J_MAX + 1):
            band = A_VIB * v
            if j > 0:
                lines.append(f"line {v} {j} {v - 1} {j - 1} {band * j / (2 * j + 1)!r}")
            if j < J_MAX:
                share = (j + 1) / (2 * j + 1) if j > 0 else 1.0
                lines.append(f"line {v} {j} {v - 1} {j + 1} {band * share!r}")
    for j in range(J_MAX + 1):
        lines.append(f"diss {V_MAX} {j} {SIGMA_UV!r}")
    Path(out).write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    default = Path(__file__).resolve().parent.parent / "src" / "coldions" / "data" / "hdplus_toy.levels"
    main(sys.argv[1] if len(sys.argv) > 1 else default)
