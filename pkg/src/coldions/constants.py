"""Physical constants (SI, CODATA via scipy) used throughout the package."""

import math

from scipy import constants as _c

E_CHARGE = _c.e
EPSILON_0 = _c.epsilon_0
K_B = _c.k
H_PLANCK = _c.h
C_LIGHT = _c.c
AMU = _c.physical_constants["atomic mass constant"][0]
M_ELECTRON = _c.m_e

#: Coulomb constant 1/(4 pi eps0)
K_COULOMB = 1.0 / (4.0 * math.pi * EPSILON_0)

#: 1 mbar in Pa
MBAR = 100.0
#: 1 Angstrom^3 in m^3
ANGSTROM3 = 1e-30
