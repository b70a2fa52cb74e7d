"""Physical constants (CODATA 2018 via scipy.constants) and unit helpers."""

import numpy as np
from scipy import constants as _c

MU0 = _c.mu_0
HBAR = _c.hbar
AVOGADRO = _c.N_A

# Magnitudes in rad s^-1 T^-1.  Signs are dropped: only |coupling| enters the
# lock-in phase, and the rotating-frame offsets are configured explicitly.
GAMMA_E = abs(_c.physical_constants["electron gyromag. ratio"][0])
GAMMA_1H = _c.physical_constants["proton gyromag. ratio"][0]

# mu0 * hbar / (4 pi): multiply by gamma_n / r^3 to get Tesla per unit spin.
DIPOLAR_PREFACTOR = MU0 * HBAR / (4.0 * np.pi)

WATER_MOLAR = 997.0 / 18.015  # mol/L of neat water at 25 C
WATER_PROTON_DENSITY = 2.0 * WATER_MOLAR * 1e3 * AVOGADRO  # spins / m^3

AXIS_001 = (0.0, 0.0, 1.0)
AXIS_111 = tuple(np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0))


def molar_to_density(concentration, spins_per_molecule=1):
    """mol/L -> spins/m^3."""
    return np.asarray(concentration) * 1e3 * AVOGADRO * spins_per_molecule


def density_to_molar(density, spins_per_molecule=1):
    """spins/m^3 -> mol/L."""
    return np.asarray(density) / (1e3 * AVOGADRO * spins_per_molecule)
