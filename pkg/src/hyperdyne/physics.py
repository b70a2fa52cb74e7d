"""Sensor and sample descriptions, dipolar couplings and analytic field statistics.

Geometry convention: the diamond surface is the plane z = 0, the sample fills
z > 0 and the NV center sits at (0, 0, -depth).  Couplings are returned in
rad/s per unit nuclear spin operator; divide by ``GAMMA_E`` for Tesla.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import integrate

from .constants import AXIS_001, DIPOLAR_PREFACTOR, GAMMA_1H, GAMMA_E, WATER_PROTON_DENSITY


@dataclass(frozen=True)
class NVSensor:
    depth: float
    axis: tuple = AXIS_001
    t2: float = 100e-6
    p_bright: float = 0.040
    p_dark: float = 0.025

    def __post_init__(self):
        if not self.depth > 0:
            raise ValueError(f"NV depth must be positive, got {self.depth}")
        if not 0.0 <= self.p_dark < self.p_bright <= 1.0:
            raise ValueError("need 0 <= p_dark < p_bright <= 1")
        if not self.t2 > 0:
            raise ValueError("T2 of the NV must be positive")
        ax = np.asarray(self.axis, dtype=float)
        norm = np.linalg.norm(ax)
        if ax.shape != (3,) or not norm > 0:
            raise ValueError("axis must be a non-zero 3-vector")
        object.__setattr__(self, "axis", tuple(float(v) for v in ax / norm))

    @property
    def position(self):
        return np.array([0.0, 0.0, -self.depth])

    def frame(self):
        """Orthonormal (e1, e2, n) with n along the NV axis."""
        n = np.asarray(self.axis)
        ref = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = ref - np.dot(ref, n) * n
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(n, e1)
        return e1, e2, n


@dataclass(frozen=True)
class NuclearSpecies:
    gamma: float = GAMMA_1H
    density: float = WATER_PROTON_DENSITY
    diffusion: float = 2.3e-9
    t1: float = 3.0
    t2: float = 1.0
    name: str = "1H"

    def __post_init__(self):
        if self.density < 0:
            raise ValueError("density must be >= 0")
        if self.diffusion < 0:
            raise ValueError("diffusion coefficient must be >= 0")
        if not (self.t1 >= self.t2 > 0):
            raise ValueError("need T1 >= T2 > 0")


class CouplingComponents(NamedTuple):
    """Secular dipolar coupling (rad/s) in the NV frame."""

    a_x: float
    a_y: float
    a_z: float

    @property
    def a_perp(self):
        return float(np.hypot(self.a_x, self.a_y))


class PhaseCheck(NamedTuple):
    passed: bool
    ratio: float


def dipolar_coupling(nv, position, gamma_n=GAMMA_1H):
    """Point-dipole coupling between the NV electron spin and a nucleus at ``position``.

    Returns the secular components ``A_z = k (3 cos^2 t - 1)`` and the
    transverse pair ``A_{x,y} = 3 k cos t (r_hat . e_{1,2})`` with
    ``k = mu0 hbar gamma_e gamma_n / (4 pi r^3)``.
    """
    r = np.asarray(position, dtype=float) - nv.position
    dist = float(np.linalg.norm(r))
    if not dist > 0 or not np.isfinite(dist):
        raise ValueError("nucleus coincides with the NV center")
    e1, e2, n = nv.frame()
    u = r / dist
    k = DIPOLAR_PREFACTOR * GAMMA_E * gamma_n / dist**3
    c = float(np.dot(u, n))
    return CouplingComponents(3.0 * k * c * float(np.dot(u, e1)),
                              3.0 * k * c * float(np.dot(u, e2)),
                              k * (3.0 * c * c - 1.0))


def _hemisphere_factor(axis):
    """Integral over the upper hemisphere of 9 c^2 (1 - c^2) cos^3(psi) / 3 dOmega.

    c is the cosine to the NV axis, psi the polar angle from the surface normal.
    Equals pi/4 when the NV axis is the surface normal.
    """
    n = np.asarray(axis, dtype=float)

    def integrand(phi, psi):
        s = np.sin(psi)
        u = np.array([s * np.cos(phi), s * np.sin(phi), np.cos(psi)])
        c = u @ n
        return 3.0 * c * c * (1.0 - c * c) * np.cos(psi) ** 3 * s

    val, _ = integrate.dblquad(integrand, 0.0, np.pi / 2, 0.0, 2 * np.pi, epsabs=0.0, epsrel=1e-8)
    return val


def brms_analytic(nv, species):
    """rms statistical field (Tesla) from unpolarized spins filling the half-space.

    Uses <I_x^2> = 1/4 for every spin.  For an NV axis normal to the surface the
    half-space integral is closed-form, B_rms^2 = (mu0 hbar gamma_n / 4 pi)^2 pi rho / (16 d^3);
    other orientations use adaptive quadrature over the hemisphere.
    """
    if not species.density > 0:
        raise ValueError("density must be positive")
    n = np.asarray(nv.axis)
    if abs(abs(n[2]) - 1.0) < 1e-12:
        factor = np.pi / 4.0
    else:
        factor = _hemisphere_factor(n)
    pref = DIPOLAR_PREFACTOR * species.gamma
    b2 = 0.25 * species.density * pref**2 * factor / nv.depth**3
    return float(np.sqrt(b2))


def larmor_frequency(b0, gamma_n=GAMMA_1H):
    """Angular Larmor frequency gamma_n * B0 (rad/s)."""
    return gamma_n * b0


def validate_phase_condition(b_rms, tau_m):
    """Check gamma_e * B_rms * tau_m < pi/2; ``ratio`` is the fraction of the bound used."""
    if b_rms < 0 or not tau_m > 0:
        raise ValueError("need b_rms >= 0 and tau_m > 0")
    ratio = GAMMA_E * b_rms * tau_m / (np.pi / 2)
    return PhaseCheck(bool(ratio < 1.0), float(ratio))


def water(diffusion=2.3e-9, t1=3.0, t2=1.0):
    return NuclearSpecies(GAMMA_1H, WATER_PROTON_DENSITY, diffusion, t1, t2, "1H (water)")
