"""Independent reference computations used as test oracles.

Nothing here imports the package's numerical code; constants come straight
from scipy so a unit slip in the package would show up as a mismatch.
"""

import math

import numpy as np
from scipy import constants as sc

MU0 = sc.mu_0
HBAR = sc.hbar
GAMMA_E = abs(sc.physical_constants["electron gyromag. ratio"][0])
GAMMA_P = 2.6752218744e8


def dipole_tensor_coupling(nv_pos, axis, e1, e2, position, gamma_n=GAMMA_P):
    """Secular couplings from the full dipolar tensor D_ab = k (3 u_a u_b - delta_ab)."""
    r = np.asarray(position, float) - np.asarray(nv_pos, float)
    dist = np.linalg.norm(r)
    u = r / dist
    k = MU0 * HBAR * GAMMA_E * gamma_n / (4 * math.pi * dist**3)
    D = k * (3.0 * np.outer(u, u) - np.eye(3))
    n = np.asarray(axis, float)
    return float(e1 @ D @ n), float(e2 @ D @ n), float(n @ D @ n)


def brms_monte_carlo(depth, density, axis, n_samples=2_000_000, seed=1, gamma_n=GAMMA_P):
    """B_rms (T) of unpolarized spin-1/2 nuclei in z > 0 by Monte Carlo over directions and radii.

    Directions are drawn uniformly on the upper hemisphere of the NV, radii from
    a pdf proportional to r^-4 beyond the surface crossing.
    """
    rng = np.random.default_rng(seed)
    cos_psi = rng.random(n_samples)
    phi = rng.uniform(0, 2 * math.pi, n_samples)
    sin_psi = np.sqrt(1 - cos_psi**2)
    u = np.stack([sin_psi * np.cos(phi), sin_psi * np.sin(phi), cos_psi], axis=1)
    r0 = depth / cos_psi
    r = r0 * rng.random(n_samples) ** (-1.0 / 3.0)
    pdf_r = 3.0 * r0**3 * r**-4
    c = u @ np.asarray(axis, float)
    pref = MU0 * HBAR * gamma_n / (4 * math.pi)
    b_perp2 = 9.0 * pref**2 * c**2 * (1 - c**2) / r**6
    integrand = b_perp2 * r**2 / pdf_r  # volume element r^2 dr dOmega
    integral = 2 * math.pi * np.mean(integrand)
    return math.sqrt(0.25 * density * integral)


def bernoulli_loglik_direct(counts, p):
    return float(np.log(np.prod(np.where(counts == 1, p, 1 - p))))


def central_gradient(f, x, h):
    x = np.asarray(x, float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        g[i] = (f(x + e) - f(x - e)) / (2 * h[i])
    return g


def sinc2_fwhm(t_rec):
    """FWHM (Hz) of |sinc|^2 for a rectangular record: 0.8859 / T."""
    from scipy.optimize import brentq

    x = brentq(lambda v: (math.sin(math.pi * v) / (math.pi * v)) ** 2 - 0.5, 0.1, 0.9)
    return 2 * x / t_rec


def qdyne_loglik(theta, counts, times, p_dark, p_bright, readout="poisson", scale=1.0):
    """Log-likelihood written out from the generative model, with normalization."""
    from scipy.special import gammaln

    g, delta, phi = theta
    P = 0.5 * (1.0 + np.sin(g * np.cos(delta * np.asarray(times) + phi)))
    lam = p_dark + (p_bright - p_dark) * P
    counts = np.asarray(counts, float)
    if readout == "bernoulli":
        return float(np.sum(np.where(counts == 1, np.log(lam), np.log1p(-lam))))
    rate = scale * lam
    return float(np.sum(counts * np.log(rate) - rate - gammaln(counts + 1)))


def grid_posterior_moments(logp_grid, axes):
    """Means and standard deviations of a density tabulated on a regular 3-D grid."""
    w = np.exp(logp_grid - logp_grid.max())
    w /= w.sum()
    out = []
    for k, ax in enumerate(axes):
        shape = [1, 1, 1]
        shape[k] = -1
        a = np.asarray(ax).reshape(shape)
        m = float(np.sum(w * a))
        out.append((m, float(np.sqrt(np.sum(w * (a - m) ** 2)))))
    return out
