"""Brownian dynamics of sample spins and the field they produce at the NV.

The statistical field is kept as a slowly varying complex envelope
``b_stat + i b_stat_q`` in a frame rotating at ``delta_ref`` (the beat offset of
the reference line).  The coherent M_z field is kept as envelope and absolute
phase.  The transverse field seen through the lock-in filter is

    B(t) = env(t) cos(phase(t)) + b_stat(t) cos(delta_ref t) - b_stat_q(t) sin(delta_ref t).
"""

import dataclasses
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import optimize

from . import kernels
from .constants import DIPOLAR_PREFACTOR
from .physics import NuclearSpecies, brms_analytic, larmor_frequency, validate_phase_condition
from .rng import stream


class InsufficientDataError(ValueError):
    pass


BOUNDARY_MODES = ("reflect", "reservoir")


@dataclass(frozen=True)
class SimulationBox:
    lx: float
    ly: float
    lz: float
    top: str = "reflect"

    def __post_init__(self):
        if min(self.lx, self.ly, self.lz) <= 0:
            raise ValueError("box extents must be positive")
        if self.top not in BOUNDARY_MODES:
            raise ValueError(f"top boundary must be one of {BOUNDARY_MODES}")

    @property
    def volume(self):
        return self.lx * self.ly * self.lz

    def check_nv(self, nv):
        margin = 3.0 * nv.depth
        if self.lx / 2 < margin or self.ly / 2 < margin or self.lz < margin:
            raise ValueError(f"box too small for a {nv.depth:g} m deep NV: need half-widths and height >= {margin:g} m")

    @classmethod
    def around(cls, nv, lateral=8.0, height=6.0, top="reflect"):
        """Box scaled to the NV depth: lateral width and height in units of depth."""
        return cls(lateral * nv.depth, lateral * nv.depth, height * nv.depth, top)


@dataclass
class SpinEnsemble:
    box: SimulationBox
    species: NuclearSpecies
    polarization: float
    seed: int
    positions: np.ndarray
    phases: np.ndarray
    mz: np.ndarray
    rng: np.random.Generator = field(repr=False)
    time: float = 0.0

    @property
    def n(self):
        return self.positions.shape[0]


def init_ensemble(box, species, polarization, seed):
    """Uniformly placed spins with random transverse phases.

    Longitudinal components are +-1 with P(+1) = (1 + P_n)/2, so the ensemble
    mean is P_n in expectation.
    """
    if not 0.0 <= polarization <= 1.0:
        raise ValueError(f"polarization must be in [0, 1], got {polarization}")
    n = int(round(species.density * box.volume))
    rng = stream(seed, "ensemble")
    pos = np.empty((n, 3))
    pos[:, 0] = rng.uniform(-box.lx / 2, box.lx / 2, n)
    pos[:, 1] = rng.uniform(-box.ly / 2, box.ly / 2, n)
    pos[:, 2] = rng.uniform(0.0, box.lz, n)
    phases = rng.uniform(0.0, 2 * np.pi, n)
    mz = np.where(rng.random(n) < 0.5 * (1.0 + polarization), 1.0, -1.0)
    return SpinEnsemble(box, species, polarization, int(seed), pos, phases, mz, stream(seed, "trace"))


def _wrap_lateral(x, length):
    return (x + length / 2) % length - length / 2


def _fold(z, lz):
    """Reflect into [0, lz] (handles multiple bounces)."""
    z = np.mod(z, 2 * lz)
    return np.where(z > lz, 2 * lz - z, z)


def advance(ensemble, dt, dt_max=None):
    """Move every spin by an independent Gaussian step of variance 2 D dt per axis."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if dt_max is not None and dt > dt_max * (1 + 1e-12):
        raise ValueError(f"dt={dt:g} exceeds dt_max={dt_max:g}")
    ens = ensemble
    D = ens.species.diffusion
    ens.time += dt
    if D == 0 or ens.n == 0:
        return ens
    box = ens.box
    step = ens.rng.standard_normal((ens.n, 3)) * math.sqrt(2.0 * D * dt)
    pos = ens.positions + step
    pos[:, 0] = _wrap_lateral(pos[:, 0], box.lx)
    pos[:, 1] = _wrap_lateral(pos[:, 1], box.ly)
    if box.top == "reflect":
        pos[:, 2] = _fold(pos[:, 2], box.lz)
    else:
        pos[:, 2] = np.abs(pos[:, 2])
        escaped = pos[:, 2] > box.lz
        k = int(np.count_nonzero(escaped))
        if k:
            # a fresh molecule from the reservoir replaces the one that left
            pos[escaped, 0] = ens.rng.uniform(-box.lx / 2, box.lx / 2, k)
            pos[escaped, 1] = ens.rng.uniform(-box.ly / 2, box.ly / 2, k)
            pos[escaped, 2] = 2 * box.lz - pos[escaped, 2]
            pos[escaped, 2] = _fold(pos[escaped, 2], box.lz)
            ens.phases[escaped] = ens.rng.uniform(0.0, 2 * np.pi, k)
            ens.mz[escaped] = np.where(ens.rng.random(k) < 0.5 * (1.0 + ens.polarization), 1.0, -1.0)
    ens.positions = pos
    return ens


@dataclass
class FieldTrace:
    dt: float
    b_stat: np.ndarray
    b_stat_q: np.ndarray
    coh_env: np.ndarray
    coh_phase: np.ndarray
    delta_ref: float = 0.0
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.b_stat)
        if not (len(self.b_stat_q) == len(self.coh_env) == len(self.coh_phase) == n):
            raise ValueError("trace channels must have equal length")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def n(self):
        return len(self.b_stat)

    @property
    def times(self):
        return np.arange(self.n) * self.dt

    @property
    def duration(self):
        return (self.n - 1) * self.dt

    @property
    def b_coh(self):
        return self.coh_env * np.cos(self.coh_phase)

    def stat_field(self, times=None):
        t = self.times if times is None else np.asarray(times, dtype=float)
        x, y = self.b_stat, self.b_stat_q
        if times is not None:
            x = np.interp(t, self.times, x)
            y = np.interp(t, self.times, y)
        return x * np.cos(self.delta_ref * t) - y * np.sin(self.delta_ref * t)

    def coherent_field(self, times=None):
        if times is None:
            return self.b_coh
        return np.interp(np.asarray(times, dtype=float), self.times, self.b_coh)

    def total_field(self, times=None):
        return self.coherent_field(times) + self.stat_field(times)

    def scaled(self, factor, coherent_factor=None):
        """Rescale field amplitudes (used to calibrate a reduced-density simulation)."""
        cf = factor if coherent_factor is None else coherent_factor
        return dataclasses.replace(self, b_stat=self.b_stat * factor, b_stat_q=self.b_stat_q * factor,
                                   coh_env=self.coh_env * cf, params={**self.params, "scale": factor, "coherent_scale": cf})


def line_offsets(b0, gamma_n, chemical_shifts, filter_center=None):
    """Rotating-frame offsets delta_j (rad/s) and normalized weights of each spectral line.

    ``chemical_shifts`` is a sequence of (shift_ppm, fraction).  Offsets are taken
    relative to ``filter_center`` (defaults to the unshifted Larmor frequency).
    """
    larmor = larmor_frequency(b0, gamma_n)
    center = larmor if filter_center is None else filter_center
    shifts = np.array([s for s, _ in chemical_shifts], dtype=float)
    frac = np.array([f for _, f in chemical_shifts], dtype=float)
    if frac.size == 0 or np.any(frac < 0) or frac.sum() <= 0:
        raise ValueError("chemical shift fractions must be non-negative with a positive sum")
    return larmor * (1.0 + 1e-6 * shifts) - center, frac / frac.sum()


def max_timestep(nv, species, deltas):
    bound = math.inf
    if species.diffusion > 0:
        bound = nv.depth**2 / (100.0 * species.diffusion)
    dmax = float(np.max(np.abs(deltas))) if len(deltas) else 0.0
    if dmax > 0:
        bound = min(bound, 1.0 / (50.0 * dmax))
    return bound


def field_trace(ensemble, nv, duration, dt, b0, chemical_shifts=((0.0, 1.0),), filter_center=None,
                image_range=3, tau_m=None, check_dt=True):
    """Integrate the ensemble forward and record the field at the NV on a uniform grid.

    The coherent term follows the scalar lock-in model: every spin contributes its
    transverse coupling magnitude weighted by P_n/2, all with the phase fixed by
    the pi/2 pulse, decaying with the nuclear T2.
    """
    ens = ensemble
    if ens.n == 0:
        raise ValueError("empty ensemble")
    if not duration >= dt > 0:
        raise ValueError("need duration >= dt > 0")
    ens.box.check_nv(nv)
    species = ens.species
    deltas, frac = line_offsets(b0, species.gamma, chemical_shifts, filter_center)
    delta_ref = float(deltas[0])
    dt_max = max_timestep(nv, species, deltas)
    if check_dt and dt > dt_max * (1 + 1e-12):
        raise ValueError(f"dt={dt:g} exceeds dt_max={dt_max:g}")

    meta = {"n_spins": ens.n, "polarization": ens.polarization, "depth": nv.depth, "b0": b0,
            "image_range": image_range, "deltas": deltas.tolist(), "fractions": frac.tolist(),
            "diffusion": species.diffusion, "density": species.density}
    if tau_m is not None:
        check = validate_phase_condition(brms_analytic(nv, species), tau_m)
        meta["phase_condition_ratio"] = check.ratio
        if not check.passed:
            warnings.warn(f"gamma_e*B_rms*tau_m exceeds pi/2 (ratio {check.ratio:.3f}); M_z signal will be randomized")

    n_steps = int(math.floor(duration / dt + 1e-9)) + 1
    cum = np.cumsum(frac)
    line = np.minimum(np.searchsorted(cum, (np.arange(ens.n) + 0.5) / ens.n), len(frac) - 1).astype(np.int64)
    e1, e2, axis = nv.frame()
    nv_pos = nv.position
    pref = DIPOLAR_PREFACTOR * species.gamma
    rel = deltas - delta_ref

    x = np.empty(n_steps)
    y = np.empty(n_steps)
    env = np.empty(n_steps)
    phase = np.empty(n_steps)
    for k in range(n_steps):
        t = k * dt
        sx, sy, coh = kernels.field_sums(ens.positions, nv_pos, e1, e2, axis, ens.phases, line,
                                         rel * t, ens.box.lx, ens.box.ly, int(image_range), pref)
        x[k] = sx
        y[k] = sy
        phasor = 0.5 * ens.polarization * np.sum(coh * np.exp(1j * rel * t)) * math.exp(-t / species.t2)
        env[k] = abs(phasor)
        phase[k] = delta_ref * t + (np.angle(phasor) if env[k] > 0 else 0.0)
        if k + 1 < n_steps:
            advance(ens, dt)
    return FieldTrace(dt, x, y, env, phase, delta_ref, ens.seed, meta)


class CorrelationFit(NamedTuple):
    b_rms: float
    tau_c: float
    residual: float
    lags: np.ndarray
    acf: np.ndarray


def autocorrelation(x, max_lag):
    """Unbiased autocovariance of a mean-subtracted series for lags 0..max_lag."""
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = x.size
    nfft = 1 << int(math.ceil(math.log2(2 * n)))
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[: max_lag + 1]
    return acov / (n - np.arange(max_lag + 1))


def fit_correlation(trace, expected_tau=None, fit_span=2.0):
    """Fit B_rms^2 exp(-tau/tau_c) to the empirical autocorrelation of the statistical field.

    Both envelope quadratures are used when present.  ``residual`` is
    ||acf - fit|| / ||acf|| over the fitted lags (0 .. fit_span * tau estimate).
    """
    n = trace.n
    if n < 8:
        raise InsufficientDataError("trace too short for a correlation estimate")
    half = n // 2
    channels = [trace.b_stat]
    if np.any(trace.b_stat_q != 0):
        channels.append(trace.b_stat_q)
    acf = np.mean([autocorrelation(c, half) for c in channels], axis=0)
    if not acf[0] > 0:
        raise InsufficientDataError("statistical field is identically zero")
    below = np.nonzero(acf < acf[0] / math.e)[0]
    if below.size == 0:
        raise InsufficientDataError("autocorrelation never decays below 1/e within half the trace")
    k = int(below[0])
    # linear interpolation of the 1/e crossing
    a0, a1 = acf[k - 1], acf[k]
    tau0 = (k - 1 + (a0 - acf[0] / math.e) / (a0 - a1)) * trace.dt
    tau_check = expected_tau if expected_tau is not None else tau0
    if n * trace.dt < 20.0 * tau_check:
        raise InsufficientDataError(f"trace duration {n * trace.dt:g} s < 20 tau_c ({tau_check:g} s)")

    kmax = min(half, max(3, int(math.ceil(fit_span * tau0 / trace.dt))))
    lags = np.arange(kmax + 1) * trace.dt
    y = acf[: kmax + 1]
    scale = acf[0]

    def model(k, amp, tc):
        return amp * np.exp(-k / tc)

    # fit in units of (acf[0], dt) so the solver sees O(1) numbers
    kk = np.arange(kmax + 1, dtype=float)
    (amp, tc), _ = optimize.curve_fit(model, kk, y / scale, p0=(1.0, max(tau0 / trace.dt, 1e-3)),
                                      bounds=([0.0, 1e-6], [np.inf, np.inf]))
    resid = float(np.linalg.norm(y / scale - model(kk, amp, tc)) / np.linalg.norm(y / scale))
    return CorrelationFit(float(math.sqrt(amp * scale)), float(tc * trace.dt), resid, lags, y)


def _ou_trace(b_rms, tau_c, n, dt, rng, seed, delta, coherent, meta):
    a = math.exp(-dt / tau_c)
    sig = b_rms * math.sqrt(-math.expm1(-2.0 * dt / tau_c))
    chans = []
    for _ in range(2):
        x0 = b_rms * rng.standard_normal()
        w = sig * rng.standard_normal(n - 1)
        chans.append(np.concatenate(([x0], kernels.ar1(x0, a, w))))
    t = np.arange(n) * dt
    if coherent is None:
        env = np.zeros(n)
        phase = delta * t
    else:
        amp, cdelta, t2 = coherent
        env = amp * np.exp(-t / t2)
        phase = cdelta * t
    return FieldTrace(dt, chans[0], chans[1], env, phase, float(delta), int(seed),
                      {"model": "ou", "b_rms": b_rms, "tau_c": tau_c, **meta})


def ou_surrogate_trace(b_rms, tau_c, duration, dt, seed, delta=0.0, coherent=None):
    """Exact-discretization Ornstein-Uhlenbeck stand-in for the statistical field.

    Each envelope quadrature is an independent stationary OU process with
    variance ``b_rms**2`` and correlation time ``tau_c``.  ``coherent`` optionally
    adds an analytic M_z line given as (amplitude_T, delta, t2).
    """
    if not tau_c > dt:
        raise ValueError("need tau_c > dt")
    if b_rms < 0:
        raise ValueError("b_rms must be >= 0")
    n = int(math.floor(duration / dt + 1e-9)) + 1
    return _ou_trace(b_rms, tau_c, n, dt, stream(seed, "surrogate"), seed, delta, coherent, {})


def sampled_ou_trace(b_rms, tau_c, n_samples, dt, seed, index=0, delta=0.0, coherent=None):
    """The same OU process observed only every ``dt``, for any ratio dt / tau_c.

    Used to feed the statistical field of run ``index`` to a protocol sampling at
    T_L when the correlation time is far below T_L (fast diffusion).
    """
    if not (tau_c > 0 and dt > 0):
        raise ValueError("need tau_c > 0 and dt > 0")
    if b_rms < 0 or n_samples < 1:
        raise ValueError("need b_rms >= 0 and n_samples >= 1")
    return _ou_trace(b_rms, tau_c, int(n_samples), dt, stream(seed, "surrogate", index), seed, delta, coherent,
                     {"run_index": int(index)})


def coherent_amplitude(nv, species, polarization, box, image_range=0, grid=48):
    """Coherent M_z field (Tesla) of a uniformly polarized box under the scalar lock-in model.

    Deterministic midpoint quadrature of (P_n/2) rho |B_perp| over the box and its images.
    """
    e1, e2, n = nv.frame()
    pref = DIPOLAR_PREFACTOR * species.gamma
    xs = (np.arange(grid) + 0.5) / grid
    # cluster z nodes near the surface where the kernel is largest
    zs = box.lz * xs**2
    wz = box.lz * 2 * xs / grid
    X, Y, Z = np.meshgrid((xs - 0.5) * box.lx, (xs - 0.5) * box.ly, zs, indexing="ij")
    W = np.broadcast_to(wz, X.shape) * (box.lx / grid) * (box.ly / grid)
    total = 0.0
    for a in range(-image_range, image_range + 1):
        for b in range(-image_range, image_range + 1):
            r = np.stack([X + a * box.lx, Y + b * box.ly, Z + nv.depth], axis=-1)
            dist = np.linalg.norm(r, axis=-1)
            c = (r @ n) / dist
            amp = 3.0 * pref * np.abs(c) / dist**3
            perp = np.hypot(r @ e1, r @ e2) / dist
            total += np.sum(W * amp * perp)
    return 0.5 * polarization * species.density * total
