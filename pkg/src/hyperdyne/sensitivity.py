"""Analytic planning layer: SNR law, measurement-time regimes, polarization buildup and detection limits."""

import math
from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np
from scipy.linalg import expm

from .constants import GAMMA_E, density_to_molar

COHERENT = "coherent"
AVERAGING = "averaging"


@dataclass(frozen=True)
class SensitivityModel:
    """Parameters of SNR = C sqrt(N) rho P tau_m with N = N_m N_NV.

    ``n_sensors`` defaults to nv_density * volume.  ``coupling`` is the NV-sample
    interaction k in rad/s, which caps the useful sensing time at pi / (4 k).
    """

    density: float  # spins / m^3
    polarization: float
    volume: float  # m^3
    nv_density: float  # NV / m^3
    tau_m: float
    t2_nv: float = 100e-6
    coupling: float = 1.0
    n_measurements: float = 1.0
    n_sensors: Optional[float] = None
    calibration: float = 1.0

    def __post_init__(self):
        if self.n_sensors is None:
            object.__setattr__(self, "n_sensors", self.nv_density * self.volume)
        for name in ("density", "polarization", "volume", "nv_density", "tau_m", "t2_nv", "coupling",
                     "n_measurements", "n_sensors", "calibration"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite")

    @property
    def n_total(self):
        return self.n_measurements * self.n_sensors

    @property
    def max_tau(self):
        """Longest useful sensing time min(T2_NV, pi / 4k)."""
        return min(self.t2_nv, math.pi / (4.0 * self.coupling))

    def to_dict(self):
        return asdict(self)


def snr_estimate(model):
    return model.calibration * math.sqrt(model.n_total) * model.density * model.polarization * model.tau_m


def snr_from_photons(n_photons, coupling, tau_m):
    """Shot-noise form sqrt(N_phot) k tau_m."""
    return math.sqrt(n_photons) * coupling * tau_m


def coupling_from_field(b_field):
    """Interaction strength k (rad/s) of a transverse field amplitude in Tesla."""
    return GAMMA_E * b_field


def calibrate(measured_snr, model):
    """Calibration constant C that makes snr_estimate(model) equal ``measured_snr``."""
    if not measured_snr > 0:
        raise ValueError("measured SNR must be positive")
    return measured_snr / snr_estimate(replace(model, calibration=1.0))


@dataclass(frozen=True)
class TimeEstimate:
    time: float
    regime: str
    tau_m: float
    n_measurements: float
    crossover_tau: float
    reachable: bool = True

    def to_dict(self):
        return asdict(self)


def required_time(model, target_snr, overhead=0.0, max_time=math.inf):
    """Total time to reach ``target_snr``.

    While the needed sensing time fits below min(T2_NV, pi/4k) the model's N_m is
    kept and tau_m grows (1/T ~ sqrt(N_NV) rho P).  Beyond that tau_m is pinned and
    N_m grows (1/T ~ N_NV rho^2 P^2).  Both branches meet at the crossover.
    ``overhead`` is dead time per measurement.  Targets above ``max_time`` are
    returned with ``reachable=False``.
    """
    if not target_snr > 0:
        raise ValueError("target SNR must be positive")
    c_rho_p = model.calibration * model.density * model.polarization
    tau_star = model.max_tau
    tau_req = target_snr / (c_rho_p * math.sqrt(model.n_total))
    if tau_req <= tau_star:
        n_m, tau, regime = model.n_measurements, tau_req, COHERENT
    else:
        n_m = (target_snr / (c_rho_p * tau_star)) ** 2 / model.n_sensors
        tau, regime = tau_star, AVERAGING
    t = n_m * (tau + overhead)
    return TimeEstimate(t, regime, tau, n_m, tau_star, bool(t <= max_time))


def detection_limit_curve(volumes, budget, threshold, model, t_pol=0.0, n_seq=1, period=None, bayes_factor=1.0):
    """Smallest detectable spin density for each sample volume within ``budget`` seconds.

    Each polarization cycle costs t_pol + n_seq * T_L and yields n_seq measurements
    of length tau_m = min(model.tau_m, T2_NV, pi/4k).  N_NV = nv_density * V.
    ``bayes_factor`` > 1 divides the result by a measured Bayesian advantage.
    Returns (density m^-3, molar) arrays.
    """
    if not budget > 0:
        raise ValueError("budget must be positive")
    if not bayes_factor > 0:
        raise ValueError("bayes_factor must be positive")
    vols = np.asarray(volumes, dtype=float)
    if np.any(vols <= 0):
        raise ValueError("volumes must be positive")
    tau = min(model.tau_m, model.max_tau)
    t_l = tau if period is None else period
    n_m = n_seq * budget / (t_pol + n_seq * t_l)
    n_nv = model.nv_density * vols
    rho = threshold / (model.calibration * np.sqrt(n_m * n_nv) * model.polarization * tau) / bayes_factor
    return rho, density_to_molar(rho)


def microcoil_reference(diameters, reference_diameter=100e-6, normalization=1.0):
    """Relative sensitivity per unit volume of a coil: ~1/d above the reference diameter, ~1/sqrt(d) below."""
    d = np.asarray(diameters, dtype=float)
    if np.any(d <= 0):
        raise ValueError("diameters must be positive")
    r = reference_diameter / d
    return normalization * np.where(d >= reference_diameter, r, np.sqrt(r))


# ---------------------------------------------------------------------------
# polarization buildup

@dataclass(frozen=True)
class PolarizationConfig:
    """Two-compartment hyperpolarization model (near-NV shell and bulk slit).

    The per-spin transfer rate is efficiency * g^2 * tau_c, where g is the single
    nucleus flip-flop coupling; the total coupling is g_tot = g sqrt(N_I).
    Defaults give about 0.5% bulk polarization after 2 s with T1 = 2 s.
    """

    coupling: float = 154.3  # rad/s per nucleus, calibrated to 0.5% bulk at 2 s
    n_shell_spins: float = 1.0
    tau_c: float = 2.5e-6
    t1: float = 2.0
    diffusion: float = 1e-11
    lateral: float = 22e-9
    height: float = 150e-9
    shell_thickness: float = 10e-9
    exchange_length: Optional[float] = None
    efficiency: float = 1.0

    def __post_init__(self):
        for name in ("coupling", "n_shell_spins", "tau_c", "diffusion", "efficiency"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.t1 > 0:
            raise ValueError("t1 must be positive")
        if not 0 < self.shell_thickness <= self.height or not self.lateral > 0:
            raise ValueError("invalid region geometry")

    @property
    def total_coupling(self):
        return self.coupling * math.sqrt(self.n_shell_spins)

    @property
    def transfer_rate(self):
        return self.efficiency * self.coupling**2 * self.tau_c

    @property
    def shell_volume(self):
        return self.lateral**2 * self.shell_thickness

    @property
    def bulk_volume(self):
        return self.lateral**2 * (self.height - self.shell_thickness)

    @property
    def exchange_rate(self):
        if self.bulk_volume == 0:
            return 0.0
        L = self.exchange_length if self.exchange_length is not None else 0.5 * self.height
        return self.diffusion / L**2

    def to_dict(self):
        return asdict(self)


@dataclass
class BuildupTrajectory:
    times: np.ndarray
    shell: np.ndarray
    bulk: np.ndarray
    average: np.ndarray
    config: PolarizationConfig


def polarization_buildup(config, duration, n_points=201, initial=(0.0, 0.0)):
    """Exact solution of the linear shell/bulk rate equations on a uniform time grid.

    dPs/dt = G (1 - Ps) - Ps/T1 - k_ex (Vb/V) (Ps - Pb)
    dPb/dt = -Pb/T1 + k_ex (Vs/V) (Ps - Pb)
    """
    if not duration > 0:
        raise ValueError("duration must be positive")
    G = config.transfer_rate
    r1 = 1.0 / config.t1
    vs, vb = config.shell_volume, config.bulk_volume
    v = vs + vb
    k = config.exchange_rate
    A = np.array([[-G - r1 - k * vb / v, k * vb / v],
                  [k * vs / v, -r1 - k * vs / v]])
    b = np.array([G, 0.0])
    # augmented generator handles the constant source exactly
    M = np.zeros((3, 3))
    M[:2, :2] = A
    M[:2, 2] = b
    times = np.linspace(0.0, duration, n_points)
    step = expm(M * (times[1] - times[0]))
    x = np.array([initial[0], initial[1], 1.0])
    out = np.empty((n_points, 2))
    for i in range(n_points):
        out[i] = x[:2]
        x = step @ x
    shell, bulk = out[:, 0], out[:, 1]
    avg = (vs * shell + vb * bulk) / v
    return BuildupTrajectory(times, shell, bulk, avg, config)


def single_compartment_steady_state(rate, t1):
    return rate * t1 / (1.0 + rate * t1)
