"""Qdyne and M_z-Qdyne measurement sequences down to photon counts."""

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .constants import GAMMA_E
from .diffusion import FieldTrace
from .rng import stream

READOUT_MODES = ("bernoulli", "poisson")
DEFAULT_DEAD_TIME = 2.5e-6


@dataclass(frozen=True)
class ProtocolConfig:
    """Timing and readout of one Qdyne record.

    ``n_measurements`` is the number of lock-in slots in one record (spaced by
    ``period``); repeated records are combined with :func:`average_runs`.
    """

    tau_m: float
    n_measurements: int
    period: Optional[float] = None
    n_sensors: int = 1
    readout: str = "bernoulli"
    p_bright: float = 0.040
    p_dark: float = 0.025
    literal_formula: bool = False

    def __post_init__(self):
        if self.period is None:
            object.__setattr__(self, "period", self.tau_m + DEFAULT_DEAD_TIME)
        if not self.tau_m > 0:
            raise ValueError("tau_m must be positive")
        if self.period < self.tau_m:
            raise ValueError("sequence period T_L must be >= tau_m")
        if self.n_measurements < 1 or self.n_sensors < 1:
            raise ValueError("need n_measurements >= 1 and n_sensors >= 1")
        if self.readout not in READOUT_MODES:
            raise ValueError(f"readout must be one of {READOUT_MODES}")
        if self.readout == "bernoulli" and self.n_sensors != 1:
            raise ValueError("single-shot Bernoulli readout is defined for one sensor; use 'poisson'")
        if not 0.0 <= self.p_dark < self.p_bright <= 1.0:
            raise ValueError("need 0 <= p_dark < p_bright <= 1")

    @property
    def times(self):
        return np.arange(self.n_measurements) * self.period

    @property
    def phase_gain(self):
        """Lock-in phase per Tesla of transverse field: 4 gamma_e tau_m / pi."""
        return 4.0 * GAMMA_E * self.tau_m / math.pi

    def amplitude_for_g(self, g):
        """Field amplitude (T) that gives a signal amplitude g = 4 k tau_m / pi."""
        return g / self.phase_gain

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class AnalyticSignal:
    """Closed-form M_z line, g e^{-t/T2} cos(delta t + phi), with an optional statistical trace."""

    g: float
    delta: float
    phi: float = 0.0
    t2: float = math.inf
    stat: Optional[FieldTrace] = None


@dataclass
class PhotonRecord:
    counts: np.ndarray
    config: ProtocolConfig
    probabilities: Optional[np.ndarray] = None
    run_index: int = 0
    seed: Optional[int] = None

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if self.counts.shape != (self.config.n_measurements,):
            raise ValueError("counts length must equal n_measurements")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    @property
    def times(self):
        return self.config.times


@dataclass
class AveragedSignal:
    mean: np.ndarray
    variance: np.ndarray
    n_averages: int
    config: ProtocolConfig
    n_records: int = 1
    extra: dict = field(default_factory=dict)

    @property
    def times(self):
        return self.config.times


def qdyne_probability(g, delta, t, phi, literal=False):
    """Lock-in population P = (1 + sin(g cos(delta t + phi))) / 2.

    ``literal=True`` evaluates sin(...) + 1/2 clipped to [0, 1] instead.
    """
    inner = np.sin(np.asarray(g) * np.cos(np.asarray(delta) * np.asarray(t) + phi))
    if literal:
        return np.clip(inner + 0.5, 0.0, 1.0)
    return 0.5 * (1.0 + inner)


def _lockin_argument(signal, config):
    t = config.times
    if isinstance(signal, AnalyticSignal):
        arg = signal.g * np.exp(-t / signal.t2) * np.cos(signal.delta * t + signal.phi)
        if signal.stat is not None:
            _check_length(signal.stat, config)
            arg = arg + config.phase_gain * signal.stat.stat_field(t)
        return arg
    if isinstance(signal, FieldTrace):
        _check_length(signal, config)
        return config.phase_gain * signal.total_field(t)
    raise TypeError("signal must be a FieldTrace or AnalyticSignal")


def _check_length(trace, config):
    needed = config.n_measurements * config.period
    if trace.duration < needed * (1 - 1e-12):
        raise ValueError(f"trace covers {trace.duration:g} s but the protocol needs {needed:g} s")


def _probabilities_from_argument(arg, config):
    if config.literal_formula:
        return np.clip(np.sin(arg) + 0.5, 0.0, 1.0)
    return 0.5 * (1.0 + np.sin(arg))


def detection_probability(P, config):
    return config.p_dark + (config.p_bright - config.p_dark) * P


def sample_counts(P, config, rng):
    p = detection_probability(P, config)
    if config.readout == "bernoulli":
        return (rng.random(p.shape) < p).astype(np.int64)
    return rng.poisson(config.n_sensors * p).astype(np.int64)


def simulate_mz_qdyne(signal, config, seed=0, run_index=0, sample=True):
    """One M_z-Qdyne record: slot j at t_j = j T_L, phase reset by the pi/2 pulse.

    With ``sample=False`` no photons are drawn; ``counts`` then holds zeros and
    ``probabilities`` the exact lock-in populations.
    """
    P = _probabilities_from_argument(_lockin_argument(signal, config), config)
    if sample:
        counts = sample_counts(P, config, stream(seed, "photons", run_index))
    else:
        counts = np.zeros(config.n_measurements, dtype=np.int64)
    return PhotonRecord(counts, config, P, run_index, seed)


def simulate_statistical_qdyne(trace, config, seed=0, run_index=0, sample=True):
    """Conventional Qdyne on statistical polarization only (no pi/2 initialization)."""
    if not isinstance(trace, FieldTrace):
        raise TypeError("trace must be a FieldTrace")
    _check_length(trace, config)
    arg = config.phase_gain * trace.stat_field(config.times)
    P = _probabilities_from_argument(arg, config)
    counts = sample_counts(P, config, stream(seed, "photons", run_index)) if sample else np.zeros(config.n_measurements, dtype=np.int64)
    return PhotonRecord(counts, config, P, run_index, seed)


def average_runs(records, use_probabilities=False):
    """Pointwise mean and variance across records sharing one configuration."""
    records = list(records)
    if not records:
        raise ValueError("no records to average")
    cfg = records[0].config
    for r in records[1:]:
        if r.config != cfg:
            raise ValueError("records have mismatched protocol configurations")
    if use_probabilities:
        data = np.array([r.probabilities for r in records], dtype=float)
    else:
        data = np.array([r.counts for r in records], dtype=float)
    mean = data.mean(axis=0)
    var = data.var(axis=0, ddof=1) if len(records) > 1 else np.zeros_like(mean)
    return AveragedSignal(mean, var, len(records) * cfg.n_sensors, cfg, len(records))


def simulate_runs(make_signal, config, n_runs, seed=0, kind="mz", sample=True, workers=None):
    """Simulate ``n_runs`` independent records; ``make_signal(run_index)`` supplies each run's signal.

    Results depend only on (seed, run index), so ``workers`` changes speed, not output.
    """
    sim = simulate_mz_qdyne if kind == "mz" else simulate_statistical_qdyne

    def one(i):
        return sim(make_signal(i), config, seed, i, sample)

    if workers and workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(one, range(n_runs)))
    return [one(i) for i in range(n_runs)]


def summed_counts(signal, config, n_runs, seed=0):
    """Counts summed over ``n_runs`` identical-phase records without storing each record.

    For Bernoulli readout the sum over runs of one slot is Binomial(n_runs, p_j);
    for Poisson readout it is Poisson(n_runs * N_NV * p_j).
    """
    P = _probabilities_from_argument(_lockin_argument(signal, config), config)
    p = detection_probability(P, config)
    rng = stream(seed, "photons", 0)
    if config.readout == "bernoulli":
        return rng.binomial(n_runs, p).astype(np.int64), P
    return rng.poisson(n_runs * config.n_sensors * p).astype(np.int64), P
