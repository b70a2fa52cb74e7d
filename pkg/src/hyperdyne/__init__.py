"""Simulation and analysis toolkit for M_z-Qdyne / Hyperdyne nanoscale NMR with NV centers.

Modules
-------
physics      NV sensor, nuclear species, dipolar couplings, field statistics
diffusion    Brownian-dynamics spin ensembles, field traces, OU surrogates
protocol     Qdyne / M_z-Qdyne measurement records and run averaging
spectral     power spectra, peak SNR and linewidth
bayes        photon-count likelihood, MH / HMC posterior sampling, detection
sensitivity  SNR law, time regimes, polarization buildup, detection limits
pipeline     staged scenario runs with manifests (see ``hyperdyne`` CLI)
"""

from ._jit import USE_NUMBA
from .bayes import ModelPriors, PGM, SamplerConfig, sample_posterior, summarize_and_decide
from .diffusion import FieldTrace, SimulationBox, field_trace, fit_correlation, init_ensemble, ou_surrogate_trace
from .physics import NuclearSpecies, NVSensor, brms_analytic, dipolar_coupling, water
from .protocol import ProtocolConfig, average_runs, qdyne_probability, simulate_mz_qdyne
from .spectral import peak_metrics, power_spectrum

__version__ = "0.1.0"

__all__ = [
    "USE_NUMBA", "ModelPriors", "PGM", "SamplerConfig", "sample_posterior", "summarize_and_decide",
    "FieldTrace", "SimulationBox", "field_trace", "fit_correlation", "init_ensemble", "ou_surrogate_trace",
    "NuclearSpecies", "NVSensor", "brms_analytic", "dipolar_coupling", "water",
    "ProtocolConfig", "average_runs", "qdyne_probability", "simulate_mz_qdyne",
    "peak_metrics", "power_spectrum", "__version__",
]
