"""Staged pipelines that turn a run configuration into data files plus a manifest.

Stages run in the order simulate, measure, analyze-fft, analyze-bayes,
sensitivity.  Each stage reads its inputs from the output directory, so a
partial stage can be replayed on its own.
"""

import hashlib
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import io
from .bayes import ModelPriors, PGM, SamplerConfig, amplitude_noise_scale, sample_posterior, summarize_and_decide
from .config import ConfigError, config_hash
from .constants import AXIS_001, AXIS_111, molar_to_density
from .diffusion import InsufficientDataError, SimulationBox, coherent_amplitude, sampled_ou_trace
from .ladder import LadderConfig, run_ladder
from .physics import NuclearSpecies, NVSensor, brms_analytic, validate_phase_condition
from .protocol import (AnalyticSignal, ProtocolConfig, average_runs, simulate_mz_qdyne,
                       simulate_statistical_qdyne)
from .rng import child_seed
from .sensitivity import (PolarizationConfig, SensitivityModel, detection_limit_curve, microcoil_reference,
                          polarization_buildup)
from .spectral import peak_metrics, power_spectrum

STAGES = ("simulate", "measure", "analyze-fft", "analyze-bayes", "sensitivity")
MANIFEST = "manifest.json"
EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 2, 3, 4
NULL_PRIOR_SIGMA = 4.0


class PipelineError(Exception):
    code = 1
    kind = "error"

    def record(self):
        return {"error": self.kind, "exit_code": self.code, "message": str(self)}


class MissingArtifactError(PipelineError):
    code = EXIT_MISSING
    kind = "missing_artifact"

    def __init__(self, stage, path):
        super().__init__(f"stage '{stage}' needs '{path}'; run the upstream stage first")
        self.stage = stage
        self.path = path

    def record(self):
        return {**super().record(), "stage": self.stage, "artifact": self.path}


class NumericalError(PipelineError):
    code = EXIT_NUMERIC
    kind = "numerical_failure"


def error_record(exc):
    """Machine-readable description of a failure, with the matching exit code."""
    if isinstance(exc, PipelineError):
        return exc.record()
    if isinstance(exc, ConfigError):
        return {"error": "config_invalid", "exit_code": EXIT_CONFIG, "message": str(exc),
                "path": [str(p) for p in exc.path]}
    return {"error": "internal", "exit_code": 1, "message": f"{type(exc).__name__}: {exc}"}


# ---------------------------------------------------------------------------
# physics assembled from a config

@dataclass
class Physics:
    nv: NVSensor
    species: NuclearSpecies
    box: SimulationBox
    polarization: float
    b_rms: float
    tau_c: float
    b_coh: float
    delta: float
    protocol: ProtocolConfig

    @property
    def g_coh(self):
        return self.protocol.phase_gain * self.b_coh

    @property
    def g_stat(self):
        return self.protocol.phase_gain * self.b_rms

    def summary(self):
        check = validate_phase_condition(self.b_rms, self.protocol.tau_m)
        return {"b_rms_t": self.b_rms, "tau_c_s": self.tau_c, "b_coh_t": self.b_coh, "delta_rad_per_s": self.delta,
                "g_coherent": self.g_coh, "g_statistical": self.g_stat, "phase_condition_ratio": check.ratio,
                "phase_condition_passed": check.passed, "n_spins_box": self.species.density * self.box.volume,
                "protocol": self.protocol.to_dict()}


def correlation_time(depth, diffusion):
    """Dimensional estimate d^2 / (2 D) of the statistical-field correlation time."""
    return math.inf if diffusion == 0 else depth**2 / (2.0 * diffusion)


def build_physics(cfg, concentration_molar=None, polarization=None, tau_m_us=None, protocol_overrides=None):
    nvc, sc, fc, pc = cfg["nv"], cfg["sample"], cfg["field"], cfg["protocol"]
    nv = NVSensor(nvc["depth_nm"] * 1e-9, AXIS_111 if nvc["axis"] == "111" else AXIS_001, nvc["t2_us"] * 1e-6,
                  nvc["p_bright"], nvc["p_dark"])
    conc = sc["concentration_molar"] if concentration_molar is None else concentration_molar
    species = NuclearSpecies(density=float(molar_to_density(conc, sc["spins_per_molecule"])),
                             diffusion=sc["diffusion_m2_per_s"], t1=sc["t1_s"], t2=sc["t2_s"])
    pol = sc["polarization"] if polarization is None else polarization
    box = SimulationBox.around(nv, fc["lateral_depths"], fc["height_depths"])
    tau = (pc["tau_m_us"] if tau_m_us is None else tau_m_us) * 1e-6
    kw = dict(tau_m=tau, n_measurements=pc["n_measurements"], n_sensors=pc["n_sensors"], readout=pc["readout"],
              p_bright=nvc["p_bright"], p_dark=nvc["p_dark"], literal_formula=pc["literal_formula"])
    if "period_us" in pc and tau_m_us is None:
        kw["period"] = pc["period_us"] * 1e-6
    kw.update(protocol_overrides or {})
    protocol = ProtocolConfig(**kw)
    nyquist = 0.5 / protocol.period
    if abs(fc["offset_hz"]) + cfg["spectrum"]["search_halfwidth_hz"] >= nyquist:
        raise ConfigError(f"field/offset_hz plus the search half-width must stay below the {nyquist:.0f} Hz "
                          f"Nyquist limit of T_L = {protocol.period:g} s", ["field", "offset_hz"])
    b_coh = coherent_amplitude(nv, species, pol, box, image_range=fc["image_range"]) if pol > 0 else 0.0
    return Physics(nv, species, box, pol, brms_analytic(nv, species), correlation_time(nv.depth, species.diffusion),
                   b_coh, 2 * math.pi * fc["offset_hz"], protocol)


def run_trace(ph, seed, index):
    """Field seen in run ``index``: fresh statistical field, identical coherent line."""
    p = ph.protocol
    return sampled_ou_trace(ph.b_rms, ph.tau_c, p.n_measurements + 1, p.period, seed, index, ph.delta,
                            coherent=(ph.b_coh, ph.delta, ph.species.t2))


# ---------------------------------------------------------------------------
# bundle bookkeeping

def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class ResultBundle:
    out_dir: str
    config: dict
    config_sha256: str
    artifacts: dict = field(default_factory=dict)  # relative path -> {"sha256", "bytes", "stage"}
    stages: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def path(self, rel):
        return os.path.join(self.out_dir, rel)

    def add(self, stage, rel):
        p = self.path(rel)
        self.artifacts[rel] = {"sha256": _sha256(p), "bytes": os.path.getsize(p), "stage": stage}
        self.stages.setdefault(stage, {"status": "done", "artifacts": []})["artifacts"].append(rel)

    def require(self, stage, rel):
        if not os.path.exists(self.path(rel)):
            raise MissingArtifactError(stage, rel)
        return self.path(rel)

    def manifest(self):
        return {"format_version": io.FORMAT_VERSION, "scenario": self.config["scenario"],
                "kind": self.config["kind"], "seed": self.config["seed"], "config_sha256": self.config_sha256,
                "config_file": "config.json", "stages": self.stages, "artifacts": self.artifacts,
                "timing": self.timing}

    def write_manifest(self):
        io.write_json(self.path(MANIFEST), self.manifest())

    def verify(self):
        """True if every manifest entry exists with its recorded hash and the stored config matches."""
        stored = io.read_json(self.path("config.json"))
        if config_hash(stored) != self.config_sha256:
            return False
        return all(os.path.exists(self.path(r)) and _sha256(self.path(r)) == a["sha256"]
                   for r, a in self.artifacts.items())


def load_bundle(out_dir):
    m = io.read_json(os.path.join(out_dir, MANIFEST))
    cfg = io.read_json(os.path.join(out_dir, m["config_file"]))
    return ResultBundle(out_dir, cfg, m["config_sha256"], m["artifacts"], m["stages"], m["timing"])


def _open_bundle(cfg, out_dir):
    h = config_hash(cfg)
    b = ResultBundle(out_dir, cfg, h)
    mpath = os.path.join(out_dir, MANIFEST)
    if os.path.exists(mpath):
        try:
            old = io.read_json(mpath)
        except (OSError, ValueError):
            old = None
        if old and old.get("config_sha256") == h:
            b.artifacts = dict(old.get("artifacts", {}))
            b.stages = dict(old.get("stages", {}))
    return b


def _map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def _finite(name, *values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise NumericalError(f"{name} produced non-finite values")


# ---------------------------------------------------------------------------
# mz_qdyne (averaging demonstration)

def _mz_simulate(b, ctx):
    ph = build_physics(b.config)
    trace = run_trace(ph, b.config["seed"], 0)
    io.save_trace(trace, b.path("trace.hdyn"))
    io.export_trace_csv(trace, b.path("trace.csv"))
    io.write_json(b.path("field.json"), ph.summary())
    for rel in ("trace.hdyn", "trace.hdyn.json", "trace.csv", "field.json"):
        b.add("simulate", rel)


def _records_name(fmt):
    return "records.hdyr" if fmt == "binary" else "records.csv"


def _mz_measure(b, ctx):
    first = io.load_trace(b.require("measure", "trace.hdyn"))
    cfg = b.config
    ph = build_physics(cfg)
    seed = cfg["seed"]
    n = cfg["measure"]["n_runs"]

    def one(i):
        tr = first if i == 0 else run_trace(ph, seed, i)
        return (simulate_mz_qdyne(tr, ph.protocol, seed, i),
                simulate_statistical_qdyne(tr, ph.protocol, seed, i, sample=False))

    res = _map(one, range(n), ctx["threads"])
    records = [r[0] for r in res]
    stat_only = [r[1] for r in res]
    rel = _records_name(ctx["format"])
    if ctx["format"] == "binary":
        io.save_records_binary(records, b.path(rel))
    else:
        io.save_records_csv(records, b.path(rel))
    outputs = {"averaged_counts.csv": average_runs(records),
               "averaged_probabilities.csv": average_runs(records, use_probabilities=True),
               "averaged_statistical.csv": average_runs(stat_only, use_probabilities=True)}
    for name, avg in outputs.items():
        io.save_averaged_csv(avg, b.path(name))
    for r in (rel, rel + ".json", *outputs, *(o + ".json" for o in outputs)):
        b.add("measure", r)


def _search_window(cfg, delta):
    f0 = delta / (2 * math.pi)
    hw = cfg["spectrum"]["search_halfwidth_hz"]
    return (f0 - hw, f0 + hw)


def _mz_fft(b, ctx):
    cfg = b.config
    src = cfg["measure"]["spectrum_source"]
    avg = io.load_averaged_csv(b.require("analyze-fft", f"averaged_{src}.csv"))
    stat = io.load_averaged_csv(b.require("analyze-fft", "averaged_statistical.csv"))
    ph = build_physics(cfg)
    win = _search_window(cfg, ph.delta)
    sp = cfg["spectrum"]
    spec = power_spectrum(avg, sp["window"], sp["pad"])
    peak = peak_metrics(spec, win)
    stat_peak = peak_metrics(power_spectrum(stat, sp["window"], sp["pad"]), win)
    _finite("spectrum", spec.power, peak.snr)
    io.save_spectrum_csv(spec, b.path("spectrum.csv"))
    io.write_json(b.path("peak.json"), {"source": src, "search_window_hz": win, "peak": peak.to_dict(),
                                        "statistical_only": stat_peak.to_dict(),
                                        "resolution_hz": spec.resolution, "n_averages": avg.n_averages})
    for r in ("spectrum.csv", "spectrum.csv.json", "peak.json"):
        b.add("analyze-fft", r)


def _load_records(b, stage, fmt):
    for rel in (_records_name(fmt), _records_name("csv" if fmt == "binary" else "binary")):
        if os.path.exists(b.path(rel)):
            return io.load_records_binary(b.path(rel)) if rel.endswith(".hdyr") else io.load_records_csv(b.path(rel))
    raise MissingArtifactError(stage, _records_name(fmt))


def _mz_bayes(b, ctx):
    cfg = b.config
    records = _load_records(b, "analyze-bayes", ctx["format"])
    ph = build_physics(cfg)
    counts = np.sum([r.counts for r in records], axis=0)
    pc, sc = cfg["priors"], cfg["sampler"]
    mu_g = ph.g_coh
    if mu_g == 0:
        # unpolarized sample: centre the prior a few noise widths out, as for ladder nulls
        probe = PGM.from_protocol(records[0].config, ModelPriors.default(1.0, ph.delta), n_runs=len(records))
        mu_g = NULL_PRIOR_SIGMA * amplitude_noise_scale(probe)
    priors = ModelPriors.default(mu_g, ph.delta, pc["g_rel_std"], pc["delta_rel_width"])
    model = PGM.from_protocol(records[0].config, priors, n_runs=len(records))
    scfg = SamplerConfig(method=sc["method"], chains=sc["chains"], steps=sc["steps"], burn_in=sc["burn_in"],
                         n_leapfrog=sc["n_leapfrog"], seed=child_seed(cfg["seed"], "chains"), workers=ctx["threads"])
    samples = sample_posterior(model, counts, scfg)
    sg = amplitude_noise_scale(model)
    dec = summarize_and_decide(samples, (priors.delta_lo, priors.delta_hi), sc["detection_threshold"],
                               g_min=sc["g_min_sigma"] * sg)
    _finite("posterior", samples.draws)
    io.save_posterior_csv(samples, b.path("posterior.csv"))
    io.write_json(b.path("bayes.json"), {
        "decision": dec.to_dict(), "priors": priors, "sampler": {k: v for k, v in scfg.__dict__.items() if k != "workers"},
        "diagnostics": {"rhat": samples.rhat, "ess": samples.ess, "acceptance": samples.acceptance,
                        "divergences": samples.divergences},
        "model": {"readout": model.readout, "rate_scale": model.rate_scale, "sigma_g": sg, "g_min": sc["g_min_sigma"] * sg},
        "config_sha256": b.config_sha256})
    for r in ("posterior.csv", "bayes.json"):
        b.add("analyze-bayes", r)


# ---------------------------------------------------------------------------
# snr_sweep

def sweep_configurations(cfg):
    """(set index, multiplier, Physics, n_averages) for every point of the sweep grid."""
    sw = cfg["sweep"]
    out = []
    for si, s in enumerate(sw["sets"]):
        period = (s["tau_m_us"] + sw.get("dead_time_us", 2.5)) * 1e-6
        ph = build_physics(cfg, s["concentration_molar"], s["polarization"], s["tau_m_us"],
                           {"period": period, "n_measurements": sw.get("n_measurements", 1024),
                            "n_sensors": sw.get("n_sensors", 1),
                            "readout": "poisson" if sw.get("n_sensors", 1) > 1 else cfg["protocol"]["readout"]})
        for m in sw.get("multipliers", [1.0]):
            out.append((si, m, ph, max(1, int(round(s["n_averages"] * m)))))
    return out


def simulate_sweep_point(ph, n_avg, seed, point):
    """Average of ``n_avg`` simulated records for one sweep point (own run streams)."""
    total = np.zeros(ph.protocol.n_measurements)
    for i in range(n_avg):
        run = point * 1_000_000 + i
        tr = run_trace(ph, seed, run)
        total += simulate_mz_qdyne(tr, ph.protocol, seed, run).counts
    return total / n_avg


def _sweep_measure(b, ctx):
    cfg = b.config
    pts = sweep_configurations(cfg)
    means = _map(lambda k: simulate_sweep_point(pts[k][2], pts[k][3], cfg["seed"], k), range(len(pts)), ctx["threads"])
    cols = [np.arange(len(means[0]))] + means
    io.write_csv(b.path("sweep_signals.csv"), ["index"] + [f"point_{k}" for k in range(len(pts))], cols)
    io.write_json(b.path("sweep_signals.csv.json"), {"points": [
        {"set": si, "multiplier": m, "n_averages": n, "g": ph.g_coh, "period_s": ph.protocol.period,
         "delta_rad_per_s": ph.delta, "protocol": ph.protocol.to_dict()} for si, m, ph, n in pts]})
    for r in ("sweep_signals.csv", "sweep_signals.csv.json"):
        b.add("measure", r)


def linear_fit(x, y):
    """Least-squares line y = a x + c with coefficient of determination."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    a, c = np.polyfit(x, y, 1)
    ss_res = np.sum((y - (a * x + c)) ** 2)
    ss_tot = np.sum((y - y.mean()) ** 2)
    return float(a), float(c), float(1.0 - ss_res / ss_tot)


def _sweep_fft(b, ctx):
    cfg = b.config
    _, cols = io.read_csv(b.require("analyze-fft", "sweep_signals.csv"))
    meta = io.read_json(b.require("analyze-fft", "sweep_signals.csv.json"))["points"]
    rows = []
    for k, p in enumerate(meta):
        spec = power_spectrum(cols[f"point_{k}"], cfg["spectrum"]["window"], 1, period=p["period_s"])
        snr = peak_metrics(spec, _search_window(cfg, p["delta_rad_per_s"])).snr
        rows.append((p["set"], p["multiplier"], p["g"], p["n_averages"], p["g"] * math.sqrt(p["n_averages"]), snr))
    arr = np.array(rows, dtype=float)
    _finite("sweep SNR", arr)
    io.write_csv(b.path("sweep.csv"), ["set", "multiplier", "g", "n_averages", "g_sqrt_n", "snr"],
                 [arr[:, 0].astype(int), arr[:, 1], arr[:, 2], arr[:, 3].astype(int), arr[:, 4], arr[:, 5]])
    a, c, r2 = linear_fit(arr[:, 4], arr[:, 5])
    io.write_json(b.path("sweep_fit.json"), {"slope": a, "intercept": c, "r2": r2, "n_points": len(rows)})
    for r in ("sweep.csv", "sweep_fit.json"):
        b.add("analyze-fft", r)


# ---------------------------------------------------------------------------
# analytic scenarios

def polarization_config(section):
    kw = {"coupling": section.get("coupling_rad_per_s"), "n_shell_spins": section.get("n_shell_spins"),
          "tau_c": section.get("tau_c_us", None) and section["tau_c_us"] * 1e-6, "t1": section.get("t1_s"),
          "diffusion": section.get("diffusion_m2_per_s"),
          "lateral": section.get("lateral_nm", None) and section["lateral_nm"] * 1e-9,
          "height": section.get("height_nm", None) and section["height_nm"] * 1e-9,
          "shell_thickness": section.get("shell_thickness_nm", None) and section["shell_thickness_nm"] * 1e-9,
          "exchange_length": section.get("exchange_length_nm", None) and section["exchange_length_nm"] * 1e-9,
          "efficiency": section.get("efficiency")}
    return PolarizationConfig(**{k: v for k, v in kw.items() if v is not None})


def _buildup(b, ctx):
    sec = b.config["buildup"]
    pc = polarization_config(sec)
    tr = polarization_buildup(pc, sec.get("duration_s", 2.0), sec.get("n_points", 201))
    _finite("buildup", tr.average)
    io.write_csv(b.path("buildup.csv"), ["time_s", "polarization", "shell_polarization", "mean_polarization"],
                 [tr.times, tr.bulk, tr.shell, tr.average])
    io.write_json(b.path("buildup.json"), {"config": pc.to_dict(), "transfer_rate_per_s": pc.transfer_rate,
                                           "exchange_rate_per_s": pc.exchange_rate, "total_coupling_rad_per_s": pc.total_coupling,
                                           "final_bulk": tr.bulk[-1], "final_shell": tr.shell[-1],
                                           "final_mean": tr.average[-1]})
    for r in ("buildup.csv", "buildup.json"):
        b.add("sensitivity", r)


def physics_calibration(cfg):
    """SNR constant C in SNR = C sqrt(N) rho P tau_m for the configured NV and readout.

    Small-angle FFT SNR of a Poisson ensemble is g sqrt(N) (p_bright - p_dark) / (4 sqrt(lambda0)),
    with g = (4 gamma_e tau_m / pi) B_coh and B_coh linear in rho P.
    """
    ph = build_physics(cfg, polarization=1e-3)
    nvc = cfg["nv"]
    dp = nvc["p_bright"] - nvc["p_dark"]
    lam0 = nvc["p_dark"] + 0.5 * dp
    b_unit = ph.b_coh / (ph.species.density * ph.polarization)
    return ph.protocol.phase_gain / ph.protocol.tau_m * b_unit * dp / (4.0 * math.sqrt(lam0))


def sensitivity_model(section, density=1.0, calibration=1.0):
    return SensitivityModel(density=density, polarization=section.get("polarization", 0.005), volume=1.0,
                            nv_density=section.get("nv_density_per_cm3", 1e17) * 1e6,
                            tau_m=section.get("tau_m_us", 100.0) * 1e-6, t2_nv=section.get("t2_nv_us", 100.0) * 1e-6,
                            coupling=section.get("coupling_rad_per_s", 1.0),
                            calibration=section.get("calibration", calibration))


def _detection_limit(b, ctx):
    sec = b.config["detection_limit"]
    model = sensitivity_model(sec, calibration=physics_calibration(b.config))
    vols = sec["volumes_m3"]
    kw = dict(t_pol=sec.get("t_pol_s", 0.0), n_seq=sec.get("n_seq", 1),
              period=sec["period_us"] * 1e-6 if "period_us" in sec else None)
    _, molar = detection_limit_curve(vols, sec.get("budget_s", 600.0), sec.get("threshold_snr", 10.0), model, **kw)
    _finite("detection limit", molar)
    io.write_csv(b.path("detection_limit.csv"), ["volume_m3", "min_concentration_molar"], [vols, molar])
    rels = ["detection_limit.csv"]
    if "bayes_factor" in sec:
        _, mb = detection_limit_curve(vols, sec.get("budget_s", 600.0), sec.get("threshold_snr", 10.0), model,
                                      bayes_factor=sec["bayes_factor"], **kw)
        io.write_csv(b.path("detection_limit_bayes.csv"), ["volume_m3", "min_concentration_molar"], [vols, mb])
        rels.append("detection_limit_bayes.csv")
    diam = np.geomspace(10e-6, 1e-3, 21)
    io.write_csv(b.path("microcoil_reference.csv"), ["diameter_m", "relative_sensitivity"],
                 [diam, microcoil_reference(diam)])
    rels.append("microcoil_reference.csv")
    io.write_json(b.path("detection_limit.json"), {"model": model.to_dict(), "section": sec,
                                                   "slope_loglog": float(np.polyfit(np.log(vols), np.log(molar), 1)[0])
                                                   if len(vols) > 1 else None})
    rels.append("detection_limit.json")
    for r in rels:
        b.add("sensitivity", r)


def ladder_config(cfg):
    sec = cfg["ladder"]
    lc = LadderConfig(seed=cfg["seed"])
    simple = {"n_measurements": "n_measurements", "n_runs": "n_runs", "seeds_per_rung": "seeds_per_rung",
              "null_seeds": "null_seeds", "fft_threshold": "fft_threshold", "posterior_threshold": "posterior_threshold",
              "success_fraction": "success_fraction", "g_min_sigma": "g_min_sigma", "g_rel_std": "g_rel_std",
              "delta_rel_width": "delta_rel_width", "null_prior_sigma": "null_prior_sigma"}
    for k, attr in simple.items():
        if k in sec:
            setattr(lc, attr, sec[k])
    if "tau_m_us" in sec:
        lc.tau_m = sec["tau_m_us"] * 1e-6
    if "offset_hz" in sec:
        lc.delta0 = 2 * math.pi * sec["offset_hz"]
    if "rungs_sigma" in sec:
        lc.rungs = tuple(sec["rungs_sigma"])
    lc.sampler = {**lc.sampler, **{k: sec[k] for k in ("chains", "steps", "burn_in", "method") if k in sec}}
    return lc


def _ladder(b, ctx):
    lc = ladder_config(b.config)
    res = run_ladder(lc, workers=ctx["threads"])
    rows = res.rows
    io.write_csv(b.path("ladder.csv"), ["g", "g_over_sigma", "delta", "fft_snr", "detection_probability", "detected"],
                 [[r["g"] for r in rows], [r["g"] / res.sigma_g for r in rows], [r["delta"] for r in rows],
                  [r["fft_snr"] for r in rows], [r["detection_probability"] for r in rows],
                  [int(r["detected"]) for r in rows]])
    io.write_csv(b.path("ladder_null.csv"), ["seed_index", "detection_probability"],
                 [np.arange(res.null_probabilities.size), res.null_probabilities])
    io.write_json(b.path("ladder.json"), {**res.summary(), "config": lc.to_dict()})
    for r in ("ladder.csv", "ladder_null.csv", "ladder.json"):
        b.add("analyze-bayes", r)


HANDLERS = {
    "mz_qdyne": {"simulate": _mz_simulate, "measure": _mz_measure, "analyze-fft": _mz_fft, "analyze-bayes": _mz_bayes},
    "snr_sweep": {"measure": _sweep_measure, "analyze-fft": _sweep_fft},
    "buildup": {"sensitivity": _buildup},
    "detection_limit": {"sensitivity": _detection_limit},
    "bayes_ladder": {"analyze-bayes": _ladder},
}


def run_pipeline(cfg, stage="all", out_dir=None, threads=1, fmt="binary"):
    """Run one stage (or ``all``) of the scenario ``cfg`` and return its ResultBundle.

    Artifacts depend only on (config, seed); ``threads`` affects speed only.
    """
    if stage != "all" and stage not in STAGES:
        raise ConfigError(f"unknown stage '{stage}'", ["stage"])
    if fmt not in ("csv", "binary"):
        raise ConfigError(f"unknown format '{fmt}'", ["format"])
    out_dir = out_dir or cfg.get("output_dir", "out")
    os.makedirs(out_dir, exist_ok=True)
    b = _open_bundle(cfg, out_dir)
    io.write_json(b.path("config.json"), cfg)
    ctx = {"threads": threads, "format": fmt}
    wanted = STAGES if stage == "all" else (stage,)
    handlers = HANDLERS[cfg["kind"]]
    t_start = time.perf_counter()
    b.timing = {"started_utc": datetime.now(timezone.utc).isoformat(), "threads": threads, "stages": {}}
    for st in wanted:
        fn = handlers.get(st)
        if fn is None:
            b.stages[st] = {"status": "skipped", "artifacts": []}
            continue
        b.stages[st] = {"status": "running", "artifacts": []}
        for rel in [r for r, a in b.artifacts.items() if a["stage"] == st]:
            del b.artifacts[rel]
        t0 = time.perf_counter()
        try:
            with np.errstate(over="ignore", under="ignore"):
                fn(b, ctx)
        except (FloatingPointError, np.linalg.LinAlgError, InsufficientDataError) as exc:
            raise NumericalError(f"stage '{st}': {exc}") from exc
        b.stages[st]["status"] = "done"
        b.timing["stages"][st] = time.perf_counter() - t0
    b.timing["finished_utc"] = datetime.now(timezone.utc).isoformat()
    b.timing["wall_seconds"] = time.perf_counter() - t_start
    b.write_manifest()
    return b


def artifact_digest(bundle):
    """Stable fingerprint of all artifacts (excludes manifest timing)."""
    return json.dumps({r: a["sha256"] for r, a in sorted(bundle.artifacts.items())}, sort_keys=True)
