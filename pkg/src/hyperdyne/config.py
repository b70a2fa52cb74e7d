"""Run configuration: JSON with explicit unit suffixes, validated against a strict schema."""

import copy
import hashlib
import json
from importlib import resources

import jsonschema

KINDS = ("mz_qdyne", "snr_sweep", "buildup", "detection_limit", "bayes_ladder")


class ConfigError(ValueError):
    """Configuration failed schema or consistency checks."""

    def __init__(self, message, path=()):
        super().__init__(message)
        self.path = list(path)


def _num(minimum=None, exclusive=True):
    s = {"type": "number"}
    if minimum is not None:
        s["exclusiveMinimum" if exclusive else "minimum"] = minimum
    return s


def _int(minimum=1):
    return {"type": "integer", "minimum": minimum}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


POS = _num(0)
NONNEG = _num(0, exclusive=False)
FRACTION = {"type": "number", "minimum": 0, "maximum": 1}

SCHEMA = _obj({
    "scenario": {"type": "string", "minLength": 1},
    "kind": {"enum": list(KINDS)},
    "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
    "output_dir": {"type": "string"},
    "description": {"type": "string"},
    "nv": _obj({
        "depth_nm": POS, "t2_us": POS, "axis": {"enum": ["001", "111"]},
        "p_bright": FRACTION, "p_dark": FRACTION,
    }),
    "sample": _obj({
        "concentration_molar": POS, "spins_per_molecule": _int(1), "diffusion_m2_per_s": NONNEG,
        "t1_s": POS, "t2_s": POS, "polarization": FRACTION,
    }),
    "field": _obj({
        "model": {"enum": ["ou"]}, "offset_hz": _num(), "lateral_depths": POS, "height_depths": POS,
        "image_range": _int(0),
    }),
    "protocol": _obj({
        "tau_m_us": POS, "period_us": POS, "n_measurements": _int(8), "n_sensors": _int(1),
        "readout": {"enum": ["bernoulli", "poisson"]}, "literal_formula": {"type": "boolean"},
    }),
    "measure": _obj({"n_runs": _int(1), "spectrum_source": {"enum": ["probabilities", "counts"]}}),
    "spectrum": _obj({"window": {"enum": ["rect", "hann"]}, "pad": _int(1), "search_halfwidth_hz": POS}),
    "priors": _obj({"g_rel_std": POS, "delta_rel_width": POS}),
    "sampler": _obj({
        "method": {"enum": ["mh", "hmc"]}, "chains": _int(1), "steps": _int(2), "burn_in": _int(0),
        "n_leapfrog": _int(1), "detection_threshold": FRACTION, "g_min_sigma": NONNEG,
    }),
    "sweep": _obj({
        "sets": {"type": "array", "minItems": 1, "items": _obj({
            "polarization": FRACTION, "concentration_molar": POS, "n_averages": _int(1), "tau_m_us": POS,
        }, required=("polarization", "concentration_molar", "n_averages", "tau_m_us"))},
        "multipliers": {"type": "array", "minItems": 1, "items": POS},
        "n_sensors": _int(1), "n_measurements": _int(8), "dead_time_us": NONNEG,
    }),
    "buildup": _obj({
        "coupling_rad_per_s": NONNEG, "n_shell_spins": POS, "tau_c_us": POS, "t1_s": POS,
        "diffusion_m2_per_s": NONNEG, "lateral_nm": POS, "height_nm": POS, "shell_thickness_nm": POS,
        "exchange_length_nm": POS, "efficiency": NONNEG, "duration_s": POS, "n_points": _int(2),
    }),
    "detection_limit": _obj({
        "volumes_m3": {"type": "array", "minItems": 1, "items": POS}, "budget_s": POS, "threshold_snr": POS,
        "nv_density_per_cm3": POS, "polarization": FRACTION, "tau_m_us": POS, "t2_nv_us": POS,
        "coupling_rad_per_s": POS, "t_pol_s": NONNEG, "n_seq": _int(1), "period_us": POS,
        "calibration": POS, "bayes_factor": POS,
    }),
    "ladder": _obj({
        "tau_m_us": POS, "n_measurements": _int(8), "n_runs": _int(1), "offset_hz": POS,
        "rungs_sigma": {"type": "array", "minItems": 1, "items": POS}, "seeds_per_rung": _int(1),
        "null_seeds": _int(0), "fft_threshold": POS, "posterior_threshold": FRACTION,
        "success_fraction": FRACTION, "g_min_sigma": NONNEG, "g_rel_std": POS, "delta_rel_width": POS,
        "null_prior_sigma": POS, "chains": _int(1), "steps": _int(2), "burn_in": _int(0),
        "method": {"enum": ["mh", "hmc"]},
    }),
}, required=("scenario", "kind", "seed"))

DEFAULTS = {
    "output_dir": "out",
    "nv": {"depth_nm": 6.2, "t2_us": 100.0, "axis": "001", "p_bright": 0.040, "p_dark": 0.025},
    "sample": {"concentration_molar": 110.7, "spins_per_molecule": 1, "diffusion_m2_per_s": 2.3e-9,
               "t1_s": 3.0, "t2_s": 1.0, "polarization": 0.001},
    "field": {"model": "ou", "offset_hz": 20000.0, "lateral_depths": 8.0, "height_depths": 6.0, "image_range": 0},
    "protocol": {"tau_m_us": 4.1, "n_measurements": 848, "n_sensors": 1, "readout": "bernoulli",
                 "literal_formula": False},
    "measure": {"n_runs": 1000, "spectrum_source": "probabilities"},
    "spectrum": {"window": "rect", "pad": 16, "search_halfwidth_hz": 2000.0},
    "priors": {"g_rel_std": 0.5, "delta_rel_width": 0.05},
    "sampler": {"method": "mh", "chains": 4, "steps": 3000, "burn_in": 1000, "n_leapfrog": 12,
                "detection_threshold": 0.95, "g_min_sigma": 2.0},
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(raw):
    """Schema-check a raw config dict and fill defaults.  Raises ConfigError."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    v = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(v.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {e.message}", e.absolute_path)
    cfg = _merge(DEFAULTS, raw)
    sm = cfg["sampler"]
    if sm["steps"] <= sm["burn_in"]:
        raise ConfigError("sampler/steps must exceed sampler/burn_in", ["sampler", "steps"])
    if cfg["nv"]["p_dark"] >= cfg["nv"]["p_bright"]:
        raise ConfigError("nv/p_dark must be below nv/p_bright", ["nv", "p_dark"])
    pr = cfg["protocol"]
    if "period_us" in pr and pr["period_us"] < pr["tau_m_us"]:
        raise ConfigError("protocol/period_us must be >= protocol/tau_m_us", ["protocol", "period_us"])
    if pr["readout"] == "bernoulli" and pr["n_sensors"] != 1:
        raise ConfigError("bernoulli readout requires protocol/n_sensors = 1", ["protocol", "n_sensors"])
    need = {"snr_sweep": "sweep", "buildup": "buildup", "detection_limit": "detection_limit", "bayes_ladder": "ladder"}
    sec = need.get(cfg["kind"])
    if sec and sec not in raw:
        raise ConfigError(f"kind '{cfg['kind']}' requires a '{sec}' section", [sec])
    return cfg


def load(path, seed=None):
    """Read, optionally override the seed, and validate a config file."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    if seed is not None and isinstance(raw, dict):
        raw["seed"] = int(seed)
    return validate(raw)


def config_hash(cfg):
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def bundled_scenarios():
    """Names of the scenario files shipped with the package."""
    root = resources.files("hyperdyne") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def bundled_path(name):
    return str(resources.files("hyperdyne") / "scenarios" / f"{name}.json")
