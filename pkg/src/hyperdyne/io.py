"""Artifact persistence: HDYN binary traces, CSV exports and JSON sidecars.

Binary layout (little endian)::

    magic   4 bytes   b"HDYN" (trace) or b"HDYR" (photon record batch)
    version u32
    dt      f64       sample step, or the sequence period T_L for records
    length  u64       samples per channel
    seed    u64
    data    f64[n_channels * length], channel-major

Metadata that does not fit the fixed header goes to ``<file>.json``.
"""

import csv
import dataclasses
import json
import math
import os
import struct
import tempfile

import numpy as np

from .diffusion import FieldTrace
from .protocol import AveragedSignal, PhotonRecord, ProtocolConfig
from .spectral import Spectrum

FORMAT_VERSION = 1
TRACE_MAGIC = b"HDYN"
RECORD_MAGIC = b"HDYR"
HEADER = struct.Struct("<4sIdQQ")
TRACE_CHANNELS = ("b_stat", "b_stat_q", "coh_env", "coh_phase")


class FormatError(ValueError):
    """File is not a valid artifact of the expected kind."""


class VersionError(FormatError):
    """File was written by an unsupported format version."""


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(dataclasses.asdict(obj))
    return obj


def atomic_write_bytes(path, data):
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text):
    return atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj):
    return atomic_write_text(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def _csv_text(header, rows):
    import io as _io

    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, header, columns):
    """Columns of equal length; floats written with round-trip precision."""
    cols = [np.asarray(c) for c in columns]
    rows = ([_fmt(v) for v in row] for row in zip(*cols))
    return atomic_write_text(path, _csv_text(header, rows))


def read_csv(path):
    """Returns (header, dict of float arrays)."""
    with open(path, newline="", encoding="utf-8") as f:
        r = csv.reader(f)
        header = next(r)
        data = np.array([[float(v) for v in row] for row in r], dtype=float).reshape(-1, len(header))
    return header, {h: data[:, i] for i, h in enumerate(header)}


# ---------------------------------------------------------------------------
# binary container

def _pack(magic, step, seed, channels):
    length = len(channels[0])
    head = HEADER.pack(magic, FORMAT_VERSION, float(step), length, int(seed) & 0xFFFFFFFFFFFFFFFF)
    body = b"".join(np.ascontiguousarray(c, dtype="<f8").tobytes() for c in channels)
    return head + body


def _unpack(path, magic):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < HEADER.size:
        raise FormatError(f"{path}: truncated header")
    got, version, step, length, seed = HEADER.unpack_from(raw)
    if got != magic:
        raise FormatError(f"{path}: bad magic {got!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: format version {version} is not supported (reader is version {FORMAT_VERSION})")
    body = raw[HEADER.size:]
    if length == 0 or len(body) % (8 * length):
        raise FormatError(f"{path}: payload size does not match header length")
    data = np.frombuffer(body, dtype="<f8").reshape(-1, length).astype(float)
    return step, seed, data


def _sidecar(path):
    return os.fspath(path) + ".json"


def save_trace(trace, path):
    """HDYN file plus a JSON sidecar with delta_ref and simulation parameters."""
    atomic_write_bytes(path, _pack(TRACE_MAGIC, trace.dt, trace.seed, [getattr(trace, c) for c in TRACE_CHANNELS]))
    write_json(_sidecar(path), {"format_version": FORMAT_VERSION, "channels": list(TRACE_CHANNELS),
                                "delta_ref": trace.delta_ref, "params": trace.params})
    return path


def load_trace(path):
    dt, seed, data = _unpack(path, TRACE_MAGIC)
    if data.shape[0] != len(TRACE_CHANNELS):
        raise FormatError(f"{path}: expected {len(TRACE_CHANNELS)} channels, found {data.shape[0]}")
    meta = read_json(_sidecar(path)) if os.path.exists(_sidecar(path)) else {}
    return FieldTrace(dt, *data, delta_ref=float(meta.get("delta_ref", 0.0)), seed=int(seed),
                      params=meta.get("params", {}))


def export_trace_csv(trace, path):
    return write_csv(path, ["time_s", "b_stat_t", "b_coh_t"], [trace.times, trace.stat_field(), trace.b_coh])


def _config_from_dict(d):
    return ProtocolConfig(**d)


def save_records_binary(records, path):
    """Batch of photon records sharing one configuration (counts as f64 channels)."""
    records = list(records)
    cfg = records[0].config
    if any(r.config != cfg for r in records):
        raise ValueError("records have mismatched configurations")
    atomic_write_bytes(path, _pack(RECORD_MAGIC, cfg.period, records[0].seed or 0, [r.counts for r in records]))
    write_json(_sidecar(path), {"format_version": FORMAT_VERSION, "config": cfg.to_dict(),
                                "run_indices": [r.run_index for r in records],
                                "seeds": [r.seed for r in records]})
    return path


def load_records_binary(path):
    _, _, data = _unpack(path, RECORD_MAGIC)
    if not os.path.exists(_sidecar(path)):
        raise FormatError(f"{path}: missing configuration sidecar")
    meta = read_json(_sidecar(path))
    cfg = _config_from_dict(meta["config"])
    return [PhotonRecord(row.astype(np.int64), cfg, None, int(i), s)
            for row, i, s in zip(data, meta["run_indices"], meta["seeds"])]


def save_record_csv(record, path):
    cfg = record.config
    write_csv(path, ["index", "time_s", "count"],
              [np.arange(cfg.n_measurements), cfg.times, record.counts.astype(np.int64)])
    write_json(_sidecar(path), {"format_version": FORMAT_VERSION, "config": cfg.to_dict(),
                                "run_index": record.run_index, "seed": record.seed})
    return path


def load_record_csv(path):
    if not os.path.exists(_sidecar(path)):
        raise FormatError(f"{path}: missing configuration sidecar")
    meta = read_json(_sidecar(path))
    _, cols = read_csv(path)
    return PhotonRecord(cols["count"].astype(np.int64), _config_from_dict(meta["config"]),
                        None, meta["run_index"], meta["seed"])


def save_averaged_csv(avg, path):
    write_csv(path, ["index", "time_s", "mean", "variance"],
              [np.arange(avg.mean.size), avg.times, avg.mean, avg.variance])
    write_json(_sidecar(path), {"format_version": FORMAT_VERSION, "config": avg.config.to_dict(),
                                "n_averages": avg.n_averages, "n_records": avg.n_records, "extra": avg.extra})
    return path


def load_averaged_csv(path):
    meta = read_json(_sidecar(path))
    _, cols = read_csv(path)
    return AveragedSignal(cols["mean"], cols["variance"], meta["n_averages"], _config_from_dict(meta["config"]),
                          meta["n_records"], meta.get("extra", {}))


def save_spectrum_csv(spectrum, path):
    write_csv(path, ["frequency_hz", "power"], [spectrum.freqs, spectrum.power])
    write_json(_sidecar(path), {"t_rec": spectrum.t_rec, "window": spectrum.window, "pad": spectrum.pad})
    return path


def load_spectrum_csv(path):
    meta = read_json(_sidecar(path))
    _, cols = read_csv(path)
    return Spectrum(cols["frequency_hz"], cols["power"], meta["t_rec"], meta["window"], meta["pad"])


def save_posterior_csv(samples, path):
    c, n, _ = samples.draws.shape
    chain = np.repeat(np.arange(c), n)
    step = np.tile(np.arange(n) + samples.burn_in, c)
    flat = samples.flat
    return write_csv(path, ["chain", "step", "g", "delta", "phi"], [chain, step, flat[:, 0], flat[:, 1], flat[:, 2]])


def save_records_csv(records, path):
    """Many records in long format (run, index, time_s, count) with one config sidecar."""
    records = list(records)
    cfg = records[0].config
    if any(r.config != cfg for r in records):
        raise ValueError("records have mismatched configurations")
    n = cfg.n_measurements
    write_csv(path, ["run", "index", "time_s", "count"],
              [np.repeat([r.run_index for r in records], n), np.tile(np.arange(n), len(records)),
               np.tile(cfg.times, len(records)), np.concatenate([r.counts for r in records]).astype(np.int64)])
    write_json(_sidecar(path), {"format_version": FORMAT_VERSION, "config": cfg.to_dict(),
                                "run_indices": [r.run_index for r in records], "seeds": [r.seed for r in records]})
    return path


def load_records_csv(path):
    if not os.path.exists(_sidecar(path)):
        raise FormatError(f"{path}: missing configuration sidecar")
    meta = read_json(_sidecar(path))
    cfg = _config_from_dict(meta["config"])
    _, cols = read_csv(path)
    counts = cols["count"].astype(np.int64).reshape(-1, cfg.n_measurements)
    return [PhotonRecord(c, cfg, None, int(i), s) for c, i, s in zip(counts, meta["run_indices"], meta["seeds"])]
