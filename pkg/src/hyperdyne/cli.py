"""Command-line entry point.

Exit codes: 0 success, 2 invalid configuration, 3 missing upstream artifact,
4 numerical failure.  Failures print one JSON error record on stderr and also
write it to ``<out>/error.json`` when an output directory is known.
"""

import argparse
import json
import logging
import os
import sys

from . import config as config_mod
from . import io
from .config import ConfigError
from .pipeline import STAGES, error_record, run_pipeline

log = logging.getLogger("hyperdyne")


def _u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="hyperdyne", description="Simulate and analyze M_z-Qdyne / Hyperdyne NMR scenarios.")
    p.add_argument("--config", required=False, help="scenario JSON file, or the name of a bundled scenario")
    p.add_argument("--stage", default="all", choices=("all",) + STAGES)
    p.add_argument("--seed", type=_u64, default=None, help="master seed (overrides the config)")
    p.add_argument("--out", default=None, help="output directory (default: config output_dir)")
    p.add_argument("--threads", type=_positive, default=1)
    p.add_argument("--format", default="binary", choices=("csv", "binary"), help="photon record format")
    p.add_argument("--list-scenarios", action="store_true", help="print bundled scenario names and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _resolve(path):
    if path and not os.path.exists(path) and path in config_mod.bundled_scenarios():
        return config_mod.bundled_path(path)
    return path


def _fail(rec, out_dir):
    sys.stderr.write(json.dumps(rec, sort_keys=True) + "\n")
    if out_dir:
        try:
            io.write_json(os.path.join(out_dir, "error.json"), rec)
        except OSError:
            pass
    return rec["exit_code"]


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.list_scenarios:
        print("\n".join(config_mod.bundled_scenarios()))
        return 0
    if not args.config:
        return _fail({"error": "config_invalid", "exit_code": 2, "message": "--config is required", "path": []}, args.out)
    out_dir = args.out
    try:
        path = _resolve(args.config)
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {args.config}")
        cfg = config_mod.load(path, seed=args.seed)
        out_dir = out_dir or cfg.get("output_dir", "out")
        bundle = run_pipeline(cfg, args.stage, out_dir, args.threads, args.format)
    except Exception as exc:  # mapped to exit codes by error_record
        rec = error_record(exc)
        if rec["exit_code"] == 1:
            log.exception("unexpected failure")
        return _fail(rec, out_dir)
    print(json.dumps({"status": "ok", "out": out_dir, "manifest": os.path.join(out_dir, "manifest.json"),
                      "artifacts": sorted(bundle.artifacts)}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
