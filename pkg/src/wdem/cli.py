"""Command-line entry point: ``wdem sweep --config <path> [...]``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .harness import (ConfigError, ExperimentConfig, METHODS, SweepConfig, aggregate, emit,
                      load_config, sweep)

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2

# operating-point grids used when --axis switches away from the configured axis
DEFAULT_VALUES = {"snr": (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0), "nrf": (100, 200, 300)}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wdem", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("sweep", help="run a Monte-Carlo NMSE sweep and write CSV/JSON results")
    p.add_argument("--config", help="JSON or TOML experiment config (defaults if omitted)")
    p.add_argument("--axis", choices=("snr", "nrf"))
    p.add_argument("--values", help="comma-separated sweep values overriding the config")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--nmse-mode", choices=("full", "wavenumber"))
    p.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")
    p.add_argument("--theta-branch", choices=("quadrant_shift", "principal"))
    p.add_argument("--exact-gram", action="store_true", default=None)
    p.add_argument("--denoise-floor", action="store_true", default=None)
    p.add_argument("--timing", action="store_true", default=None,
                   help="record wall-clock time per method (makes raw output nondeterministic)")
    p.add_argument("--workers", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    sw = cfg.sweep
    if args.axis and args.axis != sw.axis:
        sw = SweepConfig(axis=args.axis, values=DEFAULT_VALUES[args.axis],
                         snr_db=sw.snr_db, n_rf=sw.n_rf)
    if args.values:
        conv = int if sw.axis == "nrf" else float
        try:
            sw = replace(sw, values=tuple(conv(v) for v in args.values.split(",")))
        except ValueError as exc:
            raise ConfigError(f"bad --values: {exc}") from exc
    changes = {"sweep": sw}
    simple = {"trials": "trials", "seed": "base_seed", "out": "out_dir", "format": "format",
              "nmse_mode": "nmse_mode", "theta_branch": "theta_branch",
              "exact_gram": "exact_gram", "denoise_floor": "denoise_floor",
              "timing": "timing", "workers": "workers"}
    for arg, name in simple.items():
        v = getattr(args, arg)
        if v is not None:
            changes[name] = v
    if args.methods:
        changes["methods"] = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    try:
        return replace(cfg, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        cfg = apply_overrides(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    results = sweep(cfg)
    try:
        raw, agg = emit(results, cfg.out_dir, cfg.format)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    failed = sum(not r.ok for r in results)
    for a in aggregate(results):
        med = "n/a" if a.median_nmse_db is None else f"{a.median_nmse_db:7.2f} dB"
        print(f"{a.sweep_axis}={a.sweep_value!s:>6} {a.method:<10} median NMSE {med}")
    print(f"wrote {raw} and {agg}")
    if failed:
        print(f"{failed} method-trials failed", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
