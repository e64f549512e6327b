"""Command-line entry point: ``nfsim [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
import textwrap
from pathlib import Path

from .channel import write_matrix_csv
from .config import SystemConfig, config_keys, load_config
from .errors import ConfigurationError
from .geometry import rayleigh_distance
from .harness import (SWEEP_VARS, ScenarioSpec, SweepSpec, emit_csv, generate_scenario,
                      run_sweep, summarize)

log = logging.getLogger("nfsim")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _defaults_text() -> str:
    width = max(len(k) for k, _, _ in config_keys())
    lines = ["config file keys (key = value, # comments) and their defaults:"]
    for key, default, doc in config_keys():
        lines.append(f"  {key:<{width}}  {default!r:<18} {doc}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="nfsim",
        description="Weighted-sum-rate sweeps for a SIM-assisted near-field multiuser MIMO downlink.",
        epilog=textwrap.dedent("""\
            exit status: 0 success, 1 configuration or I/O error, 2 numerical abort.

            """) + _defaults_text(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", metavar="PATH", help="config file of key = value lines")
    p.add_argument("--sweep", choices=sorted(SWEEP_VARS),
                   help="swept variable; omitted runs the single configured point")
    p.add_argument("--scenario", choices=("random", "inline"), help="user placement (overrides config)")
    p.add_argument("--compare-far", action="store_true",
                   help="also run the far-field channel on the same geometry")
    p.add_argument("--trials", type=int, metavar="INT", help="trials per sweep point")
    p.add_argument("--seed", type=int, metavar="INT", help="base random seed")
    p.add_argument("--out", metavar="PATH", default="nfsim_results.csv",
                   help="output CSV (default: %(default)s)")
    p.add_argument("--dump-matrices", metavar="PATH", nargs="?", const="nfsim_matrices.csv",
                   help="write every channel matrix of trial 0 as CSV (default path: %(const)s)")
    p.add_argument("--timing", action="store_true",
                   help="fill the millis column (makes the CSV run-dependent)")
    p.add_argument("--quiet", action="store_true", help="only log warnings and errors")
    return p


def _resolve_config(args) -> SystemConfig:
    cfg = load_config(args.config) if args.config else SystemConfig()
    changes = {}
    if args.scenario:
        changes["placement"] = args.scenario
    if args.trials is not None:
        changes["trials"] = args.trials
    if args.seed is not None:
        changes["seed"] = args.seed
    return cfg.replace(**changes) if changes else cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    try:
        cfg = _resolve_config(args)
        if args.sweep:
            sweep = SweepSpec.from_config(cfg, SWEEP_VARS[args.sweep], compare_far=args.compare_far)
        else:
            sweep = SweepSpec.from_config(cfg, "N", values=(cfg.elements,), compare_far=args.compare_far)
    except ConfigurationError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG

    scen = generate_scenario(ScenarioSpec.from_config(cfg), 0)
    log.info("Rayleigh distance of the SIM aperture: %.4g m (users at %.3g-%.3g m)",
             rayleigh_distance(scen.sim, scen.wavelength.wavelength), cfg.r_min, cfg.r_max)
    if args.dump_matrices:
        try:
            write_matrix_csv(scen.channels, args.dump_matrices)
        except OSError as exc:
            log.error("cannot write %s: %s", args.dump_matrices, exc.strerror)
            return EXIT_CONFIG
        log.info("matrices of trial 0 written to %s", args.dump_matrices)

    def progress(rec):
        log.info("%s=%s trial %d %s: %.4f bits/s/Hz after %d iterations",
                 rec.sweep_var, rec.value, rec.trial, rec.mode, rec.wsr, rec.iterations)

    records = run_sweep(sweep, progress=progress)
    try:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        emit_csv(records, args.out, timing=args.timing)
    except OSError as exc:
        log.error("cannot write %s: %s", args.out, exc.strerror)
        return EXIT_CONFIG
    for s in summarize(records):
        log.info("%s=%s %s: mean %.4f bits/s/Hz over %d trials (%d failed)",
                 sweep.variable, s.value, s.mode, s.mean, s.ok, s.failed)
    failed = sum(r.failed for r in records)
    if failed:
        log.error("%d of %d runs aborted numerically", failed, len(records))
        return EXIT_NUMERIC
    log.info("wrote %d records to %s", len(records), args.out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
