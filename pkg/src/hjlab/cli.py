"""Command-line entry point: ``hjlab <subcommand> [--config PATH] [--out DIR] ...``."""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config
from .harness import (StageError, concentration_from_bundle, convergence_report, emit_plots,
                      format_convergence, run_stage, run_sweep, stage_csv)

log = logging.getLogger("hjlab")

SINGLE_STAGES = ("psi", "hopflax", "pde", "finite-n", "curie-weiss")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML experiment configuration")
    common.add_argument("--out", type=Path, help="output directory (bundle for sweep/report/plots)")
    common.add_argument("--seed", type=int, help="override base_seed (unsigned 64-bit)")
    common.add_argument("--threads", type=int, help="worker threads for disorder samples")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="hjlab", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {
        "psi": "tabulate the scalar-channel free energy (h, psi, psi_prime)",
        "hopflax": "Hopf-Lax limit on the [0, M]^2 grid (p = 2)",
        "pde": "finite-difference limit solution slices (t, h, f)",
        "finite-n": "exact-enumeration disorder averages on the grid",
        "curie-weiss": "Curie-Weiss free energy and HJ identity residuals",
        "sweep": "run all configured stages and write a bundle",
        "report": "convergence table of an existing bundle",
        "plots": "write gnuplot scripts for an existing bundle",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return ap


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["base_seed"] = args.seed
    if args.threads is not None:
        changes["threads"] = args.threads
    if args.out is not None:
        changes["output_dir"] = str(args.out)
    return cfg.replace(**changes) if changes else cfg


def _bundle_dir(args) -> Path:
    if args.out is not None:
        return args.out
    if args.config is not None:
        return Path(load_config(args.config).output_dir)
    return Path(ExperimentConfig().output_dir)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    stage = args.command
    try:
        if stage in SINGLE_STAGES:
            cfg = _config(args)
            if args.out is None:
                sys.stdout.write(stage_csv(cfg, stage))
            else:
                path = run_stage(cfg, stage, args.out)
                print(path)
        elif stage == "sweep":
            cfg = _config(args)
            out = run_sweep(cfg)
            log.info("bundle written to %s", out)
            print(out)
        elif stage == "report":
            bundle = _bundle_dir(args)
            print(format_convergence(convergence_report(bundle)))
            conc = concentration_from_bundle(bundle)
            print(f"max-grid Var(F_N) log-log slope: {conc.slope:.4f}")
        elif stage == "plots":
            bundle = _bundle_dir(args)
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                scripts = emit_plots(bundle)
            for w in caught:
                print(f"warning: {w.message}", file=sys.stderr)
            for s in scripts:
                print(s)
    except ConfigError as exc:
        print(f"hjlab: stage 'config' failed: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"hjlab: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # report/plots on a broken bundle
        print(f"hjlab: stage {stage!r} failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
