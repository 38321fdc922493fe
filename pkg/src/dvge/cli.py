"""``dvge`` command-line entry point."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from dvge import experiment as ex
from dvge.data import DataFormatError
from dvge.nn import CheckpointError, DivergenceError

log = logging.getLogger("dvge")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment config (defaults are used when omitted)")
    common.add_argument("--seed", type=int, default=None, help="master seed; overrides master_seed in the config")
    common.add_argument("--out", type=Path, default=Path("runs"), help="output directory (default: runs)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps and ablations")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    ap = argparse.ArgumentParser(prog="dvge", description="Debiasing downstream classifiers through VAE latent perturbation.")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("train-vae", parents=[common], help="train (or reuse) the frozen VAE")
    sub.add_parser("train-sensitive", parents=[common], help="train (or reuse) the sensitive classifier on latent codes")
    sub.add_parser("train-task", parents=[common], help="train the configured method once per replicate seed")
    sub.add_parser("sweep", parents=[common], help="hyperparameter sweep; writes results.csv and pareto.csv")
    sub.add_parser("ablation", parents=[common], help="retrained and fixed sensitive-classifier ablations")
    sub.add_parser("synth-data", parents=[common], help="write the synthetic dataset as canonical CSV")
    rep = sub.add_parser("report", parents=[common], help="summarise a results directory into front CSVs")
    rep.add_argument("results_dir", type=Path, help="directory holding results.csv")
    return ap


def _config(args) -> tuple[dict, int]:
    cfg = ex.load_config(args.config) if args.config else ex.make_config({"schema_version": ex.SCHEMA_VERSION})
    seed = cfg["master_seed"] if args.seed is None else args.seed
    if seed < 0:
        raise ex.ConfigError("--seed must be non-negative")
    return cfg, seed


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        if args.command == "report":
            out = args.out if args.out != Path("runs") else None
            text, _ = ex.report(args.results_dir, out)
            sys.stdout.write(text)
            return 0
        cfg, seed = _config(args)
        out = args.out
        if args.command == "train-vae":
            path, hit = ex.cmd_train_vae(cfg, seed, out)
            print(f"{'cached' if hit else 'trained'} VAE: {path}")
        elif args.command == "train-sensitive":
            path, acc, hit = ex.cmd_train_sensitive(cfg, seed, out)
            print(f"{'cached' if hit else 'trained'} sensitive classifier: {path} (held-out accuracy {acc:.4f})")
        elif args.command == "train-task":
            path, hit = ex.cmd_train_task(cfg, seed, out, args.jobs)
            print(f"{'up to date' if hit else 'wrote'}: {path}")
        elif args.command == "sweep":
            path, hit = ex.cmd_sweep(cfg, seed, out, args.jobs)
            print(f"{'up to date' if hit else 'wrote'}: {path}")
        elif args.command == "ablation":
            paths, hit = ex.cmd_ablation(cfg, seed, out, args.jobs)
            for p in paths:
                print(f"{'up to date' if hit else 'wrote'}: {p}")
        elif args.command == "synth-data":
            print(f"wrote: {ex.cmd_synth_data(cfg, seed, out)}")
    except ex.NoResultsError as exc:
        print(f"no results: {exc}", file=sys.stderr)
        return 1
    except (ex.ConfigError, ex.OutputConflictError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataFormatError, CheckpointError, DivergenceError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    main()
