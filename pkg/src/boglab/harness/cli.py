"""Command-line entry point: ``boglab <subcommand> --config run.yaml``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from ..fock import FockError
from ..hartree import HartreeError
from ..pairdyn import PairDynamicsError
from . import pipeline
from .config import ConfigError, parse_config
from .sweep import fit_powerlaw, sweep


def _load(args):
    cfg = parse_config(args.config)
    changes = {}
    if args.dt is not None:
        changes["time.dt"] = args.dt
    if args.tfinal is not None:
        changes["time.t_final"] = args.tfinal
    if args.seed is not None:
        changes["seed"] = args.seed
    if changes:
        cfg = cfg.replace(**changes)
    return cfg, Path(args.out or cfg.output)


def cmd_hartree(args):
    cfg, out = _load(args)
    s = pipeline.setup(cfg)
    traj = pipeline.run_hartree(s)
    return pipeline.write_hartree(traj, out)


def cmd_pair(args):
    cfg, out = _load(args)
    s = pipeline.setup(cfg)
    traj = pipeline.run_hartree(s)
    pt = pipeline.run_pair(s, traj)
    out.mkdir(parents=True, exist_ok=True)
    pt.write_csv(out / "pair.csv")
    pipeline.write_hartree(traj, out)
    return out / "pair.csv"


def cmd_fock(args):
    cfg, out = _load(args)
    s = pipeline.setup(cfg)
    traj = pipeline.run_hartree(s)
    return pipeline.write_fock(pipeline.run_fock(s, traj), out)


def cmd_exact(args):
    cfg, out = _load(args)
    s = pipeline.setup(cfg)
    H, ex = pipeline.run_exact(s)
    return pipeline.write_exact(H, ex, out)


def cmd_compare(args):
    cfg, out = _load(args)
    rec = pipeline.run_pipeline(cfg)
    rec.write(out)
    if rec.pair_rows:
        with open(out / "pair.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("time",) + pipeline.PAIR_COLUMNS)
            for r in rec.pair_rows:
                w.writerow([pipeline._fmt(r[c]) for c in ("time",) + pipeline.PAIR_COLUMNS])
    return out / "run.csv"


def cmd_sweep(args):
    cfg, out = _load(args)
    summary = sweep(cfg, out)
    if not args.quiet:
        print(json.dumps(summary["fits"], indent=2, sort_keys=True))
    return out / "summary.csv"


def cmd_fit(args):
    with open(args.input, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if args.beta is not None:
        rows = [r for r in rows if float(r["beta"]) == args.beta]
    pts = [(float(r[args.x]), float(r[args.y])) for r in rows
           if r.get("status", "ok") == "ok"]
    slope, intercept, residual = fit_powerlaw(pts)
    result = {"x": args.x, "y": args.y, "points": len(pts), "slope": slope,
              "intercept": intercept, "residual": residual}
    print(json.dumps(result, indent=2, sort_keys=True))
    return None


COMMANDS = {
    "hartree": (cmd_hartree, "evolve the condensate and write hartree.csv"),
    "pair": (cmd_pair, "evolve the pair (gamma, alpha) and write pair.csv"),
    "fock": (cmd_fock, "evolve the excitation vector in a truncated Fock space"),
    "exact": (cmd_exact, "exact N-body evolution from the embedded initial state"),
    "compare": (cmd_compare, "full pipeline with the exact comparison"),
    "sweep": (cmd_sweep, "run the pipeline over the configured N and beta lists"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="boglab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--out", help="output directory (default: config 'output')")
        p.add_argument("--dt", type=float, help="override time.dt")
        p.add_argument("--tfinal", type=float, help="override time.t_final")
        p.add_argument("--seed", type=int, help="override seed")
        p.add_argument("--quiet", action="store_true", help="only print errors")
    p = sub.add_parser("fit", help="power-law fit of a column against another in a CSV")
    p.add_argument("--input", required=True, help="CSV file, e.g. a sweep summary.csv")
    p.add_argument("--x", default="N")
    p.add_argument("--y", default="norm_error_sq")
    p.add_argument("--beta", type=float, help="restrict to one beta")
    p.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = cmd_fit if args.command == "fit" else COMMANDS[args.command][0]
    try:
        written = handler(args)
    except (ConfigError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (HartreeError, PairDynamicsError, FockError) as err:
        print(f"aborted: {err}", file=sys.stderr)
        return 3
    if written is not None and not args.quiet:
        print(f"wrote {written}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
