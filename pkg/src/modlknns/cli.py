"""Command-line entry point: ``modlknns {validate,run,report,sweep-k}``."""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigInvalid, validate
from .experiment import MissingArtifacts, report, run, sweep_k


def _seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.replace(";", ",").split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--seeds expects comma-separated integers, got {text!r}")
    if not seeds:
        raise argparse.ArgumentTypeError("--seeds is empty")
    return seeds


def _workers(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("--workers must be at least 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="modlknns",
                                description="Model-ensemble distillation with neighbor smoothing.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a config file without running anything")
    v.add_argument("--config", required=True)

    for name, helptext in (("run", "train references and all ablation arms"),
                           ("sweep-k", "evaluate B+MODL+KNNS across neighbor counts")):
        r = sub.add_parser(name, help=helptext)
        r.add_argument("--config", required=True)
        r.add_argument("--out", help="output directory (overrides [output] dir)")
        r.add_argument("--seeds", type=_seeds, help="comma-separated seeds, e.g. 0,1,2")
        r.add_argument("--workers", type=_workers, default=1,
                       help="processes for reference training")

    rep = sub.add_parser("report", help="summarize a completed output directory")
    rep.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            diags = validate(args.config)
            for d in diags:
                print(d, file=sys.stderr)
            if diags:
                return 2
            print(f"{args.config}: OK")
        elif args.command == "run":
            out = run(args.config, args.out, args.seeds, args.workers)
            print(f"wrote {out}")
        elif args.command == "sweep-k":
            for k, gain in sweep_k(args.config, args.out, args.seeds, args.workers):
                print(f"K={k}\t{gain:+.6f}")
        else:
            sys.stdout.write(report(args.out))
    except ConfigInvalid as exc:
        for d in exc.diagnostics:
            print(d, file=sys.stderr)
        return 2
    except (MissingArtifacts, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
