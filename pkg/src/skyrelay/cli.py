"""Command-line entry point: train | eval | baseline | sweep.

Every subcommand takes --manifest and optionally --seed / --out; exit
code 0 on success, 2 with a diagnostic on any configuration or runtime
error the package raises. Set SKYRELAY_LOG=DEBUG (or any logging level
name) for progress output.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import harness
from .errors import SkyrelayError


def _add_common(sub):
    sub.add_argument("--manifest", required=True, help="experiment manifest (flat text or JSON)")
    sub.add_argument("--seed", type=int, default=None,
                     help="run only this seed instead of the manifest's list")
    sub.add_argument("--out", default=None, help="override the manifest's output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skyrelay",
        description="Train, evaluate, bound, and sweep relay-deployment policies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="PPO training, one run per seed, resumable")
    _add_common(train)

    ev = sub.add_parser("eval", help="fixed-policy evaluation with CSV + figure output")
    _add_common(ev)
    ev.add_argument("--checkpoint", default=None,
                    help="explicit checkpoint path (default: <out>/seed_k/final.npz)")
    ev.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=True,
                    help="act with the policy mean (default) or sample")

    bl = sub.add_parser("baseline", help="grid-restricted placement bounds on static snapshots")
    _add_common(bl)

    sweep = sub.add_parser("sweep", help="zero-shot evaluation across team sizes")
    _add_common(sweep)
    sweep.add_argument("--checkpoint", default=None,
                       help="explicit checkpoint path (default: <out>/seed_k/final.npz)")
    return parser


def main(argv=None) -> int:
    level = os.environ.get("SKYRELAY_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        manifest = harness.parse_manifest(args.manifest)
        if args.command == "train":
            harness.run_train(manifest, seed=args.seed, out_dir=args.out)
        elif args.command == "eval":
            harness.run_eval(manifest, checkpoint=args.checkpoint, seed=args.seed,
                             out_dir=args.out, deterministic=args.deterministic)
        elif args.command == "baseline":
            harness.run_baseline(manifest, seed=args.seed, out_dir=args.out)
        else:
            harness.run_sweep(manifest, checkpoint=args.checkpoint, seed=args.seed,
                              out_dir=args.out)
    except SkyrelayError as e:
        print(f"skyrelay: error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"skyrelay: error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
