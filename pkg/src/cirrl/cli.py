"""Command-line entry point.

Subcommands: ``generate``, ``train``, ``evaluate``, ``elbow``, and the
composite ``sweep``.  Every run is driven by a TOML config; flags
override individual knobs.  The ``CIRRL_THREADS`` environment variable
caps the worker pool used for seed-level parallelism.
"""
from __future__ import annotations

import argparse
import sys

from .config import apply_overrides, load_config
from .experiments import cmd_elbow, cmd_evaluate, cmd_generate, cmd_sweep, cmd_train


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated float list: {text!r}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated int list: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cirrl",
        description="Causally invariant representations: data generation, "
                    "training, robust linear fits, and experiment sweeps.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="TOML experiment config")
        p.add_argument("--seed", type=int, default=None,
                       help="run a single seed instead of the config's list")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--gamma", type=_float_list, default=None,
                       help="comma-separated robustness radii")
        p.add_argument("--eta", type=_float_list, default=None,
                       help="comma-separated perturbation strengths")
        p.add_argument("--eq5-literal", action="store_true",
                       help="pair every environment with the reference "
                            "response in the robust-fit moments")
        p.add_argument("--enforce-assumption1", action="store_true",
                       help="project the test perturbation mean onto the "
                            "latent-mediated subspace")
        return p

    common(sub.add_parser("generate", help="write dataset CSVs + manifests"))
    common(sub.add_parser("train", help="train representation and baselines"))
    common(sub.add_parser("evaluate", help="fit robust estimators and emit results.csv"))
    elbow = common(sub.add_parser("elbow", help="latent-dimension sweep"))
    elbow.add_argument("--dims", type=_int_list, required=True,
                       help="comma-separated latent dimensions, ascending")
    common(sub.add_parser("sweep", help="generate + train + evaluate"))
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    xcfg = load_config(args.config)
    xcfg = apply_overrides(
        xcfg, seed=args.seed, out=args.out, gamma=args.gamma, eta=args.eta,
        eq5_literal=args.eq5_literal,
        enforce_assumption1=args.enforce_assumption1)
    if args.command == "generate":
        for path in cmd_generate(xcfg):
            print(path)
    elif args.command == "train":
        cmd_train(xcfg)
        print(xcfg.out_dir)
    elif args.command == "evaluate":
        print(cmd_evaluate(xcfg))
    elif args.command == "elbow":
        print(cmd_elbow(xcfg, args.dims))
    elif args.command == "sweep":
        print(cmd_sweep(xcfg))
    return 0


if __name__ == "__main__":
    sys.exit(main())
