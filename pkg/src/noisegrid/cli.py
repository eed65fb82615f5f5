"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration problem, 3 training
divergence, 2 any other data/processing error.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from . import pipeline
from .config import load_config
from .errors import ConfigError, ConvergenceError, NoiseGridError


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; our contract reserves 2 for data
    # errors, so remap usage problems to 1
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _build_parser() -> _Parser:
    ap = _Parser(
        prog="noisegrid",
        description="Localize tampered patches in scientific images via "
                    "noise-residual inconsistencies.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config's global seed")
        p.add_argument("--jobs", type=int, default=None,
                       help="worker count (falls back to NOISEGRID_JOBS, then 1)")
        return p

    add("synth", "generate the tampered corpus with ground-truth masks")
    add("features", "extract per-patch features for every corpus image")
    add("train", "train the patch classifier on the training split")
    p = add("predict", "score an image (or the test split) with the trained model")
    p.add_argument("--image", default=None, help="single image to score")
    p.add_argument("--model", default=None, help="model file (default: config path)")
    p = add("eval", "compute patch metrics over the test split")
    p.add_argument("--method", choices=("ours", "noi"), default="ours",
                   help="score source: trained model or noise-level baseline")
    return ap


def _resolve_jobs(args) -> int:
    if args.jobs is not None:
        jobs = args.jobs
    else:
        env = os.environ.get("NOISEGRID_JOBS", "").strip()
        if not env:
            return 1
        try:
            jobs = int(env)
        except ValueError:
            raise ConfigError(f"NOISEGRID_JOBS must be an integer, got {env!r}") from None
    if jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {jobs}")
    return jobs


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        jobs = _resolve_jobs(args)
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError(f"seed must be non-negative, got {args.seed}")
            cfg = dataclasses.replace(cfg, seed=args.seed)

        if args.command == "synth":
            pipeline.cmd_synth(cfg)
        elif args.command == "features":
            pipeline.cmd_features(cfg, jobs=jobs)
        elif args.command == "train":
            pipeline.cmd_train(cfg)
        elif args.command == "predict":
            pipeline.cmd_predict(cfg, image=args.image, model=args.model)
        else:
            pipeline.cmd_eval(cfg, method=args.method, jobs=jobs)
        return 0
    except ConfigError as e:
        print(f"noisegrid: config error: {e}", file=sys.stderr)
        return 1
    except ConvergenceError as e:
        print(f"noisegrid: convergence failure: {e}", file=sys.stderr)
        return 3
    except NoiseGridError as e:
        print(f"noisegrid: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
