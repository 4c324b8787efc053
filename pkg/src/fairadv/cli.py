"""Command line entry point: ``fairadv {baseline,run,paper-suite}``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import harness
from .data import AdvDataSpec, prepare_adult
from .model import TrainConfig

Y_CHOICES = {"low": "low_only", "high": "high_only", "balanced": "balanced"}


def _lambdas(text: str):
    try:
        vals = tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad lambda list: {text!r}")
    if not vals or any(v < 0 for v in vals):
        raise argparse.ArgumentTypeError("lambdas must be a nonempty list of non-negative reals")
    return vals


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="path to a local adult.data file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="base seed (default 0)")
    p.add_argument("--runs", type=_positive_int, help="runs per lambda (default 10, fast 3)")
    p.add_argument("--steps", type=int, help="training steps (default 100000, fast 5000)")
    p.add_argument("--fast", action="store_true", help="CI-sized schedule; not the full schedule")
    p.add_argument("--jobs", type=_positive_int, default=1, help="worker processes")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairadv",
        description="Adversarially debiased two-head classifier on UCI Adult.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("baseline", help="train without an adversary head")
    _common(p)

    p = sub.add_parser("run", help="one adversarial variant swept over lambda")
    _common(p)
    p.add_argument("--adv-size", type=_positive_int, default=2000)
    p.add_argument("--adv-z", choices=("balanced", "unbalanced"), default="balanced")
    p.add_argument("--adv-y", choices=tuple(Y_CHOICES), default="balanced")
    p.add_argument("--lambdas", type=_lambdas, default=harness.DEFAULT_LAMBDAS)

    p = sub.add_parser("paper-suite", help="baseline, composition and dataset-size experiments")
    _common(p)
    p.add_argument("--lambdas", type=_lambdas, default=harness.DEFAULT_LAMBDAS)
    return parser


def _schedule(args):
    runs = args.runs or (harness.FAST_RUNS if args.fast else harness.FULL_RUNS)
    steps = args.steps if args.steps is not None else (
        harness.FAST_STEPS if args.fast else harness.FULL_STEPS
    )
    if steps < 0:
        raise ValueError("--steps must be >= 0")
    return runs, steps


def _single(args, spec) -> None:
    if not os.path.exists(args.data):
        raise FileNotFoundError(f"data file not found: {args.data}")
    runs, steps = _schedule(args)
    os.makedirs(args.out, exist_ok=True)
    train, test, _ = prepare_adult(args.data, args.seed)
    lambdas = getattr(args, "lambdas", harness.DEFAULT_LAMBDAS)
    variant = harness.ExperimentVariant(spec, tuple(lambdas), runs, TrainConfig(steps=steps), args.seed)
    result = harness.run_variant(variant, train, test, jobs=args.jobs)
    written = harness.write_family(variant.name, [result], args.out)
    summary = os.path.join(args.out, f"{variant.name}_summary.csv")
    harness.emit_summary_csv([result], summary)
    for path in written + [summary]:
        print(path)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        if args.command == "baseline":
            _single(args, None)
        elif args.command == "run":
            spec = AdvDataSpec(args.adv_size, args.adv_z, Y_CHOICES[args.adv_y])
            _single(args, spec)
        else:
            runs, steps = _schedule(args)
            written = harness.paper_suite(
                args.data, args.out, fast=args.fast, base_seed=args.seed,
                lambdas=args.lambdas, runs=runs, steps=steps, jobs=args.jobs,
            )
            for path in written:
                print(path)
    except Exception as exc:
        print(f"fairadv: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
