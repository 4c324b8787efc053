#!/usr/bin/env python
"""
Time the numba and numpy training backends on the Adult training split.

Both backends run the same seeded schedule, so the script also reports how
far apart the final parameters ended up.

Usage:
    python benchmarks/bench_backends.py
    python benchmarks/bench_backends.py --steps 5000 --lam 1.0
    python benchmarks/bench_backends.py --output bench.json
"""
import argparse
import json
import os
import time

import numpy as np

from fairadv import data as D
from fairadv import model as M
from fairadv._kernels import NUMBA_AVAILABLE

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def time_backend(backend, train, adv, config, repeats):
    best, model = float("inf"), None
    for _ in range(repeats):
        t0 = time.perf_counter()
        model = M.train(train, adv, config, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, model


def max_param_diff(a, b):
    pa, pb = a.params(), b.params()
    return max(float(np.max(np.abs(pa[k] - pb[k]))) for k in pa)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    p.add_argument("--data", default=os.path.join(ROOT, "data", "adult.data"))
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--output", help="write results as JSON")
    args = p.parse_args(argv)

    train, _, _ = D.prepare_adult(args.data, 0)
    adv = D.build_adv_dataset(train, D.AdvDataSpec(2000, "balanced", "balanced"), 0)
    config = M.TrainConfig(steps=args.steps, lam=args.lam)
    print(f"train={len(train)} features={train.n_features} steps={args.steps} lam={args.lam}")

    results = {"steps": args.steps, "lam": args.lam}
    models = {}
    backends = ["numpy"] + (["numba"] if NUMBA_AVAILABLE else [])
    if NUMBA_AVAILABLE:
        # compile outside the timed region
        M.train(train, adv, M.TrainConfig(steps=2, lam=args.lam), backend="numba")
    for backend in backends:
        secs, models[backend] = time_backend(backend, train, adv, config, args.repeats)
        per_step = 1e3 * secs / args.steps
        results[backend] = {"seconds": secs, "ms_per_step": per_step}
        print(f"{backend:>6}: {secs:8.3f} s  {per_step:.4f} ms/step")

    if len(models) == 2:
        results["speedup"] = results["numpy"]["seconds"] / results["numba"]["seconds"]
        results["max_param_diff"] = max_param_diff(models["numpy"], models["numba"])
        print(f"speedup {results['speedup']:.1f}x, max |param diff| {results['max_param_diff']:.2e}")
    else:
        print("numba not installed; only the numpy backend was timed")

    if args.output:
        with open(args.output, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
