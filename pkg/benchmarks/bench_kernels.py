"""Time the hot kernels under numba and under the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--steps 50000] [--rollouts 20000] [--repeat 3]

Each backend runs in its own interpreter because the choice is made at import
time from RETURNDENSITY_DISABLE_NUMBA.
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def best_of(fn, repeat):
    fn()  # warm up (JIT compile or cache load)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def worker(steps, rollouts, repeat):
    from returndensity import backend_name, config as cfgmod, updates
    from returndensity.densities import ModelKind
    from returndensity.experiment import monte_carlo_return_stats, one_hot_policy, run_trial

    timings = {}
    for preset in ("table2a-gaussian-q01", "table2b-skewed-laplace-q03"):
        cfg, _ = cfgmod.load(preset, {"experiment": {"total_steps": str(steps)}, "eval": {"n_rollouts": "1"}})
        timings[f"train {preset} ({steps} steps)"] = best_of(lambda: run_trial(cfg, 1), repeat)

    mdp = cfgmod.load("table2a-watkins")[0].mdp
    acts = np.array([2, 2, 2, 2, 2, 1] + [0] * 5 + [1] + [0] * 6)
    policy = one_hot_policy(acts, 4)
    timings[f"monte carlo ({rollouts} rollouts)"] = best_of(
        lambda: monte_carlo_return_stats(mdp, policy, 12, 0.95, rollouts, "auto", np.random.default_rng(0)),
        repeat)

    rng = np.random.default_rng(0)
    n = 100_000
    cur = np.column_stack([rng.uniform(-5, 5, n), rng.uniform(0.2, 3, n), rng.uniform(0.05, 0.95, n)])
    tgt = np.column_stack([rng.uniform(-5, 5, n), rng.uniform(0.2, 3, n), rng.uniform(0.05, 0.95, n)])
    rew, disc = rng.uniform(-5, 5, n), np.full(n, 0.95)
    timings[f"ng_batch skewed ({n} contexts)"] = best_of(
        lambda: updates.ng_batch(ModelKind.SKEWED_LAPLACE.code, cur, tgt, rew, disc), repeat)
    print(json.dumps({"backend": backend_name(), "timings": timings}))


def run_backend(disable, args):
    env = dict(os.environ, RETURNDENSITY_DISABLE_NUMBA="1" if disable else "0")
    cmd = [sys.executable, __file__, "--worker", "--steps", str(args.steps),
           "--rollouts", str(args.rollouts), "--repeat", str(args.repeat)]
    out = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--steps", type=int, default=50_000)
    parser.add_argument("--rollouts", type=int, default=20_000)
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()
    if args.worker:
        worker(args.steps, args.rollouts, args.repeat)
        return

    fast = run_backend(False, args)
    slow = run_backend(True, args)
    print(f"{'kernel':52s} {fast['backend']:>10s} {slow['backend']:>10s} {'speedup':>8s}")
    for name, t_fast in fast["timings"].items():
        t_slow = slow["timings"][name]
        print(f"{name:52s} {t_fast:9.3f}s {t_slow:9.3f}s {t_slow / t_fast:7.1f}x")


if __name__ == "__main__":
    main()
