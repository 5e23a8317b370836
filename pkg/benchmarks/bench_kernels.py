"""Compare the compiled and pure-Python uniformization kernels.

Both backends consume identical uniforms, so besides timing we check that
they end in the same configuration with the same event counters.

    python benchmarks/bench_kernels.py --N 64 --proposals 300000
"""

import argparse
import time

import numpy as np

from lgk.dynamics import SimParams, run_events
from lgk.kernels import BACKENDS
from lgk.lattice import Torus
from lgk.measure import PotentialField, sample
from lgk.rng import stream
from lgk.velocity import model_one, sqrt2_set


def bench(vs, N, a, n_prop, seed, repeat):
    torus = Torus(vs.dim, N)
    init = sample(PotentialField.constant(torus, np.zeros(vs.dim + 1)), vs, stream(seed, 0, "initial"))
    params = SimParams(N, a, vs)
    results = {}
    for name in sorted(BACKENDS):
        best = float("inf")
        for _ in range(repeat):
            cfg = init.copy()
            t0 = time.perf_counter()
            counters = run_events(params, cfg, n_prop, stream(seed, 0, "dynamics"), backend=name)
            best = min(best, time.perf_counter() - t0)
        results[name] = (best, cfg.occupancy.copy(), counters.copy())
    return results


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, default=64)
    ap.add_argument("--a", type=float, default=0.5)
    ap.add_argument("--proposals", type=int, default=300_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    for label, vs in (("{+-1}", model_one(1)), ("{+-1,+-sqrt2}", sqrt2_set()),
                      ("Model I d=2", model_one(2))):
        N = args.N if vs.dim == 1 else max(8, int(args.N ** 0.5))
        res = bench(vs, N, args.a, args.proposals, args.seed, args.repeat)
        line = [f"{label:>14} N={N:<4}"]
        for name, (t, _, _) in res.items():
            line.append(f"{name}: {t * 1e3:8.1f} ms ({t / args.proposals * 1e9:6.1f} ns/proposal)")
        if len(res) == 2:
            (_, o1, c1), (_, o2, c2) = res.values()
            same = np.array_equal(o1, o2) and np.array_equal(c1, c2)
            tc, tp = res["cython"][0], res["python"][0]
            line.append(f"speedup {tp / tc:5.1f}x identical={same}")
        print("  ".join(line))


if __name__ == "__main__":
    main()
