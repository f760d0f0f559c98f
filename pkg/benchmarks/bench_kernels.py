"""Benchmark the leaf-table build kernels: numba JIT vs pure numpy.

Runs itself twice in subprocesses, once per backend (the backend is chosen
at import time from ORDERSPN_NO_NUMBA), and prints a comparison table.

Usage: python3 benchmarks/bench_kernels.py [--sizes 8,10,12] [--repeats 3]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def time_backend(sizes, repeats):
    from orderspn.kernels import USE_NUMBA, build_max_table, build_sum_table

    rng = np.random.default_rng(0)
    # warm up the JIT so compile time is not counted
    build_sum_table(rng.normal(size=1 << 3), 3)
    build_max_table(rng.normal(size=1 << 3), 3)
    rows = []
    for m in sizes:
        scores = rng.normal(size=1 << m)
        best_sum = min(
            _timed(build_sum_table, scores, m) for _ in range(repeats)
        )
        best_max = min(
            _timed(build_max_table, scores, m) for _ in range(repeats)
        )
        rows.append({"m": m, "sum_s": best_sum, "max_s": best_max})
    return {"backend": "numba" if USE_NUMBA else "numpy", "rows": rows}


def _timed(fn, scores, m):
    t0 = time.perf_counter()
    fn(scores, m)
    return time.perf_counter() - t0


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="8,10,12")
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    if args.worker:
        print(json.dumps(time_backend(sizes, args.repeats)))
        return

    results = {}
    for no_numba in ("", "1"):
        env = dict(os.environ, ORDERSPN_NO_NUMBA=no_numba)
        out = subprocess.run(
            [sys.executable, __file__, "--worker",
             "--sizes", args.sizes, "--repeats", str(args.repeats)],
            env=env, capture_output=True, text=True, check=True,
        )
        data = json.loads(out.stdout.splitlines()[-1])
        results[data["backend"]] = data["rows"]

    print(f"{'cells':>10} {'numba (s)':>12} {'numpy (s)':>12} {'speedup':>9}")
    for a, b in zip(results["numba"], results["numpy"]):
        total_a = a["sum_s"] + a["max_s"]
        total_b = b["sum_s"] + b["max_s"]
        print(f"{3 ** a['m']:>10} {total_a:>12.4f} {total_b:>12.4f} "
              f"{total_b / total_a:>8.1f}x")


if __name__ == "__main__":
    main()
