"""Compare the compiled allocator kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--instances 300] [--vehicles 8] [--repeat 3]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from vedgefl import _fallback

try:
    from vedgefl import _kernels
except ImportError:  # extension not built
    _kernels = None


def make_instances(n_inst: int, n_veh: int, seed: int):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_inst):
        A = rng.uniform(0.8, 1.6, n_veh)
        B = rng.uniform(0.2, 1.0, n_veh)
        C = rng.uniform(5.0, 9.0, n_veh)
        phi = rng.uniform(0.1, 1.0, n_veh)
        D = phi * B
        cap = np.full(n_veh, 12.0)
        lo = np.maximum(min(0.05, 1.0 / n_veh), D / (cap - C))
        M = float(rng.integers(1, n_veh + 1))
        gain = 10 ** rng.uniform(2, 5, n_veh)
        out.append((A, B, C, D, lo, np.ones(n_veh), M, cap, phi, gain))
    return out


def run(mod, instances):
    results = []
    for A, B, C, D, lo, hi, M, cap, phi, gain in instances:
        bw = mod.dual_ascent(A, B, C, D, lo, hi, M, cap, np.ones(A.shape[0]), 1.0, 1.0, 1e-4, 1e-4, 200)
        a = 4.0 / np.asarray(bw[0])
        pw = mod.sca_power(a, gain, cap - C, phi, 0.1, 1.0, 1e-4, 50)
        results.append((np.asarray(bw[0]), np.asarray(pw[0])))
    return results


def timed(mod, instances, repeat):
    best = float("inf")
    res = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        res = run(mod, instances)
        best = min(best, time.perf_counter() - t0)
    return best, res


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--instances", type=int, default=300)
    p.add_argument("--vehicles", type=int, default=8)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    inst = make_instances(args.instances, args.vehicles, args.seed)
    t_py, r_py = timed(_fallback, inst, args.repeat)
    print(f"numpy fallback : {t_py:.4f} s for {args.instances} instances")
    if _kernels is None:
        print("compiled kernels not available; build with `pip install -e . --no-build-isolation`")
        return
    t_cy, r_cy = timed(_kernels, inst, args.repeat)
    diff = max(max(np.max(np.abs(a[0] - b[0])), np.max(np.abs(a[1] - b[1]))) for a, b in zip(r_py, r_cy))
    print(f"cython kernels : {t_cy:.4f} s  (speedup {t_py / t_cy:.1f}x, max |difference| {diff:.2e})")


if __name__ == "__main__":
    main()
