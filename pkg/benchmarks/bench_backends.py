#!/usr/bin/env python3
"""Benchmark the compiled tile kernel against the pure-numpy fallback.

Runs masked block attention on identical inputs through every available
backend, checks that outputs agree, and prints per-backend timings with
the speedup of the compiled kernel. Sweep covers a dense case and two
sparsity levels.

    python benchmarks/bench_backends.py [--tokens 2048] [--dim 64]
        [--block 16] [--repeats 5] [--seed 0]
"""

import argparse
import time

import numpy as np

from omniattn._kernels import available_backends
from omniattn.symbols import ceil_div


def random_case(rng, n, d, t_q, t_kv, density):
    q = rng.standard_normal((n, d)).astype(np.float32)
    k = rng.standard_normal((n, d)).astype(np.float32)
    v = rng.standard_normal((n, d)).astype(np.float32)
    active = (rng.random(t_q) < max(density, 0.05)).astype(np.uint8)
    if not active.any():
        active[0] = 1
    pair_bits = (rng.random((t_q, t_kv)) < density).astype(np.uint8)
    for r in range(t_q):
        if active[r] and not pair_bits[r].any():
            pair_bits[r, int(rng.integers(t_kv))] = 1
        if not active[r]:
            pair_bits[r] = 0
    return q, k, v, active, pair_bits


def bench(mod, case, b, scale, repeats):
    q, k, v, active, pair_bits = case
    out = np.zeros_like(q)
    mod.masked_block_attention(q, k, v, active, pair_bits, b, b, scale, out)
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        pairs = mod.masked_block_attention(
            q, k, v, active, pair_bits, b, b, scale, out
        )
        best = min(best, time.perf_counter() - start)
    return best, pairs, out.copy()


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tokens", type=int, default=2048)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--block", type=int, default=16)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    backends = available_backends()
    if len(backends) < 2:
        print(f"only {list(backends)} built; nothing to compare")
    n, d, b = args.tokens, args.dim, args.block
    t = ceil_div(n, b)
    scale = 1.0 / np.sqrt(d)
    rng = np.random.default_rng(args.seed)

    print(f"tokens={n} dim={d} block={b} grid={t}x{t}")
    print(f"{'density':>8} {'backend':>10} {'pairs':>8} {'best(ms)':>10} {'Kpairs/s':>10}")
    for density in (1.0, 0.5, 0.1):
        case = random_case(rng, n, d, t, t, density)
        results = {}
        for name, mod in backends.items():
            best, pairs, out = bench(mod, case, b, scale, args.repeats)
            results[name] = (best, pairs, out)
            rate = pairs / best / 1e3
            print(f"{density:>8.2f} {name:>10} {pairs:>8} {best * 1e3:>10.2f} {rate:>10.1f}")
        if len(results) == 2:
            (o1, o2) = (results[k][2] for k in sorted(results))
            assert np.allclose(o1, o2, rtol=1e-4, atol=1e-5), "backends disagree"
            t_py = results["python"][0]
            t_c = results["compiled"][0]
            print(f"{'':>8} compiled speedup over python: {t_py / t_c:.2f}x")


if __name__ == "__main__":
    main()
