"""Benchmark the compiled scan kernel against the NumPy fallback.

Usage:
    python benchmarks/bench_topk.py [--records N] [--dim D] [--queries Q] [--topk K]

The compiled kernel fuses the dot-product pass with a bounded selection
heap; the fallback does a BLAS matvec plus a full lexsort. Both return
identical ids (ties broken by ascending row id), which is asserted here
before timing.
"""

import argparse
import time

import numpy as np

from retag._kernels import available_backends, get_backend


def make_store(rng, n, dim):
    m = rng.standard_normal((n, dim)).astype(np.float32)
    m /= np.linalg.norm(m.astype(np.float64), axis=1, keepdims=True).astype(np.float32)
    return np.ascontiguousarray(m)


def bench(impl, mat, queries, k, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        for q in queries:
            impl.topk_dot(mat, q, k)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--records", type=int, default=100_000)
    parser.add_argument("--dim", type=int, default=256)
    parser.add_argument("--queries", type=int, default=50)
    parser.add_argument("--topk", type=int, default=10)
    args = parser.parse_args()

    backends = available_backends()
    rng = np.random.default_rng(0)
    mat = make_store(rng, args.records, args.dim)
    queries = [rng.standard_normal(args.dim) for _ in range(args.queries)]

    impls = {name: get_backend(name) for name in backends}
    reference = None
    for name, impl in impls.items():
        ids, _ = impl.topk_dot(mat, queries[0], args.topk)
        if reference is None:
            reference = ids.tolist()
        else:
            assert ids.tolist() == reference, f"{name} disagrees with reference ids"

    print(f"store: {args.records} x {args.dim} float32, "
          f"{args.queries} queries, top-{args.topk}\n")
    print(f"{'backend':>10} {'total s':>10} {'ms/query':>10}")
    timings = {}
    for name, impl in impls.items():
        total = bench(impl, mat, queries, args.topk)
        timings[name] = total
        print(f"{name:>10} {total:>10.3f} {1000 * total / args.queries:>10.2f}")
    if len(timings) == 2:
        ratio = timings["numpy"] / timings["cython"]
        print(f"\ncompiled kernel speedup vs NumPy fallback: {ratio:.2f}x")


if __name__ == "__main__":
    main()
