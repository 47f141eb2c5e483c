"""Time the compiled and numpy correlator kernels on a training-sized batch.

    python benchmarks/bench_kernels.py [--batch 128] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from hybrid_ccnn import kernels


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=128)
    ap.add_argument("--lattice", type=int, default=13)
    ap.add_argument("--filter-size", type=int, default=3)
    ap.add_argument("--filters", type=int, default=24, help="bank size (8 group images x 3 filters)")
    ap.add_argument("--order", type=int, default=3)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    F = args.filter_size
    M = args.lattice + F - 1
    x = rng.normal(size=(args.batch, args.lattice + 2 * (F - 1), args.lattice + 2 * (F - 1)))
    k = rng.uniform(size=(args.filters, F, F))
    w = rng.normal(size=(M, M))
    d = rng.normal(size=(args.batch, args.filters, args.order))

    backends = kernels.available_backends()
    print(f"batch={args.batch} L={args.lattice} F={F} bank={args.filters} order={args.order}")
    results = {}
    for b in backends:
        fwd = min(timeit.repeat(lambda: kernels.pooled_correlators(x, k, w, args.order, backend=b),
                                number=1, repeat=args.repeat))
        bwd = min(timeit.repeat(lambda: kernels.pooled_correlators_backward(x, k, w, d, backend=b),
                                number=1, repeat=args.repeat))
        results[b] = (fwd, bwd)
        print(f"{b:>7}: forward {1e3 * fwd:8.2f} ms   backward {1e3 * bwd:8.2f} ms")
    if "cython" in results and "numpy" in results:
        (cf, cb), (nf, nb) = results["cython"], results["numpy"]
        print(f"speedup: forward x{nf / cf:.2f}   backward x{nb / cb:.2f}")
        ref = kernels.pooled_correlators(x, k, w, args.order, backend="numpy")
        got = kernels.pooled_correlators(x, k, w, args.order, backend="cython")
        print(f"max relative deviation: {np.max(np.abs(got - ref)) / np.max(np.abs(ref)):.2e}")


if __name__ == "__main__":
    main()
