"""Time the compiled scan kernel against the numpy fallback.

    python benchmarks/bench_scan.py [--lengths 256,1024,4096] [--repeat 5]

Shapes mimic one four-route scan of a square feature map: K=4 routes, D
channels, N state size, L = side*side. Timings are best-of-``repeat``.
Set OMP_NUM_THREADS=1 beforehand for stable numbers; the numpy path calls
einsum, which may use BLAS threads.
"""
import argparse
import time

import numpy as np

from vsscrowd import _scan_ref
from vsscrowd.scan import _KERNELS


def operands(rng, K, L, D, N):
    return (rng.normal(size=(K, L, D)), rng.uniform(0.05, 1.0, (K, L, D)), -rng.uniform(0.1, 2.0, (K, D, N)),
            rng.normal(size=(K, L, N)), rng.normal(size=(K, L, N)), rng.normal(size=(K, D)))


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--lengths", default="256,1024,4096")
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--state", type=int, default=8)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    compiled = _KERNELS.get("cython")
    if compiled is None:
        print("compiled kernel not built; timing the numpy fallback only")
    rng = np.random.default_rng(args.seed)
    print(f"{'L':>6} {'pass':>8} {'numpy_s':>10} {'cython_s':>10} {'speedup':>8} {'max_abs_diff':>13}")
    for L in (int(v) for v in args.lengths.split(",")):
        ops = operands(rng, 4, L, args.channels, args.state)
        y_ref, h_ref = _scan_ref.scan_forward(*ops)
        gy = rng.normal(size=y_ref.shape)
        passes = {
            "forward": (lambda k: k.scan_forward(*ops), lambda k: k.scan_forward(*ops)[0]),
            "backward": (lambda k: k.scan_backward(gy, *ops, h_ref), lambda k: k.scan_backward(gy, *ops, h_ref)[0]),
        }
        for name, (run, first) in passes.items():
            t_ref = best_of(lambda: run(_scan_ref), args.repeat)
            if compiled is None:
                print(f"{L:>6} {name:>8} {t_ref:>10.4f} {'-':>10} {'-':>8} {'-':>13}")
                continue
            t_c = best_of(lambda: run(compiled), args.repeat)
            diff = np.abs(np.asarray(first(compiled)) - first(_scan_ref)).max()
            print(f"{L:>6} {name:>8} {t_ref:>10.4f} {t_c:>10.4f} {t_ref / t_c:>7.1f}x {diff:>13.1e}")


if __name__ == "__main__":
    main()
