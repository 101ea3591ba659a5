"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_backends.py [--size 1024] [--densities 1,1/4,1/16] [--repeat 3]

Prints a CSV: backend, kernel, density, median wall time and speedup over
the same backend's dense matmul. Outputs of both backends are checked for
bit equality before timing.
"""
import argparse
import statistics
import sys
import time
from fractions import Fraction

import numpy as np

from sparsekit.kernels import BACKENDS, dense_matmul, spmm_f32, use_backend
from sparsekit.sparsify import magnitude_mask
from sparsekit.tensor import csr_from_dense


def median_time(fn, repeat):
    walls = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        walls.append(time.perf_counter() - t0)
    return statistics.median(walls)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=1024)
    ap.add_argument("--densities", default="1,1/4,1/16")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args(argv)

    rng = np.random.default_rng(a.seed)
    n = a.size
    w = rng.standard_normal((n, n)).astype(np.float32)
    x = rng.standard_normal((n, n)).astype(np.float32)
    densities = [float(Fraction(d)) for d in a.densities.split(",")]
    sparse = {d: csr_from_dense(np.where(magnitude_mask([w], d).layers[0], w, np.float32(0))) for d in densities}

    ref = {}
    for name in sorted(BACKENDS):
        with use_backend(name):
            for d, csr in sparse.items():
                out = spmm_f32(csr, x)
                if d in ref and not np.array_equal(ref[d], out):
                    sys.exit(f"backend {name} differs from {sorted(BACKENDS)[0]} at density {d}")
                ref[d] = out

    print("backend,kernel,density,wall_s_median,speedup_vs_dense")
    for name in sorted(BACKENDS):
        with use_backend(name):
            t_dense = median_time(lambda: dense_matmul(w, x), a.repeat)
            print(f"{name},dense,1,{t_dense!r},1.0")
            for d, csr in sparse.items():
                t = median_time(lambda: spmm_f32(csr, x), a.repeat)
                print(f"{name},spmm_f32,{d!r},{t!r},{t_dense / t!r}")


if __name__ == "__main__":
    main()
