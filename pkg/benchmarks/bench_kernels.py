"""Time the compiled element kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--h 0.01] [--repeat 5]
"""
import argparse
import time

import numpy as np

from fibrehom._ext import _kernels_py as py
from fibrehom.mesh import build_cross_section_mesh

try:
    from fibrehom._ext import _kernels as cy
except ImportError:
    cy = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--h", type=float, default=0.01)
    ap.add_argument("--n3", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if cy is None:
        raise SystemExit("compiled kernels not built; run pip install -e . --no-build-isolation")

    m = build_cross_section_mesh(0.25, args.h, 4)
    tri = np.ascontiguousarray(m.triangles, dtype=np.int64)
    rng = np.random.default_rng(0)
    lengths = np.full(args.n3, 1.0 / args.n3)
    coef = rng.uniform(1.0, 4.0, args.n3)
    n = args.n3
    d, up, lo = (rng.standard_normal(n) + 1j * rng.standard_normal(n) for _ in range(3))
    X = rng.standard_normal((m.n_dofs, n, 4)) + 1j * rng.standard_normal((m.n_dofs, n, 4))

    cases = [
        (f"tri_bloch_entries ({len(tri)} triangles)",
         lambda k: k.tri_bloch_entries(m.vertices, tri, 0.4, -1.1)),
        (f"seg_bloch_entries ({n} segments)",
         lambda k: k.seg_bloch_entries(lengths, coef, 0.7)),
        (f"periodic_tridiag_apply ({X.shape})",
         lambda k: k.periodic_tridiag_apply(d, up, lo, X)),
    ]
    print(f"{'kernel':48s} {'python [ms]':>12s} {'cython [ms]':>12s} {'speedup':>8s}")
    for name, call in cases:
        tp = best_of(lambda: call(py), args.repeat)
        tc = best_of(lambda: call(cy), args.repeat)
        print(f"{name:48s} {1e3 * tp:12.3f} {1e3 * tc:12.3f} {tp / tc:8.2f}")


if __name__ == "__main__":
    main()
