"""Time each numeric kernel through its numba and numpy paths.

    python benchmarks/bench_kernels.py [--repeat N]

The numba path is warmed up once so compile time is excluded. A second
section times whole diagram builds with the bound kernels; run it again with
MRCOORD_DISABLE_JIT=1 to see the pure-numpy pipeline.
"""
import argparse
import math
import time

import numpy as np

from mrcoord import kernels as K
from mrcoord.geometry import BoundingBox, EllipticalSite, elvd, point_voronoi


def _cases(rng):
    b = BoundingBox.from_extent(-4.5, -3.0, 4.5, 3.0)
    cols, rows = 90, 60  # 10 cells/m, the simulation default
    xs = b.min.x + (np.arange(cols) + 0.5) / 10
    ys = b.min.y + (np.arange(rows) + 0.5) / 10
    gx, gy = np.tile(xs, rows), np.repeat(ys, cols)
    f0 = rng.uniform(-3.5, 3.5, (7, 2))
    f1 = f0 + rng.uniform(-1.2, 1.2, (7, 2))
    labels = K.ced_labels_np(gx, gy, f0, f1)[0].reshape(rows, cols)
    pts = np.column_stack([rng.uniform(-4, 4, 7), rng.uniform(-2.8, 2.8, 7)])
    ang = rng.uniform(-math.pi, math.pi, 7)
    axes = np.column_stack([np.cos(ang), np.sin(ang)])
    samples = rng.uniform(-4, 4, (350, 2))
    cloud = rng.uniform(-4, 4, (60, 2))
    return {
        "ced_labels": (K.ced_labels_np, K.ced_labels_jit, (gx, gy, f0, f1)),
        "label_corner_counts": (K.label_corner_counts_np, K.label_corner_counts_jit, (labels,)),
        "empty_circle_triangles": (K.empty_circle_triangles_np, K.empty_circle_triangles_jit, (pts, 1e-12)),
        "weight_field": (K.weight_field_np, K.weight_field_jit,
                         (samples[:, 0].copy(), samples[:, 1].copy(), pts, axes, 0.5)),
        "eps_components": (K.eps_components_np, K.eps_components_jit, (cloud, 0.8)),
    }, b, f0, f1, pts


def _best(fn, args, repeat):
    best = math.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    cases, b, f0, f1, pts = _cases(rng)
    print(f"kernel backend bound at import: {'numba' if K.USE_JIT else 'numpy'}")
    loop = "numba ms" if K.USE_JIT else "loop ms"  # without JIT the loop versions run as plain Python
    print(f"{'kernel':24s} {'numpy ms':>10s} {loop:>10s} {'speedup':>8s}")
    for name, (np_fn, jit_fn, a) in cases.items():
        jit_fn(*a)  # compile / load cache
        tn = _best(np_fn, a, args.repeat)
        tj = _best(jit_fn, a, args.repeat)
        print(f"{name:24s} {tn * 1e3:10.3f} {tj * 1e3:10.3f} {tn / tj:8.1f}x")

    sites = [EllipticalSite(tuple(p), tuple(q), k) for k, (p, q) in enumerate(zip(f0, f1))]
    point_voronoi(pts, b), elvd(sites, b, 10.0)
    tv = _best(lambda: point_voronoi(pts, b), (), max(10, args.repeat // 4))
    te = _best(lambda: elvd(sites, b, 10.0), (), max(10, args.repeat // 4))
    print(f"\n7-site point_voronoi: {tv * 1e3:.2f} ms   7-site elvd at 10 cells/m: {te * 1e3:.2f} ms")


if __name__ == "__main__":
    main()
