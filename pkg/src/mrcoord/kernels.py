"""Hot numeric kernels.

Every kernel has a vectorized numpy implementation (``*_np``) and an explicit
loop implementation compiled with numba (``*_jit``). The public name is bound
to one of them at import time according to :data:`mrcoord._accel.USE_JIT`.
Both paths are kept importable so tests and benchmarks can compare them.
"""
from __future__ import annotations

import math

import numpy as np

from ._accel import USE_JIT, njit

__all__ = [
    "ced_labels",
    "label_corner_counts",
    "empty_circle_triangles",
    "weight_field",
    "eps_components",
    "USE_JIT",
]


# --------------------------------------------------------------------------
# Confocal-ellipse distance labeling (ELVD raster)


def ced_labels_np(px, py, f0, f1):
    """Label each query point with the site of minimal confocal-ellipse distance.

    Returns ``(labels, best)``: int64 site index and its distance. Ties go to
    the lowest site index.
    """
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    f0 = np.asarray(f0, dtype=np.float64)
    f1 = np.asarray(f1, dtype=np.float64)
    foc = np.hypot(f1[:, 0] - f0[:, 0], f1[:, 1] - f0[:, 1])
    ax, ay = px[:, None] - f0[None, :, 0], py[:, None] - f0[None, :, 1]
    bx, by = px[:, None] - f1[None, :, 0], py[:, None] - f1[None, :, 1]
    d = np.sqrt(ax * ax + ay * ay) + np.sqrt(bx * bx + by * by) - foc[None, :]
    labels = np.argmin(d, axis=1)
    return labels.astype(np.int64), d[np.arange(len(px)), labels]


@njit
def ced_labels_jit(px, py, f0, f1):
    n = px.shape[0]
    m = f0.shape[0]
    labels = np.empty(n, dtype=np.int64)
    best = np.empty(n, dtype=np.float64)
    foc = np.empty(m, dtype=np.float64)
    for s in range(m):
        foc[s] = math.hypot(f1[s, 0] - f0[s, 0], f1[s, 1] - f0[s, 1])
    for k in range(n):
        x = px[k]
        y = py[k]
        bl = 0
        bd = np.inf
        for s in range(m):
            ax = x - f0[s, 0]
            ay = y - f0[s, 1]
            bx = x - f1[s, 0]
            by = y - f1[s, 1]
            d = math.sqrt(ax * ax + ay * ay) + math.sqrt(bx * bx + by * by) - foc[s]
            if d < bd:
                bd = d
                bl = s
        labels[k] = bl
        best[k] = bd
    return labels, best


# --------------------------------------------------------------------------
# Distinct-label counts over 2x2 raster neighbourhoods


def label_corner_counts_np(labels):
    """Number of distinct labels in each 2x2 block of an integer grid.

    Output shape is ``(rows - 1, cols - 1)``; entry ``[r, c]`` describes the
    grid corner shared by cells ``[r:r+2, c:c+2]``.
    """
    a = labels[:-1, :-1]
    b = labels[:-1, 1:]
    c = labels[1:, :-1]
    d = labels[1:, 1:]
    return (
        1
        + (b != a)
        + ((c != a) & (c != b))
        + ((d != a) & (d != b) & (d != c))
    ).astype(np.int64)


@njit
def label_corner_counts_jit(labels):
    rows, cols = labels.shape
    out = np.empty((rows - 1, cols - 1), dtype=np.int64)
    for r in range(rows - 1):
        for c in range(cols - 1):
            a = labels[r, c]
            b = labels[r, c + 1]
            e = labels[r + 1, c]
            d = labels[r + 1, c + 1]
            k = 1
            if b != a:
                k += 1
            if e != a and e != b:
                k += 1
            if d != a and d != b and d != e:
                k += 1
            out[r, c] = k
    return out


# --------------------------------------------------------------------------
# Delaunay triangles by empty-circumcircle enumeration
#
# O(n^4); intended for the small site sets (tens of points) that a field of
# robots produces. Input must already be in general position (see
# geometry.delaunay_triangulate for the jitter that guarantees it).


def empty_circle_triangles_np(pts, area_eps):
    """All counter-clockwise triples whose circumcircle holds no other point."""
    pts = np.asarray(pts, dtype=np.float64)
    n = len(pts)
    if n < 3:
        return np.empty((0, 3), dtype=np.int64)
    i, j, k = np.array(
        [(a, b, c) for a in range(n) for b in range(a + 1, n) for c in range(b + 1, n)],
        dtype=np.int64,
    ).T
    ax, ay = pts[i, 0], pts[i, 1]
    bx, by = pts[j, 0], pts[j, 1]
    cx, cy = pts[k, 0], pts[k, 1]
    orient = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    keep = np.abs(orient) > area_eps
    i, j, k, orient = i[keep], j[keep], k[keep], orient[keep]
    # make every triple counter-clockwise
    flip = orient < 0
    j2 = np.where(flip, k, j)
    k2 = np.where(flip, j, k)
    j, k = j2, k2
    A = pts[i][:, None, :] - pts[None, :, :]
    B = pts[j][:, None, :] - pts[None, :, :]
    C = pts[k][:, None, :] - pts[None, :, :]
    a2 = (A ** 2).sum(-1)
    b2 = (B ** 2).sum(-1)
    c2 = (C ** 2).sum(-1)
    det = (
        A[..., 0] * (B[..., 1] * c2 - b2 * C[..., 1])
        - A[..., 1] * (B[..., 0] * c2 - b2 * C[..., 0])
        + a2 * (B[..., 0] * C[..., 1] - B[..., 1] * C[..., 0])
    )
    idx = np.arange(n)
    own = (idx[None, :] == i[:, None]) | (idx[None, :] == j[:, None]) | (idx[None, :] == k[:, None])
    det = np.where(own, -1.0, det)
    ok = ~(det > 0.0).any(axis=1)
    return np.stack([i[ok], j[ok], k[ok]], axis=1)


@njit
def empty_circle_triangles_jit(pts, area_eps):
    n = pts.shape[0]
    cap = 2 * n + 8
    out = np.empty((cap, 3), dtype=np.int64)
    count = 0
    for i in range(n):
        ax = pts[i, 0]
        ay = pts[i, 1]
        for j in range(i + 1, n):
            bx = pts[j, 0]
            by = pts[j, 1]
            for k in range(j + 1, n):
                cx = pts[k, 0]
                cy = pts[k, 1]
                orient = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
                if abs(orient) <= area_eps:
                    continue
                jj = j
                kk = k
                if orient < 0:
                    jj = k
                    kk = j
                p1x = pts[jj, 0]
                p1y = pts[jj, 1]
                p2x = pts[kk, 0]
                p2y = pts[kk, 1]
                empty = True
                for m in range(n):
                    if m == i or m == j or m == k:
                        continue
                    dx = pts[m, 0]
                    dy = pts[m, 1]
                    a0 = ax - dx
                    a1 = ay - dy
                    b0 = p1x - dx
                    b1 = p1y - dy
                    c0 = p2x - dx
                    c1 = p2y - dy
                    a2 = a0 * a0 + a1 * a1
                    b2 = b0 * b0 + b1 * b1
                    c2 = c0 * c0 + c1 * c1
                    det = (
                        a0 * (b1 * c2 - b2 * c1)
                        - a1 * (b0 * c2 - b2 * c0)
                        + a2 * (b0 * c1 - b1 * c0)
                    )
                    if det > 0.0:
                        empty = False
                        break
                if empty:
                    if count == cap:
                        grown = np.empty((cap * 2, 3), dtype=np.int64)
                        grown[:cap] = out
                        out = grown
                        cap *= 2
                    out[count, 0] = i
                    out[count, 1] = jj
                    out[count, 2] = kk
                    count += 1
    return out[:count].copy()


# --------------------------------------------------------------------------
# Asymmetric-obstacle weight field


def weight_field_np(px, py, centroids, axes, alpha):
    """Sum over obstacles of ``(1 + cos theta) * exp(-alpha * distance)``.

    ``theta`` is the angle between the obstacle axis and the vector from the
    obstacle to the query point; at zero distance ``cos theta`` is taken as 1.
    """
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64).reshape(-1, 2)
    axes = np.asarray(axes, dtype=np.float64).reshape(-1, 2)
    if len(centroids) == 0:
        return np.zeros_like(px)
    dx = px[:, None] - centroids[None, :, 0]
    dy = py[:, None] - centroids[None, :, 1]
    dist = np.hypot(dx, dy)
    an = np.hypot(axes[:, 0], axes[:, 1])
    an = np.where(an > 0.0, an, 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = (dx * axes[None, :, 0] + dy * axes[None, :, 1]) / (dist * an[None, :])
    cos = np.where(dist > 0.0, np.clip(cos, -1.0, 1.0), 1.0)
    return ((1.0 + cos) * np.exp(-alpha * dist)).sum(axis=1)


@njit
def weight_field_jit(px, py, centroids, axes, alpha):
    n = px.shape[0]
    m = centroids.shape[0]
    out = np.zeros(n, dtype=np.float64)
    for k in range(n):
        acc = 0.0
        for o in range(m):
            dx = px[k] - centroids[o, 0]
            dy = py[k] - centroids[o, 1]
            dist = math.hypot(dx, dy)
            an = math.hypot(axes[o, 0], axes[o, 1])
            if an <= 0.0:
                an = 1.0
            if dist > 0.0:
                c = (dx * axes[o, 0] + dy * axes[o, 1]) / (dist * an)
                if c > 1.0:
                    c = 1.0
                elif c < -1.0:
                    c = -1.0
            else:
                c = 1.0
            acc += (1.0 + c) * math.exp(-alpha * dist)
        out[k] = acc
    return out


# --------------------------------------------------------------------------
# Connected components of the eps-neighbourhood graph


def eps_components_np(xy, eps):
    """Component label of each point: the smallest index in its eps-connected set."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    d2 = ((xy[:, None, :] - xy[None, :, :]) ** 2).sum(-1)
    adj = d2 <= eps * eps
    label = np.arange(len(xy))
    big = len(xy)
    while True:
        new = np.where(adj, label[None, :], big).min(axis=1)
        if np.array_equal(new, label):
            return label.astype(np.int64)
        label = new


@njit
def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


@njit
def eps_components_jit(xy, eps):
    n = xy.shape[0]
    parent = np.arange(n)
    e2 = eps * eps
    for i in range(n):
        for j in range(i + 1, n):
            dx = xy[i, 0] - xy[j, 0]
            dy = xy[i, 1] - xy[j, 1]
            if dx * dx + dy * dy <= e2:
                a = _find(parent, i)
                b = _find(parent, j)
                if a < b:
                    parent[b] = a
                elif b < a:
                    parent[a] = b
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = _find(parent, i)
    return out


def _bind(np_impl, jit_impl, prepare=None):
    impl = jit_impl if USE_JIT else np_impl

    def kernel(*args):
        if prepare is not None:
            args = prepare(*args)
        return impl(*args)

    kernel.__name__ = np_impl.__name__[:-3]
    kernel.__doc__ = np_impl.__doc__
    return kernel


def _f64(*arrays):
    return tuple(
        np.ascontiguousarray(a, dtype=np.float64) if not isinstance(a, float) else a
        for a in arrays
    )


ced_labels = _bind(ced_labels_np, ced_labels_jit, _f64)
label_corner_counts = _bind(
    label_corner_counts_np,
    label_corner_counts_jit,
    lambda lab: (np.ascontiguousarray(lab, dtype=np.int64),),
)
empty_circle_triangles = _bind(
    empty_circle_triangles_np,
    empty_circle_triangles_jit,
    lambda pts, eps: (np.ascontiguousarray(pts, dtype=np.float64), float(eps)),
)
weight_field = _bind(
    weight_field_np,
    weight_field_jit,
    lambda px, py, c, a, alpha: (
        np.ascontiguousarray(px, dtype=np.float64),
        np.ascontiguousarray(py, dtype=np.float64),
        np.ascontiguousarray(np.asarray(c, dtype=np.float64).reshape(-1, 2)),
        np.ascontiguousarray(np.asarray(a, dtype=np.float64).reshape(-1, 2)),
        float(alpha),
    ),
)
eps_components = _bind(
    eps_components_np,
    eps_components_jit,
    lambda xy, eps: (np.ascontiguousarray(np.asarray(xy, dtype=np.float64).reshape(-1, 2)), float(eps)),
)
