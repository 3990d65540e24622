"""Voronoi machinery for point sites and confocal-ellipse (ELVD) sites.

Two backends produce a :class:`VoronoiDiagram`:

* ``exact-point``: Delaunay triangulation, dualised into Voronoi edges and
  nodes, with per-site convex region polygons clipped to the field.
* ``rasterized-elvd``: every cell of a regular grid is labeled with the site
  of least confocal-ellipse distance; edges and nodes are read off label
  transitions.

Point sites inside an ELVD are treated as focal pairs of zero length, so one
metric governs the whole diagram.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Hashable, Iterable, NamedTuple, Sequence, Union

import numpy as np

from . import kernels
from .errors import ConfigurationError, ContractError, DegenerateInputError

MERGE_EPS = 1e-6
JITTER = 1e-9
NODE_MERGE_RADIUS = 0.05
MIN_RESOLUTION = 10.0
DEFAULT_RESOLUTION = 20.0

EXACT_POINT = "exact-point"
RASTER_ELVD = "rasterized-elvd"


class Point2(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class BoundingBox:
    min: Point2
    max: Point2

    def __post_init__(self):
        if not (self.min.x < self.max.x and self.min.y < self.max.y):
            raise ConfigurationError(f"empty bounding box {self.min} .. {self.max}")

    @classmethod
    def from_extent(cls, xmin: float, ymin: float, xmax: float, ymax: float) -> "BoundingBox":
        return cls(Point2(float(xmin), float(ymin)), Point2(float(xmax), float(ymax)))

    @property
    def width(self) -> float:
        return self.max.x - self.min.x

    @property
    def height(self) -> float:
        return self.max.y - self.min.y

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def contains(self, p, tol: float = 0.0) -> bool:
        return (
            self.min.x - tol <= p[0] <= self.max.x + tol
            and self.min.y - tol <= p[1] <= self.max.y + tol
        )

    def on_border(self, p, tol: float = 1e-9) -> bool:
        if not self.contains(p, tol):
            return False
        return (
            abs(p[0] - self.min.x) <= tol
            or abs(p[0] - self.max.x) <= tol
            or abs(p[1] - self.min.y) <= tol
            or abs(p[1] - self.max.y) <= tol
        )

    def polygon(self) -> np.ndarray:
        """Corners in counter-clockwise order."""
        return np.array(
            [
                [self.min.x, self.min.y],
                [self.max.x, self.min.y],
                [self.max.x, self.max.y],
                [self.min.x, self.max.y],
            ]
        )

    def clip_segment(self, p, q):
        """Liang-Barsky clip of segment ``p -> q``.

        Returns ``(a, b, clipped_a, clipped_b)`` or ``None`` when the segment
        misses the box; ``clipped_*`` tell whether that end was cut.
        """
        x0, y0 = float(p[0]), float(p[1])
        dx, dy = float(q[0]) - x0, float(q[1]) - y0
        t0, t1 = 0.0, 1.0
        for pk, qk in (
            (-dx, x0 - self.min.x),
            (dx, self.max.x - x0),
            (-dy, y0 - self.min.y),
            (dy, self.max.y - y0),
        ):
            if pk == 0.0:
                if qk < 0.0:
                    return None
                continue
            r = qk / pk
            if pk < 0.0:
                if r > t1:
                    return None
                t0 = max(t0, r)
            else:
                if r < t0:
                    return None
                t1 = min(t1, r)
        if t1 - t0 <= 0.0 and not (dx == 0.0 and dy == 0.0):
            return None
        a = Point2(x0 + t0 * dx, y0 + t0 * dy)
        b = Point2(x0 + t1 * dx, y0 + t1 * dy)
        return a, b, t0 > 0.0, t1 < 1.0


class PointSite(NamedTuple):
    position: Point2
    site_id: Hashable


class EllipticalSite(NamedTuple):
    """Focal pair of an asymmetric obstacle.

    ``f0`` sits on the obstacle, ``f1`` is displaced along the area-of-interest
    direction by the area length, so the half focal distance is half of it.
    """

    f0: Point2
    f1: Point2
    obstacle_id: Hashable

    @property
    def half_focal(self) -> float:
        return 0.5 * math.hypot(self.f1.x - self.f0.x, self.f1.y - self.f0.y)

    @classmethod
    def from_point(cls, p, obstacle_id: Hashable) -> "EllipticalSite":
        p = Point2(float(p[0]), float(p[1]))
        return cls(p, p, obstacle_id)

    @classmethod
    def from_obstacle(cls, centroid, axis_direction, interest_length: float, obstacle_id: Hashable):
        c = Point2(float(centroid[0]), float(centroid[1]))
        ax, ay = float(axis_direction[0]), float(axis_direction[1])
        n = math.hypot(ax, ay)
        if n == 0.0 or interest_length <= 0.0:
            return cls(c, c, obstacle_id)
        L = float(interest_length)
        return cls(c, Point2(c.x + L * ax / n, c.y + L * ay / n), obstacle_id)


Site = Union[PointSite, EllipticalSite]


@dataclass(frozen=True)
class VoronoiNode:
    position: Point2
    incident_sites: frozenset
    on_border: bool = False


class VoronoiEdge(NamedTuple):
    site_i: Hashable
    site_j: Hashable
    polyline: np.ndarray


class Region(NamedTuple):
    site_index: int
    polygon: np.ndarray | None
    area: float


class Triangulation(NamedTuple):
    points: np.ndarray  # (n, 2) after merging near-duplicates
    triangles: np.ndarray  # (T, 3) indices into ``points``, counter-clockwise
    source_index: np.ndarray  # (n,) index of each kept point in the input

    def edges(self) -> np.ndarray:
        t = self.triangles
        if len(t) == 0:
            return np.empty((0, 2), dtype=np.int64)
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)


@dataclass(frozen=True, eq=False)
class RasterGrid:
    resolution: float
    labels: np.ndarray  # (rows, cols), rows along y
    bounds: BoundingBox

    @property
    def shape(self):
        return self.labels.shape

    @property
    def cell_size(self) -> tuple[float, float]:
        rows, cols = self.labels.shape
        return self.bounds.width / cols, self.bounds.height / rows

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        rows, cols = self.labels.shape
        dx, dy = self.cell_size
        xs = self.bounds.min.x + (np.arange(cols) + 0.5) * dx
        ys = self.bounds.min.y + (np.arange(rows) + 0.5) * dy
        return xs, ys

    def label_at(self, xy) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
        rows, cols = self.labels.shape
        dx, dy = self.cell_size
        c = np.clip(((xy[:, 0] - self.bounds.min.x) / dx).astype(np.int64), 0, cols - 1)
        r = np.clip(((xy[:, 1] - self.bounds.min.y) / dy).astype(np.int64), 0, rows - 1)
        return self.labels[r, c]


class VoronoiDiagram:
    """Result of :func:`point_voronoi` or :func:`elvd`."""

    def __init__(self, sites, regions, nodes, backend, bounds, *, edges=None,
                 edge_builder=None, triangulation=None, grid=None):
        self.sites = tuple(sites)
        self.regions = tuple(regions)
        self.nodes = tuple(nodes)
        self.backend = backend
        self.bounds = bounds
        self.triangulation = triangulation
        self.grid = grid
        self._edges = None if edges is None else tuple(edges)
        self._edge_builder = edge_builder

    @property
    def edges(self) -> tuple:
        if self._edges is None:
            self._edges = tuple(self._edge_builder()) if self._edge_builder else ()
        return self._edges

    @property
    def site_ids(self) -> list:
        return [_site_id(s) for s in self.sites]

    @cached_property
    def node_positions(self) -> np.ndarray:
        if not self.nodes:
            return np.empty((0, 2))
        return np.array([n.position for n in self.nodes], dtype=np.float64)

    def interior_nodes(self) -> list[VoronoiNode]:
        return [n for n in self.nodes if not n.on_border]

    def label_points(self, xy) -> np.ndarray:
        """Site index of the region containing each point (-1 outside)."""
        xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
        if self.grid is not None:
            inside = (
                (xy[:, 0] >= self.bounds.min.x) & (xy[:, 0] <= self.bounds.max.x)
                & (xy[:, 1] >= self.bounds.min.y) & (xy[:, 1] <= self.bounds.max.y)
            )
            return np.where(inside, self.grid.label_at(xy), -1)
        out = np.full(len(xy), -1, dtype=np.int64)
        for reg in self.regions:
            if reg.polygon is None or len(reg.polygon) < 3:
                continue
            free = out < 0
            if not free.any():
                break
            hit = _in_convex(reg.polygon, xy[free])
            idx = np.flatnonzero(free)[hit]
            out[idx] = reg.site_index
        return out


def _site_id(s):
    if isinstance(s, EllipticalSite):
        return s.obstacle_id
    return s.site_id


def _in_convex(poly: np.ndarray, xy: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    a = poly
    b = np.roll(poly, -1, axis=0)
    ex = (b[:, 0] - a[:, 0])[None, :]
    ey = (b[:, 1] - a[:, 1])[None, :]
    cross = ex * (xy[:, 1:2] - a[None, :, 1]) - ey * (xy[:, 0:1] - a[None, :, 0])
    return (cross >= -tol).all(axis=1)


def _clip_halfplane(poly, n, c: float):
    """Keep the part of convex ``poly`` where ``n . p <= c``.

    Works on a list of ``(x, y)`` tuples (returns one) or on an ``(k, 2)``
    array (returns an array).
    """
    as_array = isinstance(poly, np.ndarray)
    pts = [(float(x), float(y)) for x, y in poly] if as_array else poly
    if not pts:
        return np.empty((0, 2)) if as_array else []
    nx, ny = float(n[0]), float(n[1])
    s = [x * nx + y * ny - c for x, y in pts]
    out = []
    k = len(pts)
    for i in range(k):
        j = (i + 1) % k
        si, sj = s[i], s[j]
        if si <= 0.0:
            out.append(pts[i])
        if (si < 0.0 < sj) or (sj < 0.0 < si):
            t = si / (si - sj)
            (xi, yi), (xj, yj) = pts[i], pts[j]
            out.append((xi + t * (xj - xi), yi + t * (yj - yi)))
    if as_array:
        return np.array(out) if out else np.empty((0, 2))
    return out


def _as_points(points) -> np.ndarray:
    pts = np.asarray([(float(p[0]), float(p[1])) for p in points], dtype=np.float64)
    if pts.size and not np.isfinite(pts).all():
        raise DegenerateInputError("non-finite coordinates")
    return pts.reshape(-1, 2)


def _dedupe(pts: np.ndarray, eps: float = MERGE_EPS) -> np.ndarray:
    """Indices of points kept after dropping later near-duplicates."""
    keep: list[int] = []
    for i, p in enumerate(pts):
        if all(math.hypot(p[0] - pts[k, 0], p[1] - pts[k, 1]) >= eps for k in keep):
            keep.append(i)
    return np.array(keep, dtype=np.int64)


def _is_collinear(pts: np.ndarray) -> bool:
    c = pts - pts.mean(axis=0)
    s = np.linalg.svd(c, compute_uv=False)
    return s[0] == 0.0 or s[-1] <= 1e-9 * s[0]


def _jitter(n: int, scale: float = JITTER) -> np.ndarray:
    # deterministic, index-keyed, golden-angle spread
    k = np.arange(n, dtype=np.float64)
    ang = k * 2.399963229728653
    mag = scale * (1.0 + (k % 7) / 7.0)
    return np.stack([mag * np.cos(ang), mag * np.sin(ang)], axis=1)


def delaunay_triangulate(points: Sequence) -> Triangulation:
    """Delaunay triangulation of a small planar point set.

    Near-duplicates (closer than 1e-6 m) are merged, and an index-keyed jitter
    of 1e-9 m breaks co-circular ties before enumeration.
    """
    pts = _as_points(points)
    keep = _dedupe(pts)
    if len(keep) < 3:
        raise DegenerateInputError(f"need >= 3 distinct points, got {len(keep)}")
    kept = pts[keep]
    if _is_collinear(kept):
        raise DegenerateInputError("all points are collinear")
    scale = max(1.0, float(np.abs(kept).max()))
    work = kept + _jitter(len(kept), JITTER * scale)
    tri = kernels.empty_circle_triangles(work, 1e-12 * scale * scale)
    return Triangulation(kept, np.asarray(tri, dtype=np.int64), keep)


def circumcenter(a, b, c) -> Point2:
    ax, ay = a
    bx, by = b
    cx, cy = c
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    a2, b2, c2 = ax * ax + ay * ay, bx * bx + by * by, cx * cx + cy * cy
    ux = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d
    uy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d
    return Point2(ux, uy)


def _normalize_point_sites(sites) -> list[PointSite]:
    out = []
    for i, s in enumerate(sites):
        if isinstance(s, PointSite):
            out.append(PointSite(Point2(float(s.position[0]), float(s.position[1])), s.site_id))
        elif isinstance(s, EllipticalSite):
            raise ContractError("point_voronoi takes point sites; use elvd for focal pairs")
        else:
            out.append(PointSite(Point2(float(s[0]), float(s[1])), i))
    return out


def point_voronoi(sites: Sequence, bounds: BoundingBox,
                  merge_radius: float = NODE_MERGE_RADIUS) -> VoronoiDiagram:
    """Exact Euclidean Voronoi diagram clipped to ``bounds``.

    ``sites`` may be :class:`PointSite` values or bare coordinate pairs (their
    list index becomes the site id).
    """
    psites = _normalize_point_sites(sites)
    if len(psites) < 2:
        raise DegenerateInputError(f"need >= 2 sites, got {len(psites)}")
    pts = np.array([s.position for s in psites], dtype=np.float64)
    for p in pts:
        if not bounds.contains(p, 1e-9):
            raise ContractError(f"site {tuple(p)} outside bounds")
    keep = _dedupe(pts)
    if len(keep) < 2:
        raise DegenerateInputError("sites coincide")

    tri = None
    neighbors: dict[int, set[int]] = {int(i): set() for i in keep}
    raw_edges: list[tuple[int, int, Point2, Point2]] = []
    candidates: list[tuple[Point2, frozenset, bool]] = []
    far = 4.0 * bounds.diagonal + float(np.abs(pts).max())

    if len(keep) >= 3 and not _is_collinear(pts[keep]):
        tri = delaunay_triangulate(pts[keep])
        src = keep[tri.source_index]
        centers = [circumcenter(*tri.points[t]) for t in tri.triangles]
        edge_tris: dict[tuple[int, int], list[int]] = {}
        for ti, t in enumerate(tri.triangles):
            for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
                key = (min(a, b), max(a, b))
                edge_tris.setdefault(key, []).append(ti)
            ids = frozenset(psites[int(src[v])].site_id for v in t)
            c = centers[ti]
            if bounds.contains(c):
                candidates.append((c, ids, False))
        for (a, b), tris in edge_tris.items():
            ia, ib = int(src[a]), int(src[b])
            neighbors[ia].add(ib)
            neighbors[ib].add(ia)
            if len(tris) == 2:
                p, q = centers[tris[0]], centers[tris[1]]
                raw_edges.append((ia, ib, p, q))
            else:
                t = tri.triangles[tris[0]]
                third = [v for v in t if v != a and v != b][0]
                pa, pb, pc = tri.points[a], tri.points[b], tri.points[third]
                ex, ey = pb - pa
                nx, ny = ey, -ex
                if nx * (pc[0] - pa[0]) + ny * (pc[1] - pa[1]) > 0:
                    nx, ny = -nx, -ny
                nrm = math.hypot(nx, ny)
                c = centers[tris[0]]
                q = Point2(c.x + far * nx / nrm, c.y + far * ny / nrm)
                raw_edges.append((ia, ib, c, q))
    else:
        # two sites, or all collinear: parallel bisectors between consecutive sites
        kp = pts[keep]
        d = kp[-1] - kp[0] if len(kp) > 2 else kp[1] - kp[0]
        if len(kp) > 2:
            c = kp - kp.mean(axis=0)
            d = np.linalg.svd(c)[2][0]
        order = np.argsort(kp @ d, kind="stable")
        for u, v in zip(order[:-1], order[1:]):
            ia, ib = int(keep[u]), int(keep[v])
            neighbors[ia].add(ib)
            neighbors[ib].add(ia)
            m = 0.5 * (pts[ia] + pts[ib])
            e = pts[ib] - pts[ia]
            perp = np.array([-e[1], e[0]]) / math.hypot(*e)
            raw_edges.append((ia, ib, Point2(*(m - far * perp)), Point2(*(m + far * perp))))

    regions = []
    pl = [(float(x), float(y)) for x, y in pts]
    for i, s in enumerate(psites):
        if i not in neighbors:
            regions.append(Region(i, None, 0.0))
            continue
        poly = [(float(x), float(y)) for x, y in bounds.polygon()]
        xi, yi = pl[i]
        for j in sorted(neighbors[i]):
            xj, yj = pl[j]
            n = (xj - xi, yj - yi)
            c = n[0] * 0.5 * (xi + xj) + n[1] * 0.5 * (yi + yj)
            poly = _clip_halfplane(poly, n, c)
        if len(poly) >= 3:
            area = 0.5 * sum(poly[k][0] * poly[k - len(poly) + 1][1] - poly[k - len(poly) + 1][0] * poly[k][1]
                             for k in range(len(poly)))
            regions.append(Region(i, np.array(poly), area))
        else:
            regions.append(Region(i, None, 0.0))

    edges = []
    for ia, ib, p, q in raw_edges:
        clipped = bounds.clip_segment(p, q)
        if clipped is None:
            continue
        a, b, cut_a, cut_b = clipped
        if math.hypot(b.x - a.x, b.y - a.y) <= 1e-12:
            continue
        ids = frozenset((psites[ia].site_id, psites[ib].site_id))
        edges.append(VoronoiEdge(psites[ia].site_id, psites[ib].site_id, np.array([a, b])))
        for end, cut in ((a, cut_a), (b, cut_b)):
            if cut:
                candidates.append((end, ids, True))

    nodes = merge_nodes(candidates, merge_radius)
    return VoronoiDiagram(psites, regions, nodes, EXACT_POINT, bounds, edges=edges, triangulation=tri)


def _polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def merge_nodes(candidates: Iterable[tuple], radius: float) -> list[VoronoiNode]:
    """Single-link merge of node candidates; each cluster keeps its centroid.

    Candidates are ``(position, incident_ids, on_border)``; incident sets are
    united, and a cluster is a border node only if all its members are.
    Output is sorted by position for determinism.
    """
    cand = list(candidates)
    if not cand:
        return []
    xy = [(float(c[0][0]), float(c[0][1])) for c in cand]
    n = len(cand)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    r2 = (radius + 1e-12) ** 2
    for i in range(n):
        xi, yi = xy[i]
        for j in range(i + 1, n):
            dx, dy = xi - xy[j][0], yi - xy[j][1]
            if dx * dx + dy * dy <= r2:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    nodes = []
    for members in groups.values():
        border = all(cand[m][2] for m in members)
        # interior members dominate the position of a mixed cluster
        pos_members = [m for m in members if not cand[m][2]] or members
        cx = sum(xy[m][0] for m in pos_members) / len(pos_members)
        cy = sum(xy[m][1] for m in pos_members) / len(pos_members)
        ids = frozenset().union(*(cand[m][1] for m in members))
        nodes.append(VoronoiNode(Point2(cx, cy), ids, border))
    nodes.sort(key=lambda v: (v.position.x, v.position.y))
    return nodes


def voronoi_nodes(diagram: VoronoiDiagram) -> list[VoronoiNode]:
    """Interior and border nodes of a diagram, already merged."""
    return list(diagram.nodes)


# --------------------------------------------------------------------------
# Confocal-ellipse distance and ELVD


def ced_distance(p, site: EllipticalSite) -> float:
    """Confocal-ellipse distance: ``|p f0| + |p f1| - |f0 f1|``."""
    f0, f1 = site.f0, site.f1
    return (
        math.hypot(p[0] - f0[0], p[1] - f0[1])
        + math.hypot(p[0] - f1[0], p[1] - f1[1])
        - math.hypot(f1[0] - f0[0], f1[1] - f0[1])
    )


def _normalize_elliptical_sites(sites) -> list[EllipticalSite]:
    out = []
    for i, s in enumerate(sites):
        if isinstance(s, EllipticalSite):
            out.append(EllipticalSite(Point2(*map(float, s.f0)), Point2(*map(float, s.f1)), s.obstacle_id))
        elif isinstance(s, PointSite):
            out.append(EllipticalSite.from_point(s.position, s.site_id))
        else:
            out.append(EllipticalSite.from_point(s, i))
    return out


def elvd(sites: Sequence, bounds: BoundingBox, resolution: float = DEFAULT_RESOLUTION,
         merge_radius: float = NODE_MERGE_RADIUS, refine: bool = True) -> VoronoiDiagram:
    """Rasterized elliptical line Voronoi diagram.

    Merge radius is widened to one cell diagonal when cells are coarser than
    it, so a single junction never yields two nodes.
    """
    esites = _normalize_elliptical_sites(sites)
    if len(esites) < 2:
        raise DegenerateInputError(f"need >= 2 sites, got {len(esites)}")
    if not resolution >= MIN_RESOLUTION:
        raise ConfigurationError(f"resolution {resolution} < {MIN_RESOLUTION} cells/m")
    cols = max(1, int(math.ceil(bounds.width * resolution - 1e-9)))
    rows = max(1, int(math.ceil(bounds.height * resolution - 1e-9)))
    dx, dy = bounds.width / cols, bounds.height / rows
    xs = bounds.min.x + (np.arange(cols) + 0.5) * dx
    ys = bounds.min.y + (np.arange(rows) + 0.5) * dy
    gx = np.tile(xs, rows)
    gy = np.repeat(ys, cols)
    f0 = np.array([s.f0 for s in esites], dtype=np.float64)
    f1 = np.array([s.f1 for s in esites], dtype=np.float64)
    labels, _ = kernels.ced_labels(gx, gy, f0, f1)
    labels = labels.reshape(rows, cols)
    grid = RasterGrid(float(resolution), labels, bounds)

    counts = np.bincount(labels.ravel(), minlength=len(esites))
    regions = [Region(i, None, float(counts[i]) * dx * dy) for i in range(len(esites))]

    ids = [s.obstacle_id for s in esites]
    candidates = []
    if rows > 1 and cols > 1:
        k = kernels.label_corner_counts(labels)
        for r, c in np.argwhere(k >= 3):
            block = {int(v) for v in labels[r:r + 2, c:c + 2].ravel()}
            pos = Point2(bounds.min.x + (c + 1) * dx, bounds.min.y + (r + 1) * dy)
            if refine:
                pos = _refine_junction(pos, block, f0, f1, bounds, 2.0 * math.hypot(dx, dy))
            candidates.append((pos, frozenset(ids[v] for v in block), False))
    for border, fixed in (
        (labels[0, :], bounds.min.y),
        (labels[-1, :], bounds.max.y),
    ):
        for c in np.flatnonzero(border[1:] != border[:-1]):
            pos = Point2(bounds.min.x + (c + 1) * dx, fixed)
            candidates.append((pos, frozenset((ids[border[c]], ids[border[c + 1]])), True))
    for border, fixed in (
        (labels[:, 0], bounds.min.x),
        (labels[:, -1], bounds.max.x),
    ):
        for r in np.flatnonzero(border[1:] != border[:-1]):
            pos = Point2(fixed, bounds.min.y + (r + 1) * dy)
            candidates.append((pos, frozenset((ids[border[r]], ids[border[r + 1]])), True))
    nodes = merge_nodes(candidates, max(merge_radius, math.hypot(dx, dy)))

    def build_edges():
        return _raster_edges(labels, ids, bounds, dx, dy)

    return VoronoiDiagram(esites, regions, nodes, RASTER_ELVD, bounds, edge_builder=build_edges, grid=grid)


def _ced_all(p, f0, f1):
    return (
        np.hypot(p[0] - f0[:, 0], p[1] - f0[:, 1])
        + np.hypot(p[0] - f1[:, 0], p[1] - f1[:, 1])
        - np.hypot(f1[:, 0] - f0[:, 0], f1[:, 1] - f0[:, 1])
    )


def _refine_junction(pos: Point2, block: set, f0, f1, bounds, max_shift: float) -> Point2:
    """Newton solve for the point where three sites are CED-equidistant.

    Falls back to the raster corner if the iteration does not settle near it
    or the three sites stop being the nearest ones.
    """
    d = _ced_all(pos, f0, f1)
    trio = sorted(block, key=lambda s: (d[s], s))[:3]
    if len(trio) < 3:
        return pos
    F = [(float(f0[s, 0]), float(f0[s, 1]), float(f1[s, 0]), float(f1[s, 1])) for s in trio]
    foc = [math.hypot(c - a, e - b) for a, b, c, e in F]
    x, y = float(pos[0]), float(pos[1])
    for _ in range(12):
        vals, gx, gy = [], [], []
        for (ax, ay, bx, by), fc in zip(F, foc):
            n0 = math.hypot(x - ax, y - ay)
            n1 = math.hypot(x - bx, y - by)
            if n0 < 1e-12 or n1 < 1e-12:
                return pos
            vals.append(n0 + n1 - fc)
            gx.append((x - ax) / n0 + (x - bx) / n1)
            gy.append((y - ay) / n0 + (y - by) / n1)
        g0, g1 = vals[0] - vals[1], vals[0] - vals[2]
        j00, j01 = gx[0] - gx[1], gy[0] - gy[1]
        j10, j11 = gx[0] - gx[2], gy[0] - gy[2]
        det = j00 * j11 - j01 * j10
        if abs(det) < 1e-12:
            return pos
        x -= (j11 * g0 - j01 * g1) / det
        y -= (-j10 * g0 + j00 * g1) / det
        if max(abs(g0), abs(g1)) < 1e-12:
            break
    p = Point2(x, y)
    if math.hypot(x - pos[0], y - pos[1]) > max_shift or not bounds.contains(p):
        return pos
    d = _ced_all(p, f0, f1)
    if d[trio].max() - d.min() > 1e-9 or np.ptp(d[trio]) > 1e-9:
        return pos
    return p


def _raster_edges(labels, ids, bounds, dx, dy) -> list[VoronoiEdge]:
    rows, cols = labels.shape
    pts: dict[tuple[int, int], list] = {}
    r, c = np.nonzero(labels[:, 1:] != labels[:, :-1])
    for rr, cc in zip(r, c):
        a, b = int(labels[rr, cc]), int(labels[rr, cc + 1])
        pts.setdefault((min(a, b), max(a, b)), []).append(
            (bounds.min.x + (cc + 1) * dx, bounds.min.y + (rr + 0.5) * dy)
        )
    r, c = np.nonzero(labels[1:, :] != labels[:-1, :])
    for rr, cc in zip(r, c):
        a, b = int(labels[rr, cc]), int(labels[rr + 1, cc])
        pts.setdefault((min(a, b), max(a, b)), []).append(
            (bounds.min.x + (cc + 0.5) * dx, bounds.min.y + (rr + 1) * dy)
        )
    edges = []
    for (a, b) in sorted(pts):
        edges.append(VoronoiEdge(ids[a], ids[b], _chain(np.array(pts[(a, b)]))))
    return edges


def _chain(p: np.ndarray) -> np.ndarray:
    """Order scattered boundary samples into a polyline by nearest-neighbour walk."""
    if len(p) <= 2:
        return p
    start = int(np.argmax(((p - p.mean(axis=0)) ** 2).sum(1)))
    used = np.zeros(len(p), dtype=bool)
    order = [start]
    used[start] = True
    cur = start
    for _ in range(len(p) - 1):
        d = ((p - p[cur]) ** 2).sum(1)
        d[used] = np.inf
        cur = int(np.argmin(d))
        used[cur] = True
        order.append(cur)
    return p[order]


# --------------------------------------------------------------------------
# Asymmetric-obstacle weight correction


def weight_correction(v, obstacles: Sequence, alpha: float) -> float:
    """Directional proximity weight of point ``v`` w.r.t. a set of obstacles.

    Each obstacle needs ``centroid`` and ``axis_direction``; the term is
    largest in front of the obstacle along its axis and vanishes behind it.
    """
    if not alpha > 0.0:
        raise ConfigurationError(f"alpha must be > 0, got {alpha}")
    if not obstacles:
        return 0.0
    c = np.array([o.centroid for o in obstacles], dtype=np.float64)
    a = np.array([o.axis_direction for o in obstacles], dtype=np.float64)
    return float(kernels.weight_field(np.array([float(v[0])]), np.array([float(v[1])]), c, a, alpha)[0])


# --------------------------------------------------------------------------
# Debug dump


def diagram_to_dict(diagram: VoronoiDiagram) -> dict:
    sites = []
    for s in diagram.sites:
        if isinstance(s, EllipticalSite):
            sites.append({"id": _jsonable(s.obstacle_id), "f0": list(s.f0), "f1": list(s.f1)})
        else:
            sites.append({"id": _jsonable(s.site_id), "position": list(s.position)})
    out = {
        "backend": diagram.backend,
        "bounds": [diagram.bounds.min.x, diagram.bounds.min.y, diagram.bounds.max.x, diagram.bounds.max.y],
        "sites": sites,
        "nodes": [
            {
                "position": list(n.position),
                "incident": sorted(_jsonable(i) for i in n.incident_sites),
                "border": n.on_border,
            }
            for n in diagram.nodes
        ],
        "edges": [
            {"sites": [_jsonable(e.site_i), _jsonable(e.site_j)], "polyline": e.polyline.tolist()}
            for e in diagram.edges
        ],
    }
    if diagram.triangulation is not None:
        tri = diagram.triangulation
        out["delaunay_edges"] = [
            [tri.points[a].tolist(), tri.points[b].tolist()] for a, b in tri.edges()
        ]
    return out


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (int, float, str)) or x is None:
        return x
    return str(x)


def dump_diagram(diagram: VoronoiDiagram) -> str:
    """Diagram as indented JSON text for plotting scripts."""
    return json.dumps(diagram_to_dict(diagram), indent=1, sort_keys=True)
