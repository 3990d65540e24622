"""Acceptance criteria 1-9.

Each test records a one-line verdict that is printed in the terminal summary.
Criterion 7 runs the 2-minute desk sweep by default; set MRCOORD_FULL_SWEEP=1
to run the 20-minute, 10-seed sweep as well (about half an hour).
"""
import itertools
import math
import os
import time

import numpy as np
import pytest

from conftest import FIELD, nearest_with_margin, random_event, report, roundtrip_errors
from mrcoord.assignment import CoordinationConfig, Task, UtilityMatrix, assign, coordinate
from mrcoord.config import from_dict
from mrcoord.errors import DecodeError
from mrcoord.geometry import BoundingBox, EllipticalSite, Point2, ced_distance, elvd, point_voronoi
from mrcoord.network import PACKET_SIZE, decode_packet, encode_packet
from mrcoord.simulator import ALL_MODES, compare_modes, run_match
from mrcoord.world_model import (
    AgentPose,
    BallEstimate,
    Event,
    EventKind,
    LocalModel,
    ModelSummary,
    ObstacleEstimate,
    TeammateLocalModel,
    apply_events,
    dbscan,
    fuse,
    predict_local,
)

BOX = BoundingBox.from_extent(*FIELD)
ORDER = ("FixedRate", "EventBased", "EventVD", "EventELVD")


def _grid(n):
    xs = np.linspace(BOX.min.x, BOX.max.x, n)
    ys = np.linspace(BOX.min.y, BOX.max.y, n)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


# ------------------------------------------------------------------ 1

def test_criterion_1_point_voronoi_oracle():
    rng = np.random.default_rng(1)
    xy = _grid(200)
    started = time.process_time()
    bad = 0
    for _ in range(100):
        n = int(rng.integers(2, 13))
        sites = np.column_stack([rng.uniform(-4.5, 4.5, n), rng.uniform(-3, 3, n)])
        got = point_voronoi(sites, BOX).label_points(xy)
        best, gap = nearest_with_margin(xy, sites)
        ok = gap > 1e-6
        bad += int((got[ok] != best[ok]).sum())
    elapsed = time.process_time() - started
    passed = report(1, bad == 0 and elapsed < 30, f"{bad} mislabelled samples over 100 diagrams, {elapsed:.1f} s")
    assert passed


# ------------------------------------------------------------------ 2

def _ced_by_ellipse(p, f0, f1):
    """2(a - f) with a solved from the confocal ellipse equation through p."""
    c = (f0 + f1) / 2
    f = np.hypot(*(f1 - f0)) / 2
    u = (f1 - f0) / (2 * f) if f > 0 else np.array([1.0, 0.0])
    d = p - c
    x = d[..., 0] * u[0] + d[..., 1] * u[1]
    y = -d[..., 0] * u[1] + d[..., 1] * u[0]
    s = x * x + y * y + f * f
    a2 = (s + np.sqrt(np.maximum(s * s - 4 * x * x * f * f, 0.0))) / 2
    return 2 * (np.sqrt(a2) - f)


def test_criterion_2_elvd_oracle():
    rng = np.random.default_rng(2)
    mismatched = 0
    degenerate_bad = 0
    for _ in range(50):
        n = int(rng.integers(2, 8))
        c = np.column_stack([rng.uniform(-4, 4, n), rng.uniform(-2.5, 2.5, n)])
        ang = rng.uniform(-math.pi, math.pi, n)
        L = rng.uniform(0.0, 2.0, n)
        sites = [EllipticalSite.from_obstacle(c[k], (math.cos(ang[k]), math.sin(ang[k])), L[k], k) for k in range(n)]
        d = elvd(sites, BOX)
        xs, ys = d.grid.cell_centers()
        gx, gy = np.meshgrid(xs, ys)
        cells = np.column_stack([gx.ravel(), gy.ravel()])
        dist = np.stack([np.hypot(*(cells - s.f0).T) + np.hypot(*(cells - s.f1).T) - 2 * s.half_focal
                         for s in sites], axis=1)
        order = np.sort(dist, axis=1)
        clear = order[:, 1] - order[:, 0] > 1e-9
        mismatched += int((d.grid.labels.ravel()[clear] != dist.argmin(axis=1)[clear]).sum())
        # same sites with collapsed foci against the exact point diagram
        e = elvd([EllipticalSite.from_point(p, k) for k, p in enumerate(c)], BOX)
        v = point_voronoi(c, BOX)
        _, gap = nearest_with_margin(cells, c)
        ok = gap > 1e-6
        degenerate_bad += int((e.grid.labels.ravel()[ok] != v.label_points(cells)[ok]).sum())

    worst = 0.0
    for _ in range(10000):
        f0 = rng.uniform(-5, 5, 2)
        f1 = f0 + rng.uniform(-3, 3, 2)
        p = rng.uniform(-8, 8, 2)
        s = EllipticalSite(Point2(*f0), Point2(*f1), 0)
        worst = max(worst, abs(ced_distance(p, s) - float(_ced_by_ellipse(p, f0, f1))))
    ok = mismatched == 0 and degenerate_bad == 0 and worst <= 1e-9
    passed = report(2, ok, f"{mismatched} CED label mismatches, {degenerate_bad} degenerate mismatches, "
                           f"max |d - 2(a-f)| = {worst:.1e}")
    assert passed


# ------------------------------------------------------------------ 3

def _lexicographic_optimum(values):
    n = values.shape[0]
    return max(itertools.permutations(range(n)),
               key=lambda perm: tuple(x for j, a in enumerate(perm) for x in (values[a, j], -a)))


def test_criterion_3_assignment_oracle():
    rng = np.random.default_rng(3)
    mismatches = scale_failures = 0
    for k in range(1000):
        n = int(rng.integers(2, 6))
        # half integer-valued to force ties
        v = rng.integers(0, 4, (n, n)).astype(float) if k % 2 else rng.uniform(0, 10, (n, n))
        tasks = [Task(j, Point2(0, 0), j) for j in range(n)]
        uem = UtilityMatrix(tuple(range(n)), tuple(range(n)), v)
        got = assign(uem, tasks).as_dict()
        ref = _lexicographic_optimum(v)
        mismatches += any(got[ref[j]] != j for j in range(n))
        c = float(rng.uniform(0.01, 100))
        scale_failures += assign(UtilityMatrix(uem.agents, uem.tasks, v * c), tasks).pairs != assign(uem, tasks).pairs
    passed = report(3, mismatches == 0 and scale_failures == 0,
                    f"{mismatches} oracle mismatches, {scale_failures} scaling failures over 1000 UEMs")
    assert passed


# ------------------------------------------------------------------ 4

def _summary(pose, ball, conf, obstacles):
    obs = tuple(ObstacleEstimate(Point2(*o), axis_direction=(0.0, 1.0), interest_length=1.0, confidence=0.8, id=k)
                for k, o in enumerate(obstacles))
    return ModelSummary(AgentPose(Point2(*pose)), Point2(*ball), (0.4, -0.1), conf, obs)


def test_criterion_4_scripted_consensus():
    tasks = [Task("striker", Point2(0, 0), 0, "striker", (1.0, 1.0)), Task("keeper", Point2(-4, 0), 1, "keeper"),
             Task("wing", Point2(1, 2), 2, "forward")]
    cfg = CoordinationConfig(diagram="elvd", lam=-1.0, anchors=(Point2(0, 0),))
    script = {  # tick -> events delivered to both agents at that tick
        0: [Event(EventKind.PERIODIC_SUMMARY, 0, 0.0, _summary((-1, 0), (0, 0), 0.5, [(2, 1), (1, -1)])),
            Event(EventKind.PERIODIC_SUMMARY, 1, 0.0, _summary((-3, 0), (0, 0), 0.5, [(2.1, 1)]))],
        20: [Event(EventKind.BALL_FOUND, 1, 1.0, _summary((-2.8, 0.1), (1.5, 0.5), 0.9, [(2.2, 1.1), (0, 2)]))],
        45: [Event(EventKind.SELF_STATE_CHANGED, 0, 2.2, _summary((0.2, 0.3), (1.0, 0.4), 0.7, [(1, -1)])),
             Event(EventKind.ROLE_COMMITMENT, 1, 2.25, _summary((-1.0, 0.2), (1.1, 0.4), 0.9, [(2.2, 1.1)]))],
        90: [Event(EventKind.BALL_MOVED, 0, 4.5, _summary((0.8, 0.2), (-1.5, -1.0), 0.95, [(1, -1), (-2, 2)]))],
    }
    dt = 0.05
    empty = LocalModel(AgentPose(Point2(0, 0)), BallEstimate(Point2(0, 0)), (), 0.0)
    views = [[TeammateLocalModel(j, empty) for j in range(2)] for _ in range(2)]
    differing = 0
    for k in range(160):
        now = k * dt
        delivered = script.get(k, [])
        results = []
        for i in range(2):
            views[i] = [apply_events(views[i][j], [e for e in delivered if e.sender == j], now) for j in range(2)]
            mates = [views[i][j] for j in range(2) if j != i]
            dwm = fuse(views[i][i].model, mates, own_id=i)
            results.append((dwm, coordinate(dwm, tasks, cfg)))
        (d0, a0), (d1, a1) = results
        differing += (d0 != d1) or (a0 != a1) or (a0.targets != a1.targets)
    passed = report(4, differing == 0, f"{differing} of 160 ticks with differing DWM or assignment")
    assert passed


# ------------------------------------------------------------------ 5

def test_criterion_5_wire_format():
    rng = np.random.default_rng(5)
    worst = np.zeros(3)
    wrong_size = silent = 0
    for _ in range(10000):
        e = random_event(rng)
        raw = encode_packet(e)
        wrong_size += len(raw) != PACKET_SIZE
        worst = np.maximum(worst, roundtrip_errors(e, decode_packet(raw)))
        bad = bytearray(raw)
        for pos in rng.choice(PACKET_SIZE, int(rng.integers(1, 4)), replace=False):
            bad[pos] ^= int(rng.integers(1, 256))
        try:
            decode_packet(bytes(bad))
            silent += 1
        except DecodeError:
            pass
    ok = (wrong_size == 0 and silent == 0 and worst[0] <= 0.005 + 1e-12 and worst[1] <= 0.0005 + 1e-12
          and worst[2] <= 1 / 255 + 1e-12)
    passed = report(5, ok, f"max errors {worst[0] * 100:.3f} cm / {worst[1] * 1000:.3f} mrad / "
                           f"{worst[2] * 255:.3f} conf steps; {wrong_size} bad sizes; {silent} corrupted accepted")
    assert passed


# ------------------------------------------------------------------ 6, 7

@pytest.fixture(scope="module")
def desk_sweep():
    config = from_dict({}, preset="desk")
    started = time.perf_counter()
    summary = compare_modes(config, list(range(1, 11)))
    return config, summary, time.perf_counter() - started


def test_criterion_6_budget(desk_sweep):
    config, summary, _ = desk_sweep
    worst_desk = max(r.packets_sent for r in summary.records)
    full = from_dict({})
    full_sent = {m.value: run_match(full, m, 1).packets_sent for m in ALL_MODES}
    ok = worst_desk <= config.budget and all(v <= 1200 for v in full_sent.values())
    passed = report(6, ok, f"desk max {worst_desk}/{config.budget} over 40 matches; 20-minute matches "
                           + ", ".join(f"{m} {v}" for m, v in full_sent.items()) + " of 1200")
    assert passed


def _ordering(summary):
    means = [summary.mean(m) for m in ORDER]
    ordered = all(a >= b for a, b in zip(means, means[1:]))
    return means, ordered, summary.striker_reduction


def test_criterion_7_headline(desk_sweep):
    _, desk, elapsed = desk_sweep
    means, ordered, reduction = _ordering(desk)
    detail = ("desk striker s/min " + " >= ".join(f"{m} {v:.2f}" for m, v in zip(ORDER, means))
              + f"; ordering {'holds' if ordered else 'violated'}; ELVD vs EB reduction {100 * reduction:.1f}%"
              + f"; {elapsed:.0f} s")
    ok = ordered and elapsed <= 180
    if os.environ.get("MRCOORD_FULL_SWEEP"):
        started = time.perf_counter()
        full = compare_modes(from_dict({}), list(range(1, 11)))
        f_means, f_ordered, f_red = _ordering(full)
        f_elapsed = time.perf_counter() - started
        detail += ("; full striker s/min " + " >= ".join(f"{v:.2f}" for v in f_means)
                   + f", reduction {100 * f_red:.1f}%, {f_elapsed / 60:.1f} min")
        ok = ok and f_ordered and f_red >= 0.30 and f_elapsed <= 1800
    else:
        ok = ok and reduction >= 0.30
    passed = report(7, ok, detail)
    assert passed


# ------------------------------------------------------------------ 8

def test_criterion_8_world_model_properties():
    rng = np.random.default_rng(8)
    split_err = 0.0
    decay_ok = confine_ok = True
    for _ in range(500):
        v = tuple(rng.uniform(-3, 3, 2))
        ball = BallEstimate(Point2(*rng.uniform(-3, 3, 2)), v, ((0.1, 0), (0, 0.1)), float(rng.uniform(0.1, 1)))
        ax = rng.uniform(-math.pi, math.pi)
        axis = (math.cos(ax), math.sin(ax))
        c0 = Point2(*rng.uniform(-3, 3, 2))
        L = float(rng.uniform(0, 3))
        obs = ObstacleEstimate(c0, tuple(rng.uniform(-2, 2, 2)), axis, L, float(rng.uniform(0.1, 1)), 0.0, 0, c0)
        m0 = LocalModel(AgentPose(Point2(0, 0)), ball, (obs,), 0.0)
        dt1, dt2 = rng.uniform(1e-3, 3, 2)
        a = predict_local(predict_local(m0, dt1), dt2)
        b = predict_local(m0, dt1 + dt2)
        split_err = max(split_err, *(abs(np.subtract(a.ball.position, b.ball.position))),
                        *(abs(np.subtract(a.ball.velocity, b.ball.velocity))))
        m, prev = m0, (ball.confidence, obs.confidence)
        for dt in rng.uniform(0.01, 2, 10):
            m = predict_local(m, dt)
            cur = (m.ball.confidence, m.obstacles[0].confidence)
            decay_ok &= cur[0] < prev[0] and cur[1] < prev[1]
            prev = cur
            c = m.obstacles[0].centroid
            s = (c.x - c0.x) * axis[0] + (c.y - c0.y) * axis[1]
            off = abs(-(c.x - c0.x) * axis[1] + (c.y - c0.y) * axis[0])
            confine_ok &= -1e-9 <= s <= L + 1e-9 and off < 1e-9

    from scipy.sparse.csgraph import connected_components
    from scipy.spatial.distance import cdist

    db_bad = 0
    for _ in range(100):
        xy = rng.uniform(0, 6, (int(rng.integers(1, 80)), 2))
        eps = float(rng.uniform(0.1, 1.5))
        _, lab = connected_components(cdist(xy, xy) <= eps, directed=False)
        ref = sorted(sorted(np.flatnonzero(lab == k).tolist()) for k in set(lab))
        db_bad += sorted(dbscan(xy, eps, 1)) != ref
    ok = split_err <= 1e-9 and decay_ok and confine_ok and db_bad == 0
    passed = report(8, ok, f"split-step error {split_err:.1e}; decay {'monotone' if decay_ok else 'VIOLATED'}; "
                           f"confinement {'holds' if confine_ok else 'VIOLATED'}; {db_bad}/100 DBSCAN mismatches")
    assert passed


# ------------------------------------------------------------------ 9

def test_criterion_9_perfect_information():
    config = from_dict({
        "channel": {"loss": 0.0, "latency_mean": 0.0, "latency_jitter": 0.0},
        "sensing": {"sigma_obs": 0.0, "sigma_pose": 0.0, "sigma_axis_deg": 0.0, "p_fp": 0.0, "p_miss": 0.0},
    }, preset="desk")
    overlap = {m.value: sum(run_match(config, m, 1).overlap_seconds) for m in ALL_MODES}
    passed = report(9, all(v == 0.0 for v in overlap.values()),
                    "overlap seconds " + ", ".join(f"{m} {v:g}" for m, v in overlap.items()))
    assert passed
