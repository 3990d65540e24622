import itertools
import json
import math
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mrcoord.assignment import (
    Assignment,
    Context,
    ContextMode,
    ContextParams,
    CoordinationConfig,
    Task,
    UtilityMatrix,
    assign,
    compute_uem,
    context_select,
    coordinate,
    filter_tasks,
    offset_targets,
    refine_uem,
)
from mrcoord.errors import ContractError
from mrcoord.geometry import BoundingBox, Point2, point_voronoi
from mrcoord.world_model import AgentPose, BallEstimate, DistributedWorldModel, ObstacleEstimate

GOLDEN = Path(__file__).parent / "golden" / "coordinate.json"


def dwm(positions, ball=(0.0, 0.0), conf=0.9, obstacles=()):
    agents = tuple((i, AgentPose(Point2(*p))) for i, p in enumerate(positions))
    return DistributedWorldModel(BallEstimate(Point2(*ball), confidence=conf), tuple(obstacles), agents, 0.0)


def tasks_at(targets, kinds=None):
    kinds = kinds or ["generic"] * len(targets)
    return [Task(f"t{j}", Point2(*t), j, k) for j, (t, k) in enumerate(zip(targets, kinds))]


def oracle(values):
    """Exhaustive search: lexicographically best (utility, -agent) per task in priority order."""
    n = values.shape[0]
    best, best_key = None, None
    for perm in itertools.permutations(range(n)):  # perm[j] = agent for task j
        key = tuple(x for j, a in enumerate(perm) for x in (values[a, j], -a))
        if best_key is None or key > best_key:
            best, best_key = perm, key
    return best


def _uem(values):
    n, m = values.shape
    return UtilityMatrix(tuple(range(n)), tuple(f"t{j}" for j in range(m)), values)


# ---------------------------------------------------------------- context

def test_context_rules():
    assert context_select(dwm([(0, 0)], ball=(-3, 0), conf=0.9)).mode is ContextMode.DEFENSIVE
    assert context_select(dwm([(0, 0)], ball=(3, 0), conf=0.9)).mode is ContextMode.OFFENSIVE
    assert context_select(dwm([(0, 0)], ball=(3, 0), conf=0.1)).mode is ContextMode.CONTESTED
    d = dwm([(1, 1)], ball=(2, 0))
    assert context_select(d) == context_select(d)


# ---------------------------------------------------------------- UEM

PLAIN = Context(ContextMode.CONTESTED, ContextParams(w_b=0.0, w_c=0.0))


def test_agent_on_target_gets_w_d():
    u = compute_uem(dwm([(1, 1)]), tasks_at([(1, 1)]), PLAIN)
    assert u.values[0, 0] == pytest.approx(PLAIN.parameters.w_d)


def test_symmetric_agents_get_equal_utilities():
    u = compute_uem(dwm([(-1, 0.5), (1, 0.5)]), tasks_at([(0, 0.5)]), PLAIN)
    assert u.values[0, 0] == pytest.approx(u.values[1, 0])


def test_uem_is_deterministic_and_non_negative(rng):
    d = dwm(rng.uniform(-3, 3, (5, 2)), ball=tuple(rng.uniform(-3, 3, 2)))
    t = tasks_at(rng.uniform(-3, 3, (7, 2)), ["striker", "supporter", "defender", "keeper", "forward", "generic", "x"])
    ctx = context_select(d)
    a, b = compute_uem(d, t, ctx), compute_uem(d, t, ctx)
    assert a == b
    assert (a.values >= 0).all()


def test_striker_column_favours_ball_holder():
    ctx = Context(ContextMode.CONTESTED, ContextParams())
    u = compute_uem(dwm([(2, 0), (-2, 0)], ball=(2.2, 0)), tasks_at([(0, 0)], ["striker"]), ctx)
    assert u.values[0, 0] > u.values[1, 0]


def test_utility_matrix_rejects_negative():
    with pytest.raises(ContractError):
        UtilityMatrix((0,), ("t",), np.array([[-1.0]]))


# ---------------------------------------------------------------- filter

def test_filter_all_when_m_equals_n():
    t = tasks_at([(0, 0), (1, 1), (2, 2)])
    assert filter_tasks(t, [(5, 5)], 3) == t


def test_filter_picks_nearest_tasks():
    t = tasks_at([(3, 0), (1, 0), (2, 0)])
    assert [x.id for x in filter_tasks(t, [(0, 0)], 2)] == ["t1", "t2"]


def test_filter_matches_sort_oracle(rng):
    for _ in range(50):
        t = tasks_at(rng.uniform(-4, 4, (8, 2)))
        nodes = rng.uniform(-4, 4, (int(rng.integers(1, 6)), 2))
        n = int(rng.integers(1, 9))
        dist = [min(math.dist(x.target, q) for q in nodes) for x in t]
        ref = sorted(sorted(range(8), key=lambda j: (dist[j], j))[:n])
        assert [x.id for x in filter_tasks(t, nodes, n)] == [f"t{j}" for j in ref]


def test_filter_always_keep():
    t = tasks_at([(3, 0), (1, 0), (2, 0)])
    assert [x.id for x in filter_tasks(t, [(0, 0)], 2, always_keep=(0,))] == ["t0", "t1"]


def test_filter_without_nodes_keeps_priority_order():
    t = tasks_at([(3, 0), (1, 0), (2, 0)])
    assert [x.id for x in filter_tasks(t, None, 2)] == ["t0", "t1"]


def test_filter_accepts_diagram(field):
    d = point_voronoi([(-1, 0), (1, 0), (0, 2)], field)
    t = tasks_at([(-4, -2.9), (0, 0.3), (4, 2.9)])
    assert [x.id for x in filter_tasks(t, d, 1)] == ["t1"]


# ---------------------------------------------------------------- refine

def test_refine_identity():
    t = tasks_at([(0, 0), (1, 1)])
    u = _uem(np.array([[1.0, 2.0], [3.0, 4.0]]))
    r, moved = refine_uem(u, t, [(2, 2)], [ObstacleEstimate(Point2(0, 0))], beta=0.0, lam=0.0)
    assert r == u and moved == t


def test_offset_moves_at_most_beta():
    t = tasks_at([(0, 0), (2, 0)])
    moved = offset_targets(t, [(1, 0), (2, 0)], 0.5)
    assert moved[0].target == Point2(0.5, 0.0)
    assert moved[1].target == Point2(2.0, 0.0)
    assert offset_targets(t, [(0.2, 0)], 0.5)[0].target == Point2(0.2, 0.0)


def test_anti_aligned_obstacle_leaves_uem_unchanged():
    u = _uem(np.array([[1.0, 2.0], [3.0, 4.0]]))
    obs = [ObstacleEstimate(Point2(0, 0.25), axis_direction=(1.0, 0.0))]
    # both targets sit straight behind the obstacle
    t = [Task("t0", Point2(-1, 0.25), 0), Task("t1", Point2(-3, 0.25), 1)]
    r, _ = refine_uem(u, t, [(-1, 0.25)], obs, alpha=0.5, beta=0.0, lam=5.0)
    assert np.allclose(r.values, u.values, atol=1e-15)


def test_correction_scales_columns():
    t = [Task("t0", Point2(1, 0), 0), Task("t1", Point2(-5, 0), 1)]
    u = _uem(np.ones((2, 2)))
    obs = [ObstacleEstimate(Point2(0, 0), axis_direction=(1.0, 0.0))]
    r, _ = refine_uem(u, t, [(1, 0)], obs, alpha=0.5, beta=0.0, lam=1.0)
    assert r.values[0, 0] == pytest.approx(1 + math.exp(-0.5))
    assert r.values[0, 1] == pytest.approx(1.0)
    neg, _ = refine_uem(u, t, [(1, 0)], obs, alpha=0.5, beta=0.0, lam=-1.0)
    assert neg.values[0, 0] == pytest.approx(1 - math.exp(-0.5))
    ex, _ = refine_uem(u, t, [(1, 0)], obs, alpha=0.5, beta=0.0, lam=1.0, correction_exempt=(0,))
    assert ex.values[0, 0] == 1.0


def test_refine_keeps_entries_non_negative(rng):
    u = _uem(rng.uniform(0, 3, (3, 3)))
    t = tasks_at(rng.uniform(-3, 3, (3, 2)))
    obs = [ObstacleEstimate(Point2(*rng.uniform(-3, 3, 2)), axis_direction=(0.0, 1.0)) for _ in range(3)]
    r, _ = refine_uem(u, t, rng.uniform(-3, 3, (4, 2)), obs, lam=-10.0,
                      agent_positions=rng.uniform(-3, 3, (3, 2)))
    assert (r.values >= 0).all()


# ---------------------------------------------------------------- assign

def test_assign_one_by_one():
    a = assign(_uem(np.array([[0.3]])), tasks_at([(0, 0)]))
    assert a.pairs == ((0, "t0"),)


def test_assign_hand_trace():
    a = assign(_uem(np.array([[5.0, 1.0], [4.0, 1.0]])), tasks_at([(0, 0), (1, 1)]))
    assert a.as_dict() == {0: "t0", 1: "t1"}


def test_assign_rejects_non_square():
    with pytest.raises(ContractError):
        assign(_uem(np.ones((2, 3))), tasks_at([(0, 0), (1, 1), (2, 2)]))


def test_assign_matches_exhaustive_oracle(rng):
    for _ in range(300):
        n = int(rng.integers(2, 6))
        v = rng.integers(0, 4, (n, n)).astype(float) if rng.random() < 0.5 else rng.uniform(0, 1, (n, n))
        a = assign(_uem(v), tasks_at([(0, 0)] * n)).as_dict()
        ref = oracle(v)
        assert all(a[ref[j]] == f"t{j}" for j in range(n))


@given(st.integers(2, 5).flatmap(lambda n: st.lists(st.lists(st.integers(0, 5), min_size=n, max_size=n),
                                                    min_size=n, max_size=n)),
       st.floats(1e-3, 1e3))
def test_assign_scaling_invariance(rows, c):
    v = np.array(rows, dtype=float)
    t = tasks_at([(0, 0)] * len(v))
    a = assign(_uem(v), t)
    assert assign(_uem(v * c), t).pairs == a.pairs
    assert sorted(x for _, x in a.pairs) == sorted(x.id for x in t)


def test_assign_respects_priority_not_list_order():
    t = [Task("late", Point2(0, 0), 1), Task("first", Point2(0, 0), 0)]
    u = UtilityMatrix((0, 1), ("late", "first"), np.array([[9.0, 5.0], [1.0, 4.0]]))
    assert assign(u, t).as_dict() == {0: "first", 1: "late"}


# ---------------------------------------------------------------- pipeline

def _scenario():
    positions = [(-4, 0), (-2, 1.5), (-2, -1.5), (0, 0.5), (1.5, -1), (2.5, 1.5), (3, -0.2)]
    kinds = ["striker", "supporter", "defender", "defender", "keeper", "forward", "midfielder", "forward",
             "defender", "supporter"]
    targets = [(0, 0), (1, 1), (-2, 1), (-2, -1), (-4, 0), (3, 1), (0, -2), (3, -1), (-3, 2), (1, 2)]
    tasks = [Task(f"r{j}", Point2(*targets[j]), j, kinds[j]) for j in range(10)]
    obstacles = [ObstacleEstimate(Point2(x, y), axis_direction=(math.cos(a), math.sin(a)), interest_length=1.2,
                                  confidence=0.8, id=k)
                 for k, (x, y, a) in enumerate([(1, 0, 3.1), (-1, 2, -1.2), (-1, -2, 1.2), (2.5, 2.5, 0.0), (2.5, -2.5, 2.0), (-3, 0.5, 0.4)])]
    return dwm(positions, ball=(1.2, 0.3), obstacles=obstacles), tasks


def _golden():
    d, tasks = _scenario()
    out = {}
    for diagram, lam in (("none", 0.0), ("vd", 0.0), ("elvd", -1.0), ("elvd", 0.5)):
        cfg = CoordinationConfig(diagram=diagram, lam=lam)
        out[f"{diagram}:{lam}"] = [list(p) for p in coordinate(d, tasks, cfg).pairs]
    return out


def test_coordinate_golden_snapshot():
    got = _golden()
    if os.environ.get("MRCOORD_REGEN_GOLDEN"):
        GOLDEN.write_text(json.dumps(got, indent=1) + "\n")
    assert got == json.loads(GOLDEN.read_text())


def test_coordinate_is_a_perfect_matching():
    d, tasks = _scenario()
    for diagram in ("none", "vd", "elvd"):
        a = coordinate(d, tasks, CoordinationConfig(diagram=diagram))
        assert sorted(x for x, _ in a.pairs) == list(range(7))
        assert len({t for _, t in a.pairs}) == 7
        assert "r0" in {t for _, t in a.pairs}


def test_coordinate_needs_enough_tasks():
    d, tasks = _scenario()
    with pytest.raises(ContractError):
        coordinate(d, tasks[:5])
