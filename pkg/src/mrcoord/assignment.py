"""Distributed task assignment.

Each agent runs :func:`coordinate` on its own fused world model: the
context is selected, utilities are computed for all M candidate tasks, the
Voronoi nodes pick N of them, targets are nudged toward the nodes, an
obstacle-aware correction rescales utilities, and the priority-greedy rule
produces the matching. Everything is a pure function of its inputs.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Optional, Sequence

import numpy as np

from . import kernels
from .errors import ContractError, DegenerateInputError
from .geometry import (
    BoundingBox,
    EllipticalSite,
    Point2,
    PointSite,
    VoronoiDiagram,
    elvd,
    point_voronoi,
)
from .world_model import DistributedWorldModel, ObstacleEstimate


@dataclass(frozen=True)
class Task:
    id: Hashable
    target: Point2
    priority_rank: int
    kind: str = "generic"
    # per-axis share of the fused ball position added to ``target``
    ball_gain: tuple[float, float] = (0.0, 0.0)


class ContextMode(enum.Enum):
    OFFENSIVE = "Offensive"
    DEFENSIVE = "Defensive"
    CONTESTED = "Contested"


@dataclass(frozen=True)
class ContextParams:
    w_d: float = 1.0
    w_b: float = 4.0
    w_c: float = 0.5
    sigma_d: float = 3.0
    sigma_b: float = 1.5
    kind_bonus: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class Context:
    mode: ContextMode
    parameters: ContextParams


@dataclass(frozen=True, eq=False)
class UtilityMatrix:
    agents: tuple
    tasks: tuple
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (len(self.agents), len(self.tasks)):
            raise ContractError(f"values shape {v.shape} != ({len(self.agents)}, {len(self.tasks)})")
        if not np.isfinite(v).all() or (v < 0).any():
            raise ContractError("utilities must be finite and non-negative")
        object.__setattr__(self, "values", v)

    def __eq__(self, other):
        return (
            isinstance(other, UtilityMatrix)
            and self.agents == other.agents
            and self.tasks == other.tasks
            and np.array_equal(self.values, other.values)
        )

    def columns(self, task_ids: Sequence) -> "UtilityMatrix":
        idx = [self.tasks.index(t) for t in task_ids]
        return UtilityMatrix(self.agents, tuple(task_ids), self.values[:, idx])


@dataclass(frozen=True)
class Assignment:
    pairs: tuple[tuple[Hashable, Hashable], ...]
    targets: Mapping = field(default_factory=dict, compare=False)

    def role_of(self, agent_id) -> Optional[Hashable]:
        for a, t in self.pairs:
            if a == agent_id:
                return t
        return None

    def as_dict(self) -> dict:
        return dict(self.pairs)


# --------------------------------------------------------------------------
# Context


DEFAULT_CONTEXTS = {
    ContextMode.OFFENSIVE: ContextParams(kind_bonus={"forward": 1.0, "supporter": 0.5}),
    ContextMode.DEFENSIVE: ContextParams(kind_bonus={"defender": 1.0, "keeper": 0.5}),
    ContextMode.CONTESTED: ContextParams(kind_bonus={"supporter": 0.5, "midfielder": 0.5}),
}

KIND_SIDE = {"striker": 1.0, "forward": 1.0, "defender": -1.0, "keeper": -1.0}


def context_select(dwm: DistributedWorldModel, contexts: Mapping = DEFAULT_CONTEXTS,
                   min_confidence: float = 0.5) -> Context:
    """Offensive / Defensive by ball half when the ball is trusted, else Contested.

    Own goal is on the negative x side.
    """
    b = dwm.ball
    if b.confidence >= min_confidence:
        mode = ContextMode.OFFENSIVE if b.position[0] > 0.0 else ContextMode.DEFENSIVE
    else:
        mode = ContextMode.CONTESTED
    return Context(mode, contexts[mode])


# --------------------------------------------------------------------------
# Utilities


def resolve_targets(tasks: Sequence[Task], ball: Point2, bounds: Optional[BoundingBox] = None) -> list[Task]:
    """Apply each task's ball coupling; clamp to the field if given."""
    out = []
    for t in tasks:
        gx, gy = t.ball_gain
        if gx == 0.0 and gy == 0.0:
            out.append(t)
            continue
        x = t.target[0] + gx * ball[0]
        y = t.target[1] + gy * ball[1]
        if bounds is not None:
            x = min(max(x, bounds.min.x), bounds.max.x)
            y = min(max(y, bounds.min.y), bounds.max.y)
        out.append(Task(t.id, Point2(x, y), t.priority_rank, t.kind))
    return out


def _logistic(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def compute_uem(dwm: DistributedWorldModel, tasks: Sequence[Task], ctx: Context,
                striker_kind: str = "striker") -> UtilityMatrix:
    """Agent-by-task utilities.

    ``w_d exp(-d/sigma_d)`` for the distance to the target, plus
    ``w_b exp(-d_ball/sigma_b)`` (scaled by ball confidence) on the striker
    column, plus a context bonus that favours agents on the side of the field
    that the task's kind belongs to.
    """
    if not dwm.agents or not tasks:
        raise ContractError("need at least one agent and one task")
    p = ctx.parameters
    pos = np.array([a[1].position for a in dwm.agents], dtype=np.float64)
    tgt = np.array([t.target for t in tasks], dtype=np.float64)
    d = np.hypot(pos[:, None, 0] - tgt[None, :, 0], pos[:, None, 1] - tgt[None, :, 1])
    values = p.w_d * np.exp(-d / p.sigma_d)
    b = dwm.ball
    db = np.hypot(pos[:, 0] - b.position[0], pos[:, 1] - b.position[1])
    ball_term = max(b.confidence, 0.0) * np.exp(-db / p.sigma_b)
    for j, t in enumerate(tasks):
        if t.kind == striker_kind:
            values[:, j] += p.w_b * ball_term
        bonus = p.kind_bonus.get(t.kind, 0.0)
        if bonus:
            side = KIND_SIDE.get(t.kind, 0.0)
            zone = np.array([_logistic(side * x) for x in pos[:, 0]])
            values[:, j] += p.w_c * bonus * zone
    return UtilityMatrix(tuple(dwm.agent_ids()), tuple(t.id for t in tasks), values)


# --------------------------------------------------------------------------
# N-of-M filter and refinement


def _node_array(nodes) -> np.ndarray:
    if isinstance(nodes, VoronoiDiagram):
        return nodes.node_positions
    arr = np.asarray([(n[0], n[1]) for n in nodes], dtype=np.float64)
    return arr.reshape(-1, 2)


def _rank_key(t: Task):
    return (t.priority_rank, str(t.id))


def filter_tasks(tasks: Sequence[Task], diagram, n: int, *,
                 fallback: Sequence = (), always_keep: Sequence[int] = ()) -> list[Task]:
    """The ``n`` tasks whose targets lie closest to a Voronoi node.

    ``diagram`` may be a :class:`VoronoiDiagram`, a node list, or ``None``.
    With no nodes the ``fallback`` anchor points are used instead. Ranks in
    ``always_keep`` are selected first. Ties go to the lower rank, then the
    lower id; output is in priority order.
    """
    if not 1 <= n <= len(tasks):
        raise ContractError(f"need 1 <= n <= {len(tasks)}, got {n}")
    nodes = _node_array(diagram) if diagram is not None else np.empty((0, 2))
    if len(nodes) == 0:
        nodes = _node_array(fallback)
    if len(nodes) == 0:
        ordered = sorted(tasks, key=_rank_key)
        return ordered[:n]
    tgt = np.array([t.target for t in tasks], dtype=np.float64)
    dist = np.hypot(tgt[:, None, 0] - nodes[None, :, 0], tgt[:, None, 1] - nodes[None, :, 1]).min(axis=1)
    keep = set(always_keep)
    scored = sorted(
        range(len(tasks)),
        key=lambda i: (tasks[i].priority_rank not in keep, float(dist[i]), tasks[i].priority_rank, str(tasks[i].id)),
    )
    chosen = [tasks[i] for i in scored[:n]]
    return sorted(chosen, key=_rank_key)


def offset_targets(tasks: Sequence[Task], nodes, beta: float, exempt: Sequence[int] = ()) -> list[Task]:
    """Move each target up to ``beta`` metres toward its nearest node."""
    nodes = _node_array(nodes)
    if beta <= 0.0 or len(nodes) == 0:
        return list(tasks)
    out = []
    for t in tasks:
        if t.priority_rank in exempt:
            out.append(t)
            continue
        d = np.hypot(nodes[:, 0] - t.target[0], nodes[:, 1] - t.target[1])
        k = int(np.argmin(d))
        dist = float(d[k])
        if dist <= 0.0:
            out.append(t)
            continue
        step = min(beta, dist) / dist
        nx, ny = nodes[k]
        out.append(Task(t.id, Point2(t.target[0] + step * (nx - t.target[0]), t.target[1] + step * (ny - t.target[1])),
                        t.priority_rank, t.kind, t.ball_gain))
    return out


def normalized_weight(points: np.ndarray, obstacles: Sequence[ObstacleEstimate], alpha: float) -> np.ndarray:
    """Weight correction divided by its upper bound ``2 |obstacles|``."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if not obstacles:
        return np.zeros(len(points))
    c = np.array([o.centroid for o in obstacles], dtype=np.float64)
    a = np.array([o.axis_direction for o in obstacles], dtype=np.float64)
    w = kernels.weight_field(points[:, 0], points[:, 1], c, a, alpha)
    return w / (2.0 * len(obstacles))


def refine_uem(uem: UtilityMatrix, tasks: Sequence[Task], diagram, obstacles: Sequence[ObstacleEstimate],
               alpha: float = 0.5, beta: float = 0.5, lam: float = 0.0, *,
               agent_positions: Optional[np.ndarray] = None, path_samples: int = 5,
               exempt: Sequence[int] = (), correction_exempt: Sequence[int] = ()) -> tuple[UtilityMatrix, list[Task]]:
    """Nudge targets toward nodes, then scale utilities by ``1 + lam * W_hat``.

    Without ``agent_positions`` the normalized correction is evaluated at each
    (moved) target, which scales whole columns. With them it is averaged over
    ``path_samples`` points on the straight path from each agent to each
    target, so agents whose switch would cross an obstacle's area of interest
    are singled out. Scaled entries are clipped at zero. Tasks whose rank is in
    ``exempt`` keep their target; those in ``correction_exempt`` keep their
    utilities.
    """
    if list(uem.tasks) != [t.id for t in tasks]:
        raise ContractError("UEM columns do not match tasks")
    moved = offset_targets(tasks, diagram if diagram is not None else (), beta, exempt)
    if lam == 0.0 or not obstacles:
        return UtilityMatrix(uem.agents, uem.tasks, uem.values.copy()), moved
    tgt = np.array([t.target for t in moved], dtype=np.float64)
    if agent_positions is None:
        w = normalized_weight(tgt, obstacles, alpha)[None, :]
    else:
        pos = np.asarray(agent_positions, dtype=np.float64).reshape(-1, 2)
        s = np.linspace(0.0, 1.0, max(path_samples, 2))
        pts = pos[:, None, None, :] + s[None, None, :, None] * (tgt[None, :, None, :] - pos[:, None, None, :])
        w = normalized_weight(pts.reshape(-1, 2), obstacles, alpha).reshape(len(pos), len(tgt), len(s)).mean(axis=2)
    scale = np.maximum(0.0, 1.0 + lam * w) * np.ones((1, len(moved)))
    for j, t in enumerate(moved):
        if t.priority_rank in correction_exempt:
            scale[:, j] = 1.0
    values = uem.values * scale
    return UtilityMatrix(uem.agents, uem.tasks, values), moved


# --------------------------------------------------------------------------
# Phi


def assign(uem: UtilityMatrix, tasks: Sequence[Task]) -> Assignment:
    """Priority-greedy matching on a square UEM.

    The highest-priority task takes the unassigned agent with the largest
    utility for it (lowest agent index on ties), then the next task, and so on.
    """
    n, m = uem.values.shape
    if n != m:
        raise ContractError(f"assign needs a square UEM, got {n}x{m}")
    if len(tasks) != m:
        raise ContractError("task list does not match UEM columns")
    order = sorted(tasks, key=_rank_key)
    col = {tid: j for j, tid in enumerate(uem.tasks)}
    free = np.ones(n, dtype=bool)
    pairs = []
    for t in order:
        column = np.where(free, uem.values[:, col[t.id]], -np.inf)
        i = int(np.argmax(column))
        free[i] = False
        pairs.append((uem.agents[i], t.id))
    pairs.sort(key=lambda p: uem.agents.index(p[0]))
    return Assignment(tuple(pairs), {t.id: t.target for t in tasks})


# --------------------------------------------------------------------------
# Pipeline


@dataclass(frozen=True)
class CoordinationConfig:
    bounds: BoundingBox = BoundingBox.from_extent(-4.5, -3.0, 4.5, 3.0)
    diagram: str = "elvd"  # none | vd | elvd
    alpha: float = 0.5
    beta: float = 0.5
    lam: float = 0.0
    correction: str = "path"  # path | target
    resolution: float = 20.0
    min_obstacle_confidence: float = 0.1
    always_keep: tuple[int, ...] = (0,)
    offset_exempt: tuple[int, ...] = (0,)
    correction_exempt: tuple[int, ...] = (0,)
    anchors: tuple[Point2, ...] = ()
    contexts: Mapping = field(default_factory=lambda: dict(DEFAULT_CONTEXTS))


def build_diagram(obstacles: Sequence[ObstacleEstimate], config: CoordinationConfig) -> Optional[VoronoiDiagram]:
    """Diagram over the trusted obstacles, or ``None`` when it cannot be built."""
    if config.diagram == "none":
        return None
    b = config.bounds
    obs = [o for o in obstacles if o.confidence >= config.min_obstacle_confidence and b.contains(o.centroid)]
    if len(obs) < 2:
        return None
    try:
        if config.diagram == "vd":
            return point_voronoi([PointSite(Point2(*o.centroid), o.id) for o in obs], b)
        if config.diagram == "elvd":
            sites = [
                EllipticalSite.from_obstacle(o.centroid, o.axis_direction, o.interest_length, o.id)
                for o in obs
            ]
            return elvd(sites, b, config.resolution)
    except DegenerateInputError:
        return None
    raise ContractError(f"unknown diagram backend {config.diagram!r}")


_BUILD = object()


def coordinate(dwm: DistributedWorldModel, all_tasks: Sequence[Task],
               config: CoordinationConfig = CoordinationConfig(), diagram=_BUILD) -> Assignment:
    """Full pipeline: context, diagram, UEM, N-of-M filter, refinement, greedy.

    ``diagram`` may be passed in when the caller already built it from
    ``dwm.obstacles`` with the same config.
    """
    ctx = context_select(dwm, config.contexts)
    tasks = resolve_targets(all_tasks, dwm.ball.position, config.bounds)
    n = len(dwm.agents)
    if n > len(tasks):
        raise ContractError(f"{n} agents but only {len(tasks)} tasks")
    if diagram is _BUILD:
        diagram = build_diagram(dwm.obstacles, config)
    uem = compute_uem(dwm, tasks, ctx)
    chosen = filter_tasks(tasks, diagram, n, fallback=config.anchors, always_keep=config.always_keep)
    sub = uem.columns([t.id for t in chosen])
    trusted = [o for o in dwm.obstacles if o.confidence >= config.min_obstacle_confidence]
    if diagram is not None:
        positions = None
        if config.correction == "path":
            positions = np.array([a[1].position for a in dwm.agents], dtype=np.float64)
        sub, chosen = refine_uem(
            sub, chosen, diagram, trusted if config.diagram == "elvd" else (),
            config.alpha, config.beta, config.lam if config.diagram == "elvd" else 0.0,
            agent_positions=positions, exempt=config.offset_exempt,
            correction_exempt=config.correction_exempt,
        )
    return assign(sub, chosen)
