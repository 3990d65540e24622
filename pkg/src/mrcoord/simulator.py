"""Deterministic match simulator and the role-overlap experiment.

One match is a pure function of ``(config, mode, seed)``. Randomness comes
from three independent streams (world, sensing, channel) derived from the
seed alone, so all four modes see the same opponents and the same kick noise.

Coordination is computed from the published models: every agent fuses what
the team has heard from each member, itself included (its own broadcasts are
applied locally at send time). With a perfect channel all agents therefore
fuse identical inputs and agree on every assignment; disagreements, and thus
role overlaps, come only from lost or late packets.
"""
from __future__ import annotations

import enum
import json
import math
import random
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .assignment import Assignment, CoordinationConfig, ContextMode, Task, build_diagram, coordinate
from .config import ScenarioConfig
from .errors import ConfigurationError
from .geometry import BoundingBox, Point2
from .network import BudgetTracker, Channel, ChannelConfig, decode_packet, encode_packet
from .world_model import (
    AgentPose,
    BallEstimate,
    DistributedWorldModel,
    Event,
    EventKind,
    EventState,
    LocalModel,
    ObservationSet,
    TeammateLocalModel,
    WorldModelParams,
    detect_events,
    fuse,
    pacing_ok,
    restamp,
    model_from_summary,
    predict_to,
    roll_ball,
    summarize,
    update_local,
)


class ExperimentMode(enum.Enum):
    FIXED_RATE = "FixedRate"
    EVENT_BASED = "EventBased"
    EVENT_VD = "EventVD"
    EVENT_ELVD = "EventELVD"

    @classmethod
    def parse(cls, name) -> "ExperimentMode":
        if isinstance(name, cls):
            return name
        for m in cls:
            if m.value.lower() == str(name).lower():
                return m
        raise ConfigurationError(f"unknown mode {name!r}; choose from {[m.value for m in cls]}")


ALL_MODES = tuple(ExperimentMode)


# --------------------------------------------------------------------------
# Ground truth


@dataclass(frozen=True)
class AgentTruth:
    pose: AgentPose
    role: Optional[str] = None
    target: Optional[Point2] = None
    look_at: Optional[Point2] = None
    kick_ready: float = 0.0


@dataclass(frozen=True)
class OpponentTruth:
    anchor: Point2
    axis_direction: tuple[float, float]
    interest_length: float
    amplitude: float
    period: float
    phase: float
    position: Point2
    kick_ready: float = 0.0

    def moved(self, position: Point2) -> "OpponentTruth":
        return OpponentTruth(self.anchor, self.axis_direction, self.interest_length, self.amplitude,
                             self.period, self.phase, position, self.kick_ready)

    def patrol(self, t: float) -> Point2:
        """Sinusoidal patrol; stays on ``[anchor, anchor + amplitude * axis]``."""
        s = 0.5 * self.amplitude * (1.0 - math.cos(2.0 * math.pi * t / self.period + self.phase))
        return Point2(self.anchor[0] + s * self.axis_direction[0], self.anchor[1] + s * self.axis_direction[1])


@dataclass(frozen=True)
class GroundTruth:
    agents: tuple[AgentTruth, ...]
    opponents: tuple[OpponentTruth, ...]
    ball: Point2
    ball_velocity: tuple[float, float]
    time: float = 0.0
    score: tuple[int, int] = (0, 0)


@dataclass(frozen=True)
class WorldParams:
    bounds: BoundingBox
    friction: float = 0.4
    agent_speed: float = 0.5
    stop_radius: float = 0.3
    kick_radius: float = 0.25
    kick_speed: tuple[float, float] = (1.0, 2.0)
    kick_noise: float = math.radians(20.0)
    kick_cooldown: float = 1.0
    restitution: float = 0.8
    ball_max_speed: float = 3.0
    goal_half_width: float = 0.75
    scan_rate: float = 1.0
    striker_role: Optional[str] = "striker"

    @classmethod
    def from_config(cls, c: ScenarioConfig) -> "WorldParams":
        d = c.dynamics
        striker = min(c.tasks, key=lambda t: t.priority).id
        return cls(
            bounds=c.bounds, friction=c.world_model.friction, agent_speed=d.agent_speed,
            stop_radius=d.stop_radius, kick_radius=d.kick_radius,
            kick_speed=(d.kick_speed_min, d.kick_speed_max), kick_noise=math.radians(d.kick_noise_deg),
            kick_cooldown=d.kick_cooldown, restitution=d.restitution, ball_max_speed=d.ball_max_speed,
            goal_half_width=d.goal_half_width, scan_rate=d.scan_rate, striker_role=striker,
        )


def _wrap(a: float) -> float:
    return math.atan2(math.sin(a), math.cos(a))


def _kick(rng: random.Random, origin, goal, p: WorldParams) -> tuple[float, float]:
    ang = math.atan2(goal[1] - origin[1], goal[0] - origin[0]) + rng.gauss(0.0, p.kick_noise)
    speed = rng.uniform(*p.kick_speed)
    return (speed * math.cos(ang), speed * math.sin(ang))


def _step_ball(pos, vel, dt, p: WorldParams):
    pos, vel = roll_ball(pos, vel, dt, p.friction)
    b = p.bounds
    x, y = pos
    vx, vy = vel
    goal = 0
    if x < b.min.x or x > b.max.x:
        if abs(y) <= p.goal_half_width:
            goal = 1 if x > b.max.x else -1
        x = 2 * b.min.x - x if x < b.min.x else 2 * b.max.x - x
        vx, vy = -vx * p.restitution, vy * p.restitution
    if y < b.min.y or y > b.max.y:
        y = 2 * b.min.y - y if y < b.min.y else 2 * b.max.y - y
        vx, vy = vx * p.restitution, -vy * p.restitution
    x = min(max(x, b.min.x), b.max.x)
    y = min(max(y, b.min.y), b.max.y)
    return Point2(x, y), (vx, vy), goal


def _steer(pos: Point2, target: Optional[Point2], others: Sequence[Point2], step: float, stop: float) -> Point2:
    if target is None:
        return pos
    dx, dy = target[0] - pos[0], target[1] - pos[1]
    dist = math.hypot(dx, dy)
    if dist < 1e-9:
        return pos
    step = min(step, dist)
    base = math.atan2(dy, dx)
    for turn in (0.0, 0.785398, -0.785398, 1.570796, -1.570796):
        a = base + turn
        nx, ny = pos[0] + step * math.cos(a), pos[1] + step * math.sin(a)
        blocked = False
        for o in others:
            dn = math.hypot(nx - o[0], ny - o[1])
            if dn < stop and dn < math.hypot(pos[0] - o[0], pos[1] - o[1]):
                blocked = True
                break
        if not blocked:
            return Point2(nx, ny)
    return pos


def step_world(gt: GroundTruth, dt: float, rng: random.Random, params: WorldParams) -> GroundTruth:
    """Advance the ground truth by ``dt``: patrols, agent steering, kicks, ball."""
    if not 0.0 < dt <= 0.1:
        raise ConfigurationError(f"dt must be in (0, 0.1], got {dt}")
    t = gt.time + dt
    b = params.bounds
    opponents = tuple(o.moved(o.patrol(t)) if o.amplitude > 0.0 else o for o in gt.opponents)
    opp_pos = [o.position for o in opponents]
    agents = []
    positions = [a.pose.position for a in gt.agents]
    for i, a in enumerate(gt.agents):
        others = positions[:i] + positions[i + 1:] + opp_pos
        p = _steer(a.pose.position, a.target, others, params.agent_speed * dt, params.stop_radius)
        p = Point2(min(max(p[0], b.min.x), b.max.x), min(max(p[1], b.min.y), b.max.y))
        positions[i] = p
        heading = a.pose.heading
        if a.look_at is not None:
            if math.hypot(a.look_at[0] - p[0], a.look_at[1] - p[1]) > 1e-9:
                heading = math.atan2(a.look_at[1] - p[1], a.look_at[0] - p[0])
        elif params.scan_rate:
            heading = _wrap(heading + params.scan_rate * dt)
        agents.append(AgentTruth(AgentPose(p, heading, a.pose.confidence), a.role, a.target, a.look_at, a.kick_ready))

    ball, vel = gt.ball, gt.ball_velocity
    kicked = False
    for i, a in enumerate(agents):
        if a.role == params.striker_role and a.kick_ready <= t and \
                math.hypot(ball[0] - a.pose.position[0], ball[1] - a.pose.position[1]) <= params.kick_radius:
            vel = _kick(rng, ball, (b.max.x, 0.0), params)
            agents[i] = replace(a, kick_ready=t + params.kick_cooldown)
            kicked = True
            break
    if not kicked:
        for k, o in enumerate(opponents):
            if o.kick_ready <= t and math.hypot(ball[0] - o.position[0], ball[1] - o.position[1]) <= params.kick_radius:
                aim = (b.min.x, rng.uniform(-1.0, 1.0))
                vel = _kick(rng, ball, aim, params)
                opponents = opponents[:k] + (replace(o, kick_ready=t + params.kick_cooldown),) + opponents[k + 1:]
                break
    speed = math.hypot(*vel)
    if speed > params.ball_max_speed:
        vel = (vel[0] * params.ball_max_speed / speed, vel[1] * params.ball_max_speed / speed)
    ball, vel, goal = _step_ball(ball, vel, dt, params)
    score = gt.score
    if goal:
        score = (score[0] + 1, score[1]) if goal > 0 else (score[0], score[1] + 1)
        ball, vel = Point2(0.0, 0.0), (0.0, 0.0)
    return GroundTruth(tuple(agents), opponents, ball, vel, t, score)


# --------------------------------------------------------------------------
# Sensing


@dataclass(frozen=True)
class SensorParams:
    range: float = 6.0
    fov: float = math.radians(120.0)
    sigma_obs: float = 0.15
    sigma_growth: float = 1.0 / 3.0
    p_fp: float = 0.02
    p_miss: float = 0.1
    sigma_pose: float = 0.05
    sigma_axis: float = math.radians(10.0)

    @classmethod
    def from_config(cls, c: ScenarioConfig) -> "SensorParams":
        s = c.sensing
        return cls(s.range, math.radians(s.fov_deg), s.sigma_obs, s.sigma_growth, s.p_fp, s.p_miss,
                   s.sigma_pose, math.radians(s.sigma_axis_deg))


def _visible(pose: AgentPose, target, p: SensorParams) -> Optional[float]:
    dx, dy = target[0] - pose.position[0], target[1] - pose.position[1]
    d = math.hypot(dx, dy)
    if d > p.range:
        return None
    if d > 1e-9 and abs(_wrap(math.atan2(dy, dx) - pose.heading)) > 0.5 * p.fov:
        return None
    return d


def sense_team(gt: GroundTruth, rows: Sequence[int], rng: np.random.Generator, params: SensorParams,
               bounds: BoundingBox) -> list[ObservationSet]:
    """Noisy, range- and FOV-limited views for the agents in ``rows``.

    Noise is drawn in fixed-shape blocks whatever is visible, so the stream
    advances identically every tick.
    """
    k = len(rows)
    m = len(gt.opponents)
    poses = [gt.agents[i].pose for i in rows]
    xy = np.array([p.position for p in poses], dtype=np.float64).reshape(k, 2)
    head = np.array([p.heading for p in poses], dtype=np.float64)
    ents = np.array([gt.ball] + [o.position for o in gt.opponents], dtype=np.float64)
    normal = rng.standard_normal((k, 4 + 3 * m + 2))
    uni = rng.random((k, 4))
    rel = ents[None, :, :] - xy[:, None, :]
    d = np.hypot(rel[..., 0], rel[..., 1])
    cos_off = (rel[..., 0] * np.cos(head)[:, None] + rel[..., 1] * np.sin(head)[:, None])
    vis = (d <= params.range) & ((d <= 1e-9) | (cos_off >= d * math.cos(0.5 * params.fov)))
    sig = params.sigma_obs * (1.0 + params.sigma_growth * d)
    noisy = ents[None, :, :] + sig[..., None] * np.stack(
        [normal[:, 2:3 + m], normal[:, 3 + m:4 + 2 * m]], axis=-1)
    self_xy = xy + params.sigma_pose * normal[:, 0:2]
    opp_axis = np.array([math.atan2(o.axis_direction[1], o.axis_direction[0]) for o in gt.opponents])
    axis = opp_axis[None, :] + params.sigma_axis * normal[:, 4 + 2 * m:4 + 3 * m]
    footprint = (params.range, params.fov)
    out = []
    for r in range(k):
        self_pose = AgentPose(Point2(float(self_xy[r, 0]), float(self_xy[r, 1])), float(head[r]), 1.0)
        ball = None
        if vis[r, 0] and uni[r, 0] >= params.p_miss:
            ball = Point2(float(noisy[r, 0, 0]), float(noisy[r, 0, 1]))
        obstacles = []
        for j in range(m):
            if vis[r, j + 1]:
                a = float(axis[r, j])
                obstacles.append((Point2(float(noisy[r, j + 1, 0]), float(noisy[r, j + 1, 1])),
                                  (math.cos(a), math.sin(a))))
        if params.p_fp > 0.0 and uni[r, 1] < params.p_fp:
            z = Point2(bounds.min.x + float(uni[r, 2]) * bounds.width, bounds.min.y + float(uni[r, 3]) * bounds.height)
            a = math.atan2(normal[r, -1], normal[r, -2])  # uniform direction
            obstacles.append((z, (math.cos(a), math.sin(a))))
        out.append(ObservationSet(self_pose, ball, tuple(obstacles), footprint))
    return out


def sense(gt: GroundTruth, agent_index: int, rng: np.random.Generator, params: SensorParams,
          bounds: BoundingBox) -> ObservationSet:
    """Observation set of a single agent; see :func:`sense_team`."""
    return sense_team(gt, [agent_index], rng, params, bounds)[0]


# --------------------------------------------------------------------------
# Metrics


def role_overlap_metric(role_table: np.ndarray, dt: float, n_roles: int, threshold: int = 2,
                        match_length: Optional[float] = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-role overlap seconds and seconds per minute.

    ``role_table`` is ticks x agents of role indices (-1 for none). A tick
    counts for a role when at least ``threshold`` agents hold it.
    """
    table = np.asarray(role_table)
    if table.ndim != 2:
        raise ValueError("role_table must be 2-D (ticks x agents)")
    ticks = table.shape[0]
    counts = np.zeros((ticks, n_roles), dtype=np.int64)
    for col in range(table.shape[1]):
        r = table[:, col]
        ok = (r >= 0) & (r < n_roles)
        np.add.at(counts, (np.flatnonzero(ok), r[ok]), 1)
    seconds = (counts >= threshold).sum(axis=0) * dt
    minutes = (match_length if match_length is not None else ticks * dt) / 60.0
    rate = seconds / minutes if minutes > 0 else np.zeros(n_roles)
    return seconds, rate


@dataclass(frozen=True)
class MetricsRecord:
    mode: str
    seed: int
    match_length: float
    roles: tuple[str, ...]
    overlap_seconds: tuple[float, ...]
    overlap_per_minute: tuple[float, ...]
    packets_sent: int
    budget: int
    copies_delivered: int
    copies_dropped: int
    assignment_switches: int
    events_by_kind: tuple[tuple[str, int], ...]
    score: tuple[int, int]
    role_table: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    trace: tuple = field(default=(), compare=False, repr=False)

    def overlap(self, role: str) -> float:
        return self.overlap_per_minute[self.roles.index(role)]

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "seed": self.seed,
            "match_length": self.match_length,
            "roles": list(self.roles),
            "overlap_seconds": dict(zip(self.roles, self.overlap_seconds)),
            "overlap_per_minute": dict(zip(self.roles, self.overlap_per_minute)),
            "packets_sent": self.packets_sent,
            "budget": self.budget,
            "copies_delivered": self.copies_delivered,
            "copies_dropped": self.copies_dropped,
            "assignment_switches": self.assignment_switches,
            "events_by_kind": dict(self.events_by_kind),
            "score": list(self.score),
            "artifact_version": __version__,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


# --------------------------------------------------------------------------
# Match


def _stream_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([int(seed), stream]).generate_state(1)[0])


def coordination_config(c: ScenarioConfig, mode: ExperimentMode) -> CoordinationConfig:
    k = c.coordination
    diagram = {ExperimentMode.EVENT_VD: "vd", ExperimentMode.EVENT_ELVD: "elvd"}.get(mode, "none")
    return CoordinationConfig(
        bounds=c.bounds, diagram=diagram, alpha=k.alpha, beta=k.beta, lam=k.lam,
        correction=k.correction, resolution=k.resolution,
        min_obstacle_confidence=k.min_obstacle_confidence,
        anchors=tuple(Point2(*a) for a in c.anchors),
        contexts={m: k.contexts[m.value] for m in ContextMode},
    )


def world_model_params(c: ScenarioConfig, mode: ExperimentMode) -> WorldModelParams:
    """Only the ELVD mode models obstacles as asymmetric; others predict them static."""
    return replace(c.world_model, asymmetric_obstacles=mode is ExperimentMode.EVENT_ELVD)


def build_tasks(c: ScenarioConfig) -> list[Task]:
    return [Task(t.id, Point2(*t.target), t.priority, t.kind, tuple(t.ball_gain)) for t in c.tasks]


def initial_ground_truth(c: ScenarioConfig, rng: random.Random) -> GroundTruth:
    tasks = sorted(c.tasks, key=lambda t: t.priority)[: c.team_size]
    agents = []
    for k, t in enumerate(tasks):
        x, y = t.target
        if k == 0:
            x, y = -0.5, 0.0
        agents.append(AgentTruth(AgentPose(Point2(x, y), 0.0, 1.0)))
    opponents = []
    for o in c.opponents:
        a = math.radians(o.axis_deg)
        axis = (math.cos(a), math.sin(a))
        phase = rng.uniform(0.0, 2.0 * math.pi)
        ot = OpponentTruth(Point2(*o.anchor), axis, o.interest_length, o.amplitude, o.period, phase, Point2(*o.anchor))
        opponents.append(replace(ot, position=ot.patrol(0.0)) if o.amplitude > 0.0 else ot)
    return GroundTruth(tuple(agents), tuple(opponents), Point2(0.0, 0.0), (0.0, 0.0), 0.0)


_MISSING = object()


def propagate_poses(dwm: DistributedWorldModel, assignment: Assignment, stamps: Sequence[float],
                    striker_role, speed: float) -> DistributedWorldModel:
    """Advance each agent's published pose toward its assigned target.

    Agent ``j`` is assumed to have walked at ``speed`` toward its target (the
    ball for the striker) since its last event at ``stamps[j]``.
    """
    now = dwm.timestamp
    out = []
    for (aid, pose) in dwm.agents:
        role = assignment.role_of(aid)
        target = dwm.ball.position if role == striker_role else assignment.targets.get(role)
        elapsed = now - stamps[aid]
        if target is None or elapsed <= 0.0:
            out.append((aid, pose))
            continue
        dx, dy = target[0] - pose.position[0], target[1] - pose.position[1]
        d = math.hypot(dx, dy)
        step = min(d, speed * elapsed)
        if d > 1e-12 and step > 0.0:
            pose = AgentPose(Point2(pose.position[0] + dx * step / d, pose.position[1] + dy * step / d),
                             pose.heading, pose.confidence)
        out.append((aid, pose))
    return replace(dwm, agents=tuple(out))


def _roundtrip(event: Event) -> Event:
    return decode_packet(encode_packet(event))


class Match:
    """Mutable state of one running match; use :func:`run_match`."""

    def __init__(self, config: ScenarioConfig, mode, seed: int, record_trace: bool = False):
        self.c = config
        self.mode = ExperimentMode.parse(mode)
        self.seed = int(seed)
        n = config.team_size
        self.n = n
        self.rows = list(range(n))
        self.dt = config.dt
        self.world_rng = random.Random(_stream_seed(seed, 1))
        self.sense_rng = np.random.default_rng(_stream_seed(seed, 2))
        self.wp = WorldParams.from_config(config)
        self.sp = SensorParams.from_config(config)
        self.wmp = world_model_params(config, self.mode)
        self.ep = config.events
        self.cc = coordination_config(config, self.mode)
        self.tasks = build_tasks(config)
        self.role_index = {t.id: k for k, t in enumerate(config.tasks)}
        self.striker = self.wp.striker_role
        self.gt = initial_ground_truth(config, self.world_rng)
        self.budget = BudgetTracker(config.budget, 0, config.match_length)
        ch = config.channel
        self.channel = Channel(ChannelConfig(ch.loss, ch.latency_mean, ch.latency_jitter, _stream_seed(seed, 3)),
                               n, record_trace)
        kickoff = BallEstimate(Point2(0.0, 0.0), confidence=0.5, last_observed=0.0)
        self.lms = [LocalModel(a.pose, kickoff, (), 0.0) for a in self.gt.agents]
        first = [_roundtrip(Event(EventKind.PERIODIC_SUMMARY, i, 0.0, summarize(self.lms[i], self.ep.max_obstacles)))
                 for i in range(n)]
        # views[i][j]: newest event from j that agent i has applied
        self.views = [list(first) for _ in range(n)]
        self.states = [EventState(last_pose=first[i].payload.pose.position) for i in range(n)]
        self.dwms: list[Optional[DistributedWorldModel]] = [None] * n
        self.assignments: list[Optional[Assignment]] = [None] * n
        self.roles: list[Optional[str]] = [None] * n
        self.events_by_kind = {k.name: 0 for k in EventKind}
        self.switches = 0
        self.fixed_sent = 0
        self._tlm_cache: dict = {}
        self._tlm_time = None
        # every copy of a packet takes effect at send time + worst-case latency,
        # so receivers that got it switch to it on the same tick
        self.apply_delay = ch.latency_mean + ch.latency_jitter
        self.pending: list[list[tuple[float, Event]]] = [[] for _ in range(n)]
        self._diagram_cache: dict = {}
        self.predict_poses = self.mode in (ExperimentMode.EVENT_VD, ExperimentMode.EVENT_ELVD)

    # -- teammate models

    def _tlm(self, event: Event, now: float) -> LocalModel:
        if self._tlm_time != now:
            self._tlm_cache = {}
            self._tlm_time = now
        key = (event.sender, event.timestamp)
        m = self._tlm_cache.get(key)
        if m is None:
            m = predict_to(model_from_summary(event.payload, event.timestamp, self.wmp), now, self.wmp)
            m = restamp(m, now)
            self._tlm_cache[key] = m
        return m

    def _fuse_view(self, i: int, now: float) -> DistributedWorldModel:
        view = self.views[i]
        models = [self._tlm(e, now) for e in view]
        mates = [TeammateLocalModel(j, models[j], view[j].timestamp) for j in range(self.n) if j != i]
        return fuse(models[i], mates, own_id=i, params=self.wmp)

    # -- per-tick phases

    def _send(self, i: int, events: list[Event], now: float):
        if not self.budget.try_send(None, now):
            return
        head = events[0]
        packet = encode_packet(head)
        self.channel.broadcast(packet, i, now)
        self._queue(i, decode_packet(packet))
        for e in events:
            self.events_by_kind[e.kind.name] += 1
        self.states[i].record(events, self.roles[i])
        self.states[i].ball_confident = self.lms[i].ball.confidence >= self.ep.theta_lost

    def _communicate(self, k: int, now: float):
        n = self.n
        if self.mode is ExperimentMode.FIXED_RATE:
            due = int(math.floor(now * self.c.budget / self.c.match_length + 1e-9))
            while self.fixed_sent < due:
                i = self.fixed_sent % n
                self.fixed_sent += 1
                ev = Event(EventKind.PERIODIC_SUMMARY, i, now, summarize(self.lms[i], self.ep.max_obstacles))
                self._send(i, [ev], now)
            return
        open_ = pacing_ok(self.budget, now, self.ep.reserve_fraction, urgent=True)
        for step in range(n):
            i = (k + step) % n
            lm = self.lms[i]
            if not open_:
                # detect_events would bail out on the same check
                if lm.ball.confidence >= self.ep.theta_lost:
                    self.states[i].ball_confident = True
                if self.states[i].last_role is None and self.roles[i] is not None:
                    self.states[i].last_role = self.roles[i]
                continue
            published = self._tlm(self.views[i][i], now)
            if self.predict_poses and self.dwms[i] is not None:
                published = LocalModel(self.dwms[i].agents[i][1], published.ball, published.obstacles,
                                       published.timestamp, published.next_track_id)
            events = detect_events(lm, self.dwms[i], self.states[i], self.budget, i, self.roles[i],
                                   self.ep, published)
            if lm.ball.confidence >= self.ep.theta_lost:
                self.states[i].ball_confident = True
            if events:
                self._send(i, events, now)
            if self.states[i].last_role is None and self.roles[i] is not None:
                self.states[i].last_role = self.roles[i]

    def _queue(self, r: int, e: Event):
        self.pending[r].append((e.timestamp + self.apply_delay, e))

    def _deliver(self, now: float):
        for r, packet in self.channel.step(now):
            self._queue(r, decode_packet(packet))
        for r in range(self.n):
            q = self.pending[r]
            if not q:
                continue
            keep = []
            for due, e in q:
                if due <= now + 1e-9:
                    if e.timestamp >= self.views[r][e.sender].timestamp:
                        self.views[r][e.sender] = e
                else:
                    keep.append((due, e))
            self.pending[r] = keep

    def _diagram(self, dwm: DistributedWorldModel):
        key = dwm.obstacles
        hit = self._diagram_cache.get(key, _MISSING)
        if hit is _MISSING:
            hit = build_diagram(dwm.obstacles, self.cc)
            if len(self._diagram_cache) > 256:
                self._diagram_cache.clear()
            self._diagram_cache[key] = hit
        return hit

    def _coordinate_view(self, i: int, now: float):
        dwm = self._fuse_view(i, now)
        diagram = self._diagram(dwm) if self.cc.diagram != "none" else None
        asg = coordinate(dwm, self.tasks, self.cc, diagram)
        if self.predict_poses:
            stamps = [e.timestamp for e in self.views[i]]
            dwm = propagate_poses(dwm, asg, stamps, self.striker, self.wp.agent_speed)
            asg = coordinate(dwm, self.tasks, self.cc, diagram)
        return dwm, asg

    def _decide(self, now: float):
        cache: dict = {}
        for i in range(self.n):
            key = tuple(e.timestamp for e in self.views[i])
            hit = cache.get(key)
            if hit is None:
                hit = self._coordinate_view(i, now)
                cache[key] = hit
            self.dwms[i], self.assignments[i] = hit
            role = hit[1].role_of(i)
            if self.roles[i] is not None and role != self.roles[i]:
                self.switches += 1
            self.roles[i] = role
            self.states[i].note_role(role, now)

    def _actuate(self):
        agents = []
        theta = self.ep.theta_lost
        for i, a in enumerate(self.gt.agents):
            lm = self.lms[i]
            own_ball = lm.ball.position if lm.ball.confidence >= theta else None
            role = self.roles[i]
            asg = self.assignments[i]
            if role == self.striker:
                target = own_ball if own_ball is not None else self.dwms[i].ball.position
            else:
                target = asg.targets.get(role) if asg is not None else None
            agents.append(AgentTruth(a.pose, role, target, own_ball, a.kick_ready))
        self.gt = replace(self.gt, agents=tuple(agents))

    def _setup(self):
        self.every = max(1, int(round(self.c.coordination.decision_period / self.dt)))
        self.table = np.full((self.c.ticks, self.n), -1, dtype=np.int16)
        self.k = 0
        self._decide(0.0)
        self._actuate()

    def advance(self, until: float) -> None:
        """Simulate ticks up to sim time ``until`` (capped at the match end)."""
        if not hasattr(self, "table"):
            self._setup()
        last = min(self.c.ticks, int(math.floor(until / self.dt + 1e-9)))
        for k in range(self.k + 1, last + 1):
            now = k * self.dt
            self.gt = step_world(self.gt, self.dt, self.world_rng, self.wp)
            for i, obs in enumerate(sense_team(self.gt, self.rows, self.sense_rng, self.sp, self.wp.bounds)):
                self.lms[i] = restamp(update_local(self.lms[i], obs, self.dt, self.wmp), now)
            self._communicate(k, now)
            self._deliver(now)
            if k % self.every == 0:
                self._decide(now)
            self._actuate()
            self.table[k - 1] = [self.role_index.get(r, -1) if r is not None else -1 for r in self.roles]
            self.k = k

    @property
    def time(self) -> float:
        return self.k * self.dt

    def run(self) -> MetricsRecord:
        c = self.c
        self.advance(c.match_length)
        table = self.table
        roles = tuple(t.id for t in c.tasks)
        sec, rate = role_overlap_metric(table, self.dt, len(roles), c.overlap_threshold, c.match_length)
        return MetricsRecord(
            mode=self.mode.value,
            seed=self.seed,
            match_length=c.match_length,
            roles=roles,
            overlap_seconds=tuple(round(float(s), 9) for s in sec),
            overlap_per_minute=tuple(round(float(r), 9) for r in rate),
            packets_sent=self.budget.consumed,
            budget=c.budget,
            copies_delivered=self.channel.copies_delivered,
            copies_dropped=self.channel.copies_dropped,
            assignment_switches=self.switches,
            events_by_kind=tuple(sorted(self.events_by_kind.items())),
            score=self.gt.score,
            role_table=table,
            trace=tuple(self.channel.trace),
        )


def run_match(config: ScenarioConfig, mode, seed: int, record_trace: bool = False) -> MetricsRecord:
    """Simulate one match and return its metrics."""
    return Match(config, mode, seed, record_trace).run()


# --------------------------------------------------------------------------
# Mode comparison


@dataclass(frozen=True)
class SummaryRow:
    role: str
    mode: str
    mean: float
    std: float
    n: int


@dataclass(frozen=True)
class CompareSummary:
    rows: tuple[SummaryRow, ...]
    striker_role: str
    striker_reduction: float  # EventELVD vs EventBased, fraction
    records: tuple[MetricsRecord, ...] = field(compare=False, repr=False, default=())

    def mean(self, mode, role: Optional[str] = None) -> float:
        mode = ExperimentMode.parse(mode).value
        role = role or self.striker_role
        for r in self.rows:
            if r.mode == mode and r.role == role:
                return r.mean
        raise KeyError((mode, role))


def _run_job(job):
    config, mode, seed = job
    rec = run_match(config, mode, seed)
    return replace(rec, role_table=None)


def compare_modes(config: ScenarioConfig, seeds: Sequence[int], modes: Sequence = ALL_MODES,
                  progress=None, workers: int = 1) -> CompareSummary:
    """Run every mode on every seed and summarize overlap rates per role.

    With ``workers > 1`` matches run in worker processes; each match owns its
    state, and records are merged in (seed, mode) order either way.
    """
    if not seeds:
        raise ConfigurationError("compare_modes needs at least one seed")
    modes = [ExperimentMode.parse(m) for m in modes]
    jobs = [(config, m, int(seed)) for seed in sorted(seeds) for m in modes]
    records = []
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            for rec in pool.map(_run_job, jobs):
                records.append(rec)
                if progress is not None:
                    progress(rec)
    else:
        for job in jobs:
            rec = _run_job(job)
            records.append(rec)
            if progress is not None:
                progress(rec)
    roles = tuple(t.id for t in config.tasks)
    rows = []
    for role_k, role in enumerate(roles):
        for m in modes:
            vals = np.array([r.overlap_per_minute[role_k] for r in records if r.mode == m.value])
            rows.append(SummaryRow(role, m.value, float(vals.mean()), float(vals.std()), len(vals)))
    striker = min(config.tasks, key=lambda t: t.priority).id
    reduction = 0.0
    names = {m.value for m in modes}
    if {"EventBased", "EventELVD"} <= names:
        base = next(r.mean for r in rows if r.role == striker and r.mode == "EventBased")
        elvd = next(r.mean for r in rows if r.role == striker and r.mode == "EventELVD")
        reduction = (base - elvd) / base if base > 0 else 0.0
    return CompareSummary(tuple(rows), striker, reduction, tuple(records))
