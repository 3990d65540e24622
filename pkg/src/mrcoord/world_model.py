"""Per-agent beliefs: local model, teammate models, team fusion and events.

All transitions are pure: they take a model value and return a new one.
Prediction is time-consistent (splitting an interval in two gives the same
result as one step), which lets callers propagate teammate models lazily.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Hashable, Optional, Sequence

import numpy as np

from .errors import ContractError, RoutingError
from .geometry import Point2
from .kernels import eps_components

Cov = tuple[tuple[float, float], tuple[float, float]]


@dataclass(frozen=True)
class WorldModelParams:
    friction: float = 0.4  # m/s^2
    process_noise: float = 0.05  # m^2/s
    confidence_decay: float = 0.1  # 1/s
    gate_radius: float = 1.0
    dbscan_eps: float = 0.8
    dbscan_min_pts: int = 1
    outlier_sigma: float = 3.0
    obs_sigma: float = 0.15
    obs_sigma_per_m: float = 0.05
    velocity_time_constant: float = 0.5
    max_velocity_gap: float = 1.0
    refresh_rate: float = 0.5
    obstacle_gain: float = 0.5
    initial_track_confidence: float = 0.5
    min_track_confidence: float = 0.2
    miss_decay: float = 2.0  # 1/s, extra decay of tracks that should be visible but are not
    default_interest_length: float = 1.5
    asymmetric_obstacles: bool = True
    summary_covariance: float = 0.04  # m^2, assumed for estimates received over the wire


@dataclass(frozen=True)
class EventParams:
    theta_lost: float = 0.3
    d_pose: float = 0.5
    r_alert: float = 2.0
    cooldown: float = 1.0
    reserve_fraction: float = 0.1
    max_obstacles: int = 9
    d_ball: float = 1.0
    d_obstacle: float = 0.5
    commit_time: float = 1.0  # a new role must be held this long before it is announced


@dataclass(frozen=True)
class AgentPose:
    position: Point2
    heading: float = 0.0
    confidence: float = 1.0


@dataclass(frozen=True)
class BallEstimate:
    position: Point2
    velocity: tuple[float, float] = (0.0, 0.0)
    covariance: Cov = ((1.0, 0.0), (0.0, 1.0))
    confidence: float = 0.0
    last_observed: float = -math.inf
    # filtered position at ``last_observed``; basis for finite-difference velocity
    observed_position: Optional[Point2] = None


@dataclass(frozen=True)
class ObstacleEstimate:
    centroid: Point2
    velocity: tuple[float, float] = (0.0, 0.0)
    axis_direction: tuple[float, float] = (1.0, 0.0)
    interest_length: float = 0.0
    confidence: float = 0.5
    last_observed: float = 0.0
    id: Hashable = 0
    observed_centroid: Optional[Point2] = None


@dataclass(frozen=True)
class LocalModel:
    pose: AgentPose
    ball: BallEstimate
    obstacles: tuple[ObstacleEstimate, ...] = ()
    timestamp: float = 0.0
    next_track_id: int = 0


@dataclass(frozen=True)
class TeammateLocalModel:
    teammate_id: Hashable
    model: LocalModel
    last_event_time: float = -math.inf


@dataclass(frozen=True)
class DistributedWorldModel:
    ball: BallEstimate
    obstacles: tuple[ObstacleEstimate, ...]
    agents: tuple[tuple[Hashable, AgentPose], ...]
    timestamp: float

    def agent_ids(self) -> list:
        return [a for a, _ in self.agents]


@dataclass(frozen=True)
class ObservationSet:
    self_pose: AgentPose
    ball: Optional[Point2] = None
    obstacles: tuple[tuple[Point2, Optional[tuple[float, float]]], ...] = ()
    # sensor footprint (range m, field of view rad); enables negative evidence
    footprint: Optional[tuple[float, float]] = None

    def covers(self, p) -> bool:
        if self.footprint is None:
            return False
        rng, fov = self.footprint
        x, y = self.self_pose.position
        dx, dy = p[0] - x, p[1] - y
        d = math.hypot(dx, dy)
        if d > rng:
            return False
        if d < 1e-9:
            return True
        off = math.atan2(dy, dx) - self.self_pose.heading
        return abs(math.atan2(math.sin(off), math.cos(off))) <= 0.5 * fov


class EventKind(enum.IntEnum):
    PERIODIC_SUMMARY = 0
    BALL_FOUND = 1
    BALL_LOST = 2
    SELF_STATE_CHANGED = 3
    ROLE_COMMITMENT = 4
    OBSTACLE_ALERT = 5
    BALL_MOVED = 6


@dataclass(frozen=True)
class ModelSummary:
    pose: AgentPose
    ball_position: Point2
    ball_velocity: tuple[float, float]
    ball_confidence: float
    obstacles: tuple[ObstacleEstimate, ...] = ()


@dataclass(frozen=True)
class Event:
    kind: EventKind
    sender: int
    timestamp: float
    payload: ModelSummary


# --------------------------------------------------------------------------
# Prediction


def _unit(v) -> tuple[float, float]:
    n = math.hypot(v[0], v[1])
    if n == 0.0:
        return (1.0, 0.0)
    return (v[0] / n, v[1] / n)


def roll_ball(position, velocity, dt: float, friction: float):
    """Uniform-deceleration rolling: speed drops by ``friction * dt`` until rest."""
    vx, vy = velocity
    speed = math.hypot(vx, vy)
    if speed == 0.0:
        return Point2(position[0], position[1]), (0.0, 0.0)
    if dt <= 0.0:
        return Point2(position[0], position[1]), (vx, vy)
    if friction <= 0.0:
        return Point2(position[0] + vx * dt, position[1] + vy * dt), (vx, vy)
    t_stop = speed / friction
    t = min(dt, t_stop)
    travel = speed * t - 0.5 * friction * t * t
    ux, uy = vx / speed, vy / speed
    new_speed = max(0.0, speed - friction * dt)
    return (
        Point2(position[0] + ux * travel, position[1] + uy * travel),
        (ux * new_speed, uy * new_speed),
    )


def _predict_ball(b: BallEstimate, dt: float, p: WorldModelParams) -> BallEstimate:
    pos, vel = roll_ball(b.position, b.velocity, dt, p.friction)
    q = p.process_noise * dt
    (a, c), (_, d) = b.covariance
    return BallEstimate(pos, vel, ((a + q, c), (c, d + q)), b.confidence * math.exp(-p.confidence_decay * dt),
                        b.last_observed, b.observed_position)


def _predict_obstacle(o: ObstacleEstimate, now: float, decay: float) -> ObstacleEstimate:
    conf = o.confidence * decay
    centroid = o.centroid
    c0 = o.observed_centroid
    if c0 is not None and o.interest_length > 0.0:
        ax, ay = o.axis_direction
        along = o.velocity[0] * ax + o.velocity[1] * ay
        # displacement from the last observed centroid, confined to the AM segment
        s = min(max(along * (now - o.last_observed), 0.0), o.interest_length)
        centroid = Point2(c0.x + s * ax, c0.y + s * ay)
    return ObstacleEstimate(centroid, o.velocity, o.axis_direction, o.interest_length, conf,
                            o.last_observed, o.id, c0)


def predict_local(prev: LocalModel, dt: float, params: WorldModelParams = WorldModelParams()) -> LocalModel:
    """Propagate a local model by ``dt`` seconds without observations."""
    if not dt > 0.0:
        raise ContractError(f"dt must be > 0, got {dt}")
    now = prev.timestamp + dt
    decay = math.exp(-params.confidence_decay * dt)
    pose = prev.pose
    return LocalModel(
        AgentPose(pose.position, pose.heading, pose.confidence * decay),
        _predict_ball(prev.ball, dt, params),
        tuple(_predict_obstacle(o, now, decay) for o in prev.obstacles),
        now,
        prev.next_track_id,
    )


def restamp(model: LocalModel, now: float) -> LocalModel:
    return LocalModel(model.pose, model.ball, model.obstacles, now, model.next_track_id)


def predict_to(model: LocalModel, now: float, params: WorldModelParams = WorldModelParams()) -> LocalModel:
    """Like :func:`predict_local` but targeting an absolute time; no-op if not ahead."""
    dt = now - model.timestamp
    if dt <= 1e-12:
        return model
    return predict_local(model, dt, params)


# --------------------------------------------------------------------------
# Local update (Psi)


def _kalman_position(b: BallEstimate, z: Point2, r: float) -> BallEstimate:
    (a, c), (_, d) = b.covariance
    sa, sc, sd = a + r, c, d + r
    det = sa * sd - sc * sc
    ia, ic, id_ = sd / det, -sc / det, sa / det
    # K = P S^-1
    k11 = a * ia + c * ic
    k12 = a * ic + c * id_
    k21 = c * ia + d * ic
    k22 = c * ic + d * id_
    ex, ey = z[0] - b.position[0], z[1] - b.position[1]
    pos = Point2(b.position[0] + k11 * ex + k12 * ey, b.position[1] + k21 * ex + k22 * ey)
    # P+ = (I - K) P
    na = (1 - k11) * a - k12 * c
    nc = (1 - k11) * c - k12 * d
    nd = -k21 * c + (1 - k22) * d
    return BallEstimate(pos, b.velocity, ((na, nc), (nc, nd)), b.confidence, b.last_observed, b.observed_position)


def update_local(prev: LocalModel, observations: Optional[ObservationSet], dt: float,
                 params: WorldModelParams = WorldModelParams()) -> LocalModel:
    """One perception step: predict, then correct with this tick's observations."""
    lm = predict_local(prev, dt, params)
    if observations is None:
        return lm
    now = lm.timestamp
    pose = observations.self_pose
    ball = lm.ball
    if observations.ball is not None:
        z = observations.ball
        dist = math.hypot(z[0] - pose.position[0], z[1] - pose.position[1])
        sigma = params.obs_sigma + params.obs_sigma_per_m * dist
        fresh = ball.confidence < params.min_track_confidence or ball.observed_position is None
        if fresh:
            ball = BallEstimate(
                position=Point2(float(z[0]), float(z[1])),
                velocity=(0.0, 0.0),
                covariance=((sigma * sigma, 0.0), (0.0, sigma * sigma)),
                confidence=params.initial_track_confidence,
                last_observed=now,
                observed_position=Point2(float(z[0]), float(z[1])),
            )
        else:
            ball = _kalman_position(ball, Point2(float(z[0]), float(z[1])), sigma * sigma)
            gap = now - ball.last_observed
            vel = ball.velocity
            if 0.0 < gap <= params.max_velocity_gap:
                op = ball.observed_position
                fd = ((ball.position[0] - op[0]) / gap, (ball.position[1] - op[1]) / gap)
                g = min(1.0, gap / params.velocity_time_constant)
                vel = (vel[0] + g * (fd[0] - vel[0]), vel[1] + g * (fd[1] - vel[1]))
            elif gap > params.max_velocity_gap:
                vel = (0.0, 0.0)
            ball = BallEstimate(ball.position, vel, ball.covariance,
                                ball.confidence + (1.0 - ball.confidence) * params.refresh_rate,
                                now, ball.position)

    obstacles, next_id = _track_obstacles(lm.obstacles, observations, now, lm.next_track_id, params, dt)
    return LocalModel(pose, ball, obstacles, now, next_id)


def _track_obstacles(tracks, observations: ObservationSet, now, next_id, p: WorldModelParams, dt: float):
    obs = observations.obstacles
    gate = p.gate_radius
    matched_t: dict[int, int] = {}
    if tracks and obs:
        pairs = []
        for i, t in enumerate(tracks):
            tx, ty = t.centroid
            for j, (z, _) in enumerate(obs):
                d = math.hypot(z[0] - tx, z[1] - ty)
                if d <= gate:
                    pairs.append((d, i, j))
        if pairs:
            pairs.sort()
            used_o: set[int] = set()
            for d, i, j in pairs:
                if i in matched_t or j in used_o:
                    continue
                matched_t[i] = j
                used_o.add(j)
    out = []
    k = p.obstacle_gain
    refresh = p.refresh_rate
    min_conf = p.min_track_confidence
    asym_model = p.asymmetric_obstacles
    miss = math.exp(-p.miss_decay * dt) if p.miss_decay > 0.0 else 1.0
    fp = observations.footprint if miss < 1.0 else None
    if fp is not None:
        rng, fov = fp
        sx, sy = observations.self_pose.position
        hx, hy = math.cos(observations.self_pose.heading), math.sin(observations.self_pose.heading)
        cos_half = math.cos(0.5 * fov)
    for i, t in enumerate(tracks):
        j = matched_t.get(i)
        if j is None:
            conf = t.confidence
            if fp is not None:
                dx, dy = t.centroid[0] - sx, t.centroid[1] - sy
                d = math.hypot(dx, dy)
                if d <= rng and (d < 1e-9 or dx * hx + dy * hy >= d * cos_half):
                    conf *= miss
                    t = ObstacleEstimate(t.centroid, t.velocity, t.axis_direction, t.interest_length,
                                         conf, t.last_observed, t.id, t.observed_centroid)
            if conf >= min_conf:
                out.append(t)
            continue
        z, axis = obs[j]
        c = Point2(t.centroid[0] + k * (z[0] - t.centroid[0]), t.centroid[1] + k * (z[1] - t.centroid[1]))
        gap = now - t.last_observed
        vel = t.velocity
        oc = t.observed_centroid
        if 0.0 < gap <= p.max_velocity_gap and oc is not None:
            g = min(1.0, gap / p.velocity_time_constant)
            vel = (vel[0] + g * ((c[0] - oc[0]) / gap - vel[0]), vel[1] + g * ((c[1] - oc[1]) / gap - vel[1]))
        ax = t.axis_direction
        if asym_model and axis is not None:
            ax = _unit((ax[0] + k * (axis[0] - ax[0]), ax[1] + k * (axis[1] - ax[1])))
        out.append(ObstacleEstimate(c, vel, ax, t.interest_length,
                                    t.confidence + (1.0 - t.confidence) * refresh, now, t.id, c))
    used = set(matched_t.values())
    for j, (z, axis) in enumerate(obs):
        if j in used:
            continue
        asym = asym_model and axis is not None
        zp = Point2(float(z[0]), float(z[1]))
        out.append(ObstacleEstimate(zp, (0.0, 0.0), _unit(axis) if asym else (1.0, 0.0),
                                    p.default_interest_length if asym else 0.0,
                                    p.initial_track_confidence, now, next_id, zp))
        next_id += 1
    return tuple(out), next_id


# --------------------------------------------------------------------------
# Teammate models (delta)


def summarize(lm: LocalModel, max_obstacles: int = 9) -> ModelSummary:
    obs = sorted(lm.obstacles, key=lambda o: (-o.confidence, str(o.id)))[:max_obstacles]
    return ModelSummary(
        pose=lm.pose,
        ball_position=lm.ball.position,
        ball_velocity=lm.ball.velocity,
        ball_confidence=lm.ball.confidence,
        obstacles=tuple(obs),
    )


def model_from_summary(s: ModelSummary, timestamp: float, params: WorldModelParams = WorldModelParams()) -> LocalModel:
    """Reconstruct a local model from a wire summary taken at ``timestamp``."""
    cv = params.summary_covariance
    ball = BallEstimate(
        position=Point2(*s.ball_position),
        velocity=tuple(s.ball_velocity),
        covariance=((cv, 0.0), (0.0, cv)),
        confidence=s.ball_confidence,
        last_observed=timestamp,
        observed_position=Point2(*s.ball_position),
    )
    obstacles = tuple(
        ObstacleEstimate(o.centroid, o.velocity, o.axis_direction, o.interest_length, o.confidence,
                         timestamp, i, o.centroid)
        for i, o in enumerate(s.obstacles)
    )
    return LocalModel(pose=s.pose, ball=ball, obstacles=obstacles, timestamp=timestamp,
                      next_track_id=len(obstacles))


def update_teammate_model(prev: TeammateLocalModel, event: Optional[Event], dt: float,
                          params: WorldModelParams = WorldModelParams()) -> TeammateLocalModel:
    """Merge a received event (if any) into a teammate model and predict to now."""
    if not dt > 0.0:
        raise ContractError(f"dt must be > 0, got {dt}")
    now = prev.model.timestamp + dt
    if event is None:
        return TeammateLocalModel(prev.teammate_id, predict_local(prev.model, dt, params), prev.last_event_time)
    if event.sender != prev.teammate_id:
        raise RoutingError(f"event from {event.sender} applied to model of {prev.teammate_id}")
    model = model_from_summary(event.payload, event.timestamp, params)
    model = predict_to(model, now, params)
    model = restamp(model, now)
    return TeammateLocalModel(prev.teammate_id, model, event.timestamp)


def apply_events(prev: TeammateLocalModel, events: Sequence[Event], now: float,
                 params: WorldModelParams = WorldModelParams()) -> TeammateLocalModel:
    """Apply the newest of ``events`` (if any) and bring the model to ``now``."""
    latest = None
    for e in events:
        if e.sender != prev.teammate_id:
            raise RoutingError(f"event from {e.sender} applied to model of {prev.teammate_id}")
        if e.timestamp >= prev.last_event_time and (latest is None or e.timestamp >= latest.timestamp):
            latest = e
    dt = now - prev.model.timestamp
    if latest is None:
        if dt <= 1e-12:
            return prev
        return TeammateLocalModel(prev.teammate_id, predict_local(prev.model, dt, params), prev.last_event_time)
    if dt <= 1e-12:
        model = predict_to(model_from_summary(latest.payload, latest.timestamp, params), now, params)
        return TeammateLocalModel(prev.teammate_id, restamp(model, now), latest.timestamp)
    return update_teammate_model(prev, latest, dt, params)


# --------------------------------------------------------------------------
# DBSCAN and fusion (f)


def dbscan(points, eps: float, min_pts: int = 1) -> list[list[int]]:
    """Density-based clustering; returns clusters as sorted index lists.

    Noise points (possible only for ``min_pts > 1``) are left out. Clusters are
    ordered by their smallest member index.
    """
    if not eps > 0.0 or min_pts < 1:
        raise ContractError("eps must be > 0 and min_pts >= 1")
    xy = np.asarray([(p[0], p[1]) for p in points], dtype=np.float64).reshape(-1, 2)
    n = len(xy)
    if n == 0:
        return []
    if min_pts == 1:
        # every point is core: clusters are the eps-graph components
        groups: dict[int, list[int]] = {}
        for i, lab in enumerate(eps_components(xy, eps).tolist()):
            groups.setdefault(lab, []).append(i)
        return sorted(groups.values(), key=lambda c: c[0])
    d2 = ((xy[:, None, :] - xy[None, :, :]) ** 2).sum(-1)
    nbr = d2 <= eps * eps
    core = nbr.sum(axis=1) >= min_pts
    label = np.full(n, -1, dtype=np.int64)
    clusters: list[list[int]] = []
    for i in range(n):
        if label[i] >= 0 or not core[i]:
            continue
        cid = len(clusters)
        label[i] = cid
        members = [i]
        stack = [i]
        while stack:
            q = stack.pop()
            if not core[q]:
                continue
            for r in np.flatnonzero(nbr[q]):
                if label[r] < 0:
                    label[r] = cid
                    members.append(int(r))
                    stack.append(int(r))
        clusters.append(sorted(members))
    clusters.sort(key=lambda c: c[0])
    return clusters


def _merge_obstacle_cluster(members: Sequence[ObstacleEstimate], cid: int) -> ObstacleEstimate:
    if len(members) == 1:
        o = members[0]
        return ObstacleEstimate(o.centroid, o.velocity, o.axis_direction, o.interest_length, o.confidence,
                                o.last_observed, cid, o.centroid)
    ws = cx = cy = vx = vy = ax = ay = L = 0.0
    for o in members:
        w = max(o.confidence, 1e-12)
        ws += w
        cx += w * o.centroid[0]
        cy += w * o.centroid[1]
        vx += w * o.velocity[0]
        vy += w * o.velocity[1]
        ax += w * o.axis_direction[0]
        ay += w * o.axis_direction[1]
        L += w * o.interest_length
    if math.hypot(ax, ay) < 1e-12:
        ax, ay = max(members, key=lambda o: o.confidence).axis_direction
    c = Point2(cx / ws, cy / ws)
    return ObstacleEstimate(
        centroid=c,
        velocity=(vx / ws, vy / ws),
        axis_direction=_unit((ax, ay)),
        interest_length=L / ws,
        confidence=max(o.confidence for o in members),
        last_observed=max(o.last_observed for o in members),
        id=cid,
        observed_centroid=c,
    )


def cluster_obstacles(obstacles: Sequence[ObstacleEstimate], eps: float, min_pts: int = 1):
    """Pool and merge obstacles until no two fused centroids lie within ``eps``."""
    cur = list(obstacles)
    while True:
        clusters = dbscan([o.centroid for o in cur], eps, min_pts)
        merged = [_merge_obstacle_cluster([cur[i] for i in c], k) for k, c in enumerate(clusters)]
        if len(merged) == len(cur):
            return tuple(merged)
        cur = merged


def fuse_ball(estimates: Sequence[BallEstimate], sigma_k: float = 3.0) -> BallEstimate:
    """Outlier-rejecting confidence-weighted average of ball estimates."""
    est = [b for b in estimates if b.confidence > 0.0]
    if not est:
        return max(estimates, key=lambda b: b.last_observed) if estimates else BallEstimate(Point2(0.0, 0.0))
    w = np.array([b.confidence for b in est])
    xy = np.array([b.position for b in est])
    mean = (w @ xy) / w.sum()
    dev = np.hypot(*(xy - mean).T)
    set_var = float(w @ dev ** 2) / float(w.sum())
    own_var = np.array([0.5 * (b.covariance[0][0] + b.covariance[1][1]) for b in est])
    keep = dev <= sigma_k * np.sqrt(set_var + own_var) + 1e-12
    if not keep.any():
        keep[int(np.argmax(w))] = True
    w, xy = w[keep], xy[keep]
    kept = [b for b, k in zip(est, keep) if k]
    ws = float(w.sum())
    pos = (w @ xy) / ws
    vel = (w @ np.array([b.velocity for b in kept])) / ws
    cov = sum(wi * np.array(b.covariance) for wi, b in zip(w, kept)) / ws
    return BallEstimate(
        position=Point2(float(pos[0]), float(pos[1])),
        velocity=(float(vel[0]), float(vel[1])),
        covariance=((float(cov[0, 0]), float(cov[0, 1])), (float(cov[1, 0]), float(cov[1, 1]))),
        confidence=float(max(b.confidence for b in kept)),
        last_observed=max(b.last_observed for b in kept),
        observed_position=Point2(float(pos[0]), float(pos[1])),
    )


def fuse(own: LocalModel, teammates: Sequence[TeammateLocalModel], own_id: Hashable = 0,
         params: WorldModelParams = WorldModelParams()) -> DistributedWorldModel:
    """Combine the own model and teammate models into the team-level estimate.

    Inputs are canonicalized by agent id, so the result does not depend on
    which of the models is the caller's own.
    """
    if own is None:
        raise ContractError("fuse needs at least the own model")
    models = sorted([(own_id, own)] + [(t.teammate_id, t.model) for t in teammates], key=lambda m: str(m[0]))
    ts = {round(m.timestamp, 9) for _, m in models}
    if len(ts) > 1:
        raise ContractError(f"models at different timestamps: {sorted(ts)}")
    pooled = [o for _, m in models for o in m.obstacles]
    obstacles = cluster_obstacles(pooled, params.dbscan_eps, params.dbscan_min_pts) if pooled else ()
    ball = fuse_ball([m.ball for _, m in models], params.outlier_sigma)
    return DistributedWorldModel(
        ball=ball,
        obstacles=obstacles,
        agents=tuple((aid, m.pose) for aid, m in models),
        timestamp=own.timestamp,
    )


def as_local_model(dwm: DistributedWorldModel, pose: Optional[AgentPose] = None) -> LocalModel:
    """View a fused model as a single local model (used to test fusion fixpoints)."""
    if pose is None:
        pose = dwm.agents[0][1] if dwm.agents else AgentPose(Point2(0.0, 0.0))
    return LocalModel(pose=pose, ball=dwm.ball, obstacles=dwm.obstacles, timestamp=dwm.timestamp,
                      next_track_id=len(dwm.obstacles))


# --------------------------------------------------------------------------
# Event detection


@dataclass
class EventState:
    """What an agent last broadcast, per event kind."""

    last_sent: dict = field(default_factory=dict)
    last_pose: Optional[Point2] = None
    last_role: Optional[Hashable] = None
    ball_confident: bool = False
    role: Optional[Hashable] = None  # role currently held
    role_since: float = 0.0

    def note_role(self, role: Optional[Hashable], now: float) -> None:
        """Track when the currently held role was taken."""
        if role != self.role:
            self.role = role
            self.role_since = now

    def record(self, events: Sequence[Event], role: Optional[Hashable] = None):
        """Mark ``events`` as broadcast; one packet covers all of them."""
        for event in events:
            self.last_sent[event.kind] = event.timestamp
            self.last_pose = event.payload.pose.position
            if role is not None:
                self.last_role = role

    def observe(self, lm: LocalModel, params: EventParams, role: Optional[Hashable] = None):
        """Update edge-trigger memory that does not depend on sending."""
        self.ball_confident = lm.ball.confidence >= params.theta_lost
        if self.last_role is None and role is not None:
            self.last_role = role


URGENT = frozenset({EventKind.BALL_FOUND, EventKind.BALL_LOST, EventKind.ROLE_COMMITMENT})


def pacing_ok(budget, now: float, reserve_fraction: float, urgent: bool = True) -> bool:
    """Soft budget gate.

    ``share`` is the pro-rata allowance for the remaining match time. Routine
    events need the remaining budget to cover it; urgent ones may dip into a
    reserve of ``reserve_fraction * share``. Nothing passes once the budget is
    spent.
    """
    remaining = budget.total_budget - budget.consumed
    if remaining <= 0:
        return False
    left = max(budget.match_length - now, 0.0)
    share = budget.total_budget * left / budget.match_length
    floor = (1.0 - reserve_fraction) * share if urgent else share
    return remaining >= floor - 1e-9


def detect_events(lm: LocalModel, dwm: Optional[DistributedWorldModel], state: EventState, budget,
                  sender: int, role: Optional[Hashable] = None,
                  params: EventParams = EventParams(),
                  published: Optional[LocalModel] = None) -> list[Event]:
    """Events this agent would broadcast now, most urgent first.

    ``published`` is what teammates currently believe about this agent (its
    last broadcast, predicted to now); ball and obstacle triggers compare the
    own model against it. Does not touch ``state``; the caller records what
    it actually sent.
    """
    now = lm.timestamp
    if not pacing_ok(budget, now, params.reserve_fraction, urgent=True):
        return []

    def cooled(kind) -> bool:
        t = state.last_sent.get(kind)
        return t is None or now - t >= params.cooldown

    kinds: list[EventKind] = []
    ball = lm.ball
    sees_ball = ball.last_observed == now
    confident = ball.confidence >= params.theta_lost
    team_conf = dwm.ball.confidence if dwm is not None else 0.0
    if sees_ball and team_conf < params.theta_lost:
        kinds.append(EventKind.BALL_FOUND)
    if state.ball_confident and not confident:
        kinds.append(EventKind.BALL_LOST)
    if sees_ball and confident and published is not None:
        pb = published.ball
        if pb.confidence < params.theta_lost or \
                math.hypot(ball.position[0] - pb.position[0], ball.position[1] - pb.position[1]) > params.d_ball:
            kinds.append(EventKind.BALL_MOVED)
    p = lm.pose.position
    ref = published.pose.position if published is not None else state.last_pose
    if ref is None or math.hypot(p[0] - ref[0], p[1] - ref[1]) > params.d_pose:
        kinds.append(EventKind.SELF_STATE_CHANGED)
    held = now - state.role_since if role == state.role else 0.0
    if role is not None and state.last_role is not None and role != state.last_role \
            and held >= params.commit_time - 1e-9:
        kinds.append(EventKind.ROLE_COMMITMENT)
    if confident:
        bx, by = ball.position
        known = published.obstacles if published is not None else ()
        for o in lm.obstacles:
            if o.last_observed != now or math.hypot(o.centroid[0] - bx, o.centroid[1] - by) > params.r_alert:
                continue
            if all(math.hypot(o.centroid[0] - k.centroid[0], o.centroid[1] - k.centroid[1]) > params.d_obstacle
                   for k in known):
                kinds.append(EventKind.OBSTACLE_ALERT)
                break
    kinds = [k for k in kinds if cooled(k)]
    if not any(k in URGENT for k in kinds) and not pacing_ok(budget, now, params.reserve_fraction, urgent=False):
        return []
    if not kinds:
        return []
    kinds.sort(key=_URGENCY.index)
    summary = summarize(lm, params.max_obstacles)
    return [Event(k, sender, now, summary) for k in kinds]


_URGENCY = [
    EventKind.BALL_FOUND,
    EventKind.BALL_LOST,
    EventKind.ROLE_COMMITMENT,
    EventKind.BALL_MOVED,
    EventKind.OBSTACLE_ALERT,
    EventKind.SELF_STATE_CHANGED,
    EventKind.PERIODIC_SUMMARY,
]
