import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

FIELD = (-4.5, -3.0, 4.5, 3.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def field():
    from mrcoord.geometry import BoundingBox

    return BoundingBox.from_extent(*FIELD)


def random_sites(rng, n, margin=0.05):
    x0, y0, x1, y1 = FIELD
    return np.column_stack([rng.uniform(x0 + margin, x1 - margin, n), rng.uniform(y0 + margin, y1 - margin, n)])


def grid_samples(bounds, n=200):
    xs = np.linspace(bounds.min.x, bounds.max.x, n)
    ys = np.linspace(bounds.min.y, bounds.max.y, n)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def nearest_with_margin(xy, sites):
    """Brute-force nearest site index and the gap to the runner-up."""
    d = np.hypot(xy[:, None, 0] - sites[None, :, 0], xy[:, None, 1] - sites[None, :, 1])
    order = np.argsort(d, axis=1)
    best = order[:, 0]
    rows = np.arange(len(xy))
    gap = d[rows, order[:, 1]] - d[rows, best]
    return best, gap


def random_event(rng, max_obstacles=9):
    """An event with every field inside the codec's representable range."""
    from mrcoord.geometry import Point2
    from mrcoord.world_model import AgentPose, Event, EventKind, ModelSummary, ObstacleEstimate

    obs = []
    for i in range(int(rng.integers(0, max_obstacles + 1))):
        a = rng.uniform(-np.pi, np.pi)
        obs.append(ObstacleEstimate(
            centroid=Point2(*rng.uniform(-20, 20, 2)),
            velocity=tuple(rng.uniform(-1, 1) * np.array([np.cos(a), np.sin(a)])),
            axis_direction=(float(np.cos(a)), float(np.sin(a))),
            interest_length=float(rng.uniform(0, 5)),
            confidence=float(rng.uniform(0, 1)),
            id=i,
        ))
    summary = ModelSummary(
        pose=AgentPose(Point2(*rng.uniform(-20, 20, 2)), float(rng.uniform(-np.pi, np.pi))),
        ball_position=Point2(*rng.uniform(-20, 20, 2)),
        ball_velocity=tuple(rng.uniform(-10, 10, 2)),
        ball_confidence=float(rng.uniform(0, 1)),
        obstacles=tuple(obs),
    )
    kind = EventKind(int(rng.integers(0, len(EventKind))))
    return Event(kind, int(rng.integers(0, 7)), round(float(rng.uniform(0, 3600)), 3), summary)


def angle_error(a, b):
    d = (a - b) % (2 * np.pi)
    return min(d, 2 * np.pi - d)


def roundtrip_errors(e, d):
    """Largest position, angle and confidence error between an event and its decoded copy."""
    s, t = e.payload, d.payload
    pos = [s.pose.position[k] - t.pose.position[k] for k in (0, 1)]
    pos += [s.ball_position[k] - t.ball_position[k] for k in (0, 1)]
    pos += [s.ball_velocity[k] - t.ball_velocity[k] for k in (0, 1)]
    ang = [angle_error(s.pose.heading, t.pose.heading)]
    conf = [s.ball_confidence - t.ball_confidence]
    for o, p in zip(s.obstacles, t.obstacles):
        pos += [o.centroid[k] - p.centroid[k] for k in (0, 1)] + [o.interest_length - p.interest_length]
        ang.append(angle_error(np.arctan2(o.axis_direction[1], o.axis_direction[0]),
                               np.arctan2(p.axis_direction[1], p.axis_direction[0])))
        conf.append(o.confidence - p.confidence)
    return max(map(abs, pos)), max(ang), max(map(abs, conf))


# acceptance criteria report: one line per criterion in the terminal summary
ACCEPTANCE: dict = {}


def report(number: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[number] = (bool(ok), detail)
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
