"""Scenario configuration: YAML in, validated frozen dataclasses out.

Every tunable has a default, so an empty file is a complete scenario. Unknown
keys are rejected with their line number.
"""
from __future__ import annotations

import collections.abc
import dataclasses
import hashlib
import json
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

from .assignment import ContextMode, ContextParams, DEFAULT_CONTEXTS
from .errors import ConfigurationError
from .geometry import BoundingBox, Point2
from .world_model import EventParams, WorldModelParams

MODES = ("FixedRate", "EventBased", "EventVD", "EventELVD")


@dataclass(frozen=True)
class FieldConfig:
    x_min: float = -4.5
    y_min: float = -3.0
    x_max: float = 4.5
    y_max: float = 3.0

    @property
    def bounds(self) -> BoundingBox:
        return BoundingBox.from_extent(self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class TaskConfig:
    id: str
    kind: str
    target: tuple[float, float]
    priority: int
    ball_gain: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class OpponentConfig:
    anchor: tuple[float, float]
    axis_deg: float = 0.0
    interest_length: float = 1.5
    amplitude: float = 1.2
    period: float = 8.0


@dataclass(frozen=True)
class ChannelSection:
    loss: float = 0.1
    latency_mean: float = 0.1
    latency_jitter: float = 0.05


@dataclass(frozen=True)
class SensingConfig:
    range: float = 6.0
    fov_deg: float = 120.0
    sigma_obs: float = 0.15
    sigma_growth: float = 1.0 / 3.0  # relative increase of sigma per metre
    p_fp: float = 0.02
    p_miss: float = 0.1
    sigma_pose: float = 0.05
    sigma_axis_deg: float = 10.0


@dataclass(frozen=True)
class DynamicsConfig:
    agent_speed: float = 0.5
    stop_radius: float = 0.3
    kick_radius: float = 0.25
    kick_speed_min: float = 1.0
    kick_speed_max: float = 2.0
    kick_noise_deg: float = 20.0
    kick_cooldown: float = 1.0
    restitution: float = 0.8
    ball_max_speed: float = 3.0
    goal_half_width: float = 0.75
    scan_rate: float = 1.0


def _default_contexts() -> dict:
    return {m.value: p for m, p in DEFAULT_CONTEXTS.items()}


@dataclass(frozen=True)
class CoordinationSection:
    alpha: float = 0.5
    beta: float = 0.5
    lam: float = -1.0
    correction: str = "path"
    resolution: float = 10.0
    decision_period: float = 0.25
    min_obstacle_confidence: float = 0.1
    contexts: Mapping[str, ContextParams] = field(default_factory=_default_contexts)


def _default_tasks() -> tuple:
    T = TaskConfig
    return (
        T("striker", "striker", (0.0, 0.0), 0, (1.0, 1.0)),
        T("keeper", "keeper", (-4.2, 0.0), 1, (0.0, 0.15)),
        T("supporter", "supporter", (-1.2, 0.0), 2, (1.0, 0.6)),
        T("defender_1", "defender", (-3.2, 1.0), 3, (0.2, 0.2)),
        T("defender_2", "defender", (-3.2, -1.0), 4, (0.2, 0.2)),
        T("midfield_left", "midfielder", (-1.0, 1.8), 5, (0.5, 0.2)),
        T("midfield_right", "midfielder", (-1.0, -1.8), 6, (0.5, 0.2)),
        T("forward_left", "forward", (1.5, 1.5), 7, (0.4, 0.2)),
        T("forward_right", "forward", (1.5, -1.5), 8, (0.4, 0.2)),
        T("libero", "defender", (-2.5, 0.0), 9, (0.3, 0.5)),
    )


def _default_opponents() -> tuple:
    O = OpponentConfig
    return (
        O((3.6, -0.6), 90.0, 1.5, 1.2, 7.0),
        O((2.0, 0.8), -120.0, 1.5, 1.4, 9.0),
        O((2.2, -1.8), 135.0, 1.5, 1.4, 8.0),
        O((0.8, 1.6), -150.0, 1.5, 1.3, 10.0),
        O((0.6, -1.2), 160.0, 1.5, 1.3, 9.5),
        O((-0.8, 0.3), -100.0, 1.5, 1.2, 11.0),
        O((-1.6, -2.6), 60.0, 1.5, 1.2, 8.5),
    )


def _default_anchors() -> tuple:
    return (
        (0.0, 0.0), (-3.2, 0.0), (3.2, 0.0), (-4.5, 0.0),
        (-3.9, 1.1), (-3.9, -1.1), (0.0, 0.75), (0.0, -0.75),
    )


@dataclass(frozen=True)
class ScenarioConfig:
    field: FieldConfig = FieldConfig()
    team_size: int = 7
    match_length: float = 1200.0
    dt: float = 0.05
    budget: int = 1200
    overlap_threshold: int = 2
    seeds: tuple[int, ...] = tuple(range(1, 11))
    tasks: tuple[TaskConfig, ...] = dataclasses.field(default_factory=_default_tasks)
    opponents: tuple[OpponentConfig, ...] = dataclasses.field(default_factory=_default_opponents)
    anchors: tuple[tuple[float, float], ...] = dataclasses.field(default_factory=_default_anchors)
    channel: ChannelSection = ChannelSection()
    sensing: SensingConfig = SensingConfig()
    dynamics: DynamicsConfig = DynamicsConfig()
    world_model: WorldModelParams = WorldModelParams()
    events: EventParams = EventParams()
    coordination: CoordinationSection = CoordinationSection()

    def __post_init__(self):
        validate(self)

    @property
    def bounds(self) -> BoundingBox:
        return self.field.bounds

    @property
    def ticks(self) -> int:
        return int(round(self.match_length / self.dt))


PRESETS: dict[str, dict] = {
    "full": {},
    "desk": {"match_length": 120.0, "budget": 120},
}


# --------------------------------------------------------------------------
# Validation


def _check(cond: bool, msg: str):
    if not cond:
        raise ConfigurationError(msg)


def validate(c: ScenarioConfig) -> None:
    b = c.field.bounds
    _check(c.field.x_max > c.field.x_min and c.field.y_max > c.field.y_min, "field: empty bounds")
    _check(1 <= c.team_size <= 255, "team_size must be in [1, 255]")
    _check(c.team_size <= len(c.tasks),
           f"team_size N={c.team_size} exceeds task count M={len(c.tasks)} (need N <= M)")
    _check(0.0 < c.dt <= 0.1, f"dt must be in (0, 0.1], got {c.dt}")
    _check(c.match_length > 0.0, "match_length must be > 0")
    _check(c.budget >= 0, "budget must be >= 0")
    _check(c.overlap_threshold >= 2, "overlap_threshold must be >= 2")
    _check(len(c.seeds) >= 1, "seeds: need at least one seed")
    ids = [t.id for t in c.tasks]
    _check(len(set(ids)) == len(ids), "tasks: duplicate task id")
    ranks = [t.priority for t in c.tasks]
    _check(len(set(ranks)) == len(ranks), "tasks: priority ranks must be unique")
    for t in c.tasks:
        _check(b.contains(t.target), f"task {t.id}: target {t.target} outside the field")
    for k, o in enumerate(c.opponents):
        _check(b.contains(o.anchor), f"opponents[{k}]: anchor outside the field")
        _check(o.interest_length >= 0.0, f"opponents[{k}]: interest_length must be >= 0")
        _check(0.0 <= o.amplitude <= o.interest_length,
               f"opponents[{k}]: amplitude must be within [0, interest_length]")
        _check(o.period > 0.0, f"opponents[{k}]: period must be > 0")
        a = math.radians(o.axis_deg)
        end = (o.anchor[0] + o.amplitude * math.cos(a), o.anchor[1] + o.amplitude * math.sin(a))
        _check(b.contains(end), f"opponents[{k}]: patrol segment leaves the field")
    for p in c.anchors:
        _check(b.contains(p), f"anchor {p} outside the field")
    ch = c.channel
    _check(0.0 <= ch.loss <= 1.0, "channel.loss must be in [0, 1]")
    _check(ch.latency_mean >= 0.0 and ch.latency_jitter >= 0.0, "channel latencies must be >= 0")
    s = c.sensing
    _check(s.range > 0.0 and 0.0 < s.fov_deg <= 360.0, "sensing: bad range or fov")
    _check(0.0 <= s.p_fp <= 1.0 and 0.0 <= s.p_miss <= 1.0, "sensing: probabilities must be in [0, 1]")
    _check(min(s.sigma_obs, s.sigma_pose, s.sigma_axis_deg, s.sigma_growth) >= 0.0, "sensing: negative sigma")
    d = c.dynamics
    _check(d.agent_speed > 0.0, "dynamics.agent_speed must be > 0")
    _check(0.0 <= d.restitution <= 1.0, "dynamics.restitution must be in [0, 1]")
    _check(0.0 < d.kick_speed_min <= d.kick_speed_max <= d.ball_max_speed, "dynamics: bad kick speeds")
    k = c.coordination
    _check(k.alpha > 0.0, "coordination.alpha must be > 0")
    _check(k.beta >= 0.0, "coordination.beta must be >= 0")
    _check(k.correction in ("path", "target"), "coordination.correction must be 'path' or 'target'")
    _check(k.resolution >= 10.0, "coordination.resolution must be >= 10 cells/m")
    _check(k.decision_period >= c.dt, "coordination.decision_period must be >= dt")
    modes = {m.value for m in ContextMode}
    _check(set(k.contexts) == modes, f"coordination.contexts must define exactly {sorted(modes)}")


# --------------------------------------------------------------------------
# YAML with line numbers


class _LineDict(dict):
    lines: dict


class _Loader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node):
    loader.flatten_mapping(node)
    out = _LineDict()
    out.lines = {}
    for k_node, v_node in node.value:
        key = loader.construct_object(k_node, deep=True)
        if key in out:
            raise ConfigurationError(f"line {k_node.start_mark.line + 1}: duplicate key {key!r}")
        out[key] = loader.construct_object(v_node, deep=True)
        out.lines[key] = k_node.start_mark.line + 1
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


def _line(data, key) -> str:
    lines = getattr(data, "lines", None)
    if lines and key in lines:
        return f"line {lines[key]}: "
    return ""


def _convert(tp, value, path: str, ctx: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if tp is ContextParams:
        return _build(tp, value, path)
    if origin in (tuple,) and len(args) == 2 and args[1] is Ellipsis:
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(f"{ctx}{path}: expected a list")
        return tuple(_convert(args[0], v, f"{path}[{i}]", ctx) for i, v in enumerate(value))
    if origin in (tuple,):
        if not isinstance(value, (list, tuple)) or len(value) != len(args):
            raise ConfigurationError(f"{ctx}{path}: expected a list of {len(args)} values")
        return tuple(_convert(a, v, f"{path}[{i}]", ctx) for i, (a, v) in enumerate(zip(args, value)))
    if origin in (dict, collections.abc.Mapping):
        if not isinstance(value, dict):
            raise ConfigurationError(f"{ctx}{path}: expected a mapping")
        vt = args[1] if args else Any
        return {str(k): _convert(vt, v, f"{path}.{k}", _line(value, k)) for k, v in value.items()}
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{ctx}{path}: expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{ctx}{path}: expected an integer, got {value!r}")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{ctx}{path}: expected true/false, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, (str, int)):
            raise ConfigurationError(f"{ctx}{path}: expected a string, got {value!r}")
        return str(value)
    return value


def _build(cls, data, path: str = ""):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path or 'config'}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            where = f"{path}." if path else ""
            raise ConfigurationError(f"{_line(data, key)}unknown key {where}{key!r}")
    kwargs = {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else str(key)
        kwargs[key] = _convert(hints[key], value, sub, _line(data, key))
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"{path or 'config'}: {exc}") from None


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def from_dict(data: Optional[dict], preset: Optional[str] = None) -> ScenarioConfig:
    data = data or {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigurationError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        merged = _LineDict(_merge(PRESETS[preset], data))
        merged.lines = getattr(data, "lines", {})
        data = merged
    return _build(ScenarioConfig, data)


def parse_text(text: str, preset: Optional[str] = None) -> ScenarioConfig:
    try:
        data = yaml.load(text, Loader=_Loader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}: " if mark else ""
        raise ConfigurationError(f"{where}malformed YAML: {exc.problem}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigurationError("top level of the config must be a mapping")
    return from_dict(data, preset)


def parse_config(path, preset: Optional[str] = None) -> ScenarioConfig:
    """Read, default-complete and validate a scenario file."""
    p = Path(path)
    try:
        text = p.read_text()
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {p}") from None
    except OSError as exc:
        raise ConfigurationError(f"cannot read {p}: {exc}") from None
    return parse_text(text, preset)


# --------------------------------------------------------------------------
# Serialization


def _plain(v):
    if dataclasses.is_dataclass(v):
        return {f.name: _plain(getattr(v, f.name)) for f in dataclasses.fields(v)}
    if isinstance(v, (tuple, list)):
        return [_plain(x) for x in v]
    if isinstance(v, Mapping):
        return {str(k): _plain(x) for k, x in v.items()}
    return v


def to_dict(config: ScenarioConfig) -> dict:
    return _plain(config)


def dump_config(config: ScenarioConfig) -> str:
    return yaml.safe_dump(to_dict(config), sort_keys=False)


def config_hash(config: ScenarioConfig) -> str:
    blob = json.dumps(to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def with_overrides(config: ScenarioConfig, **changes) -> ScenarioConfig:
    """Nested replace: ``with_overrides(c, channel={'loss': 0})``."""
    return from_dict(_merge(to_dict(config), changes))
