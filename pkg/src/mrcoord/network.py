"""Budgeted broadcast communication: 128-byte codec, team budget, lossy channel.

Wire layout (little-endian, 128 bytes)::

    off  size  field
      0     2  magic 0x4D52
      2     1  protocol version
      3     1  sender id
      4     1  event kind
      5     1  flags (bit 0: obstacles truncated, bit 1: value saturated)
      6     4  timestamp, ms (u32)
     10     6  self pose x, y [cm], heading [mrad]            (i16 each)
     16     8  ball x, y [cm], vx, vy [cm/s]                  (i16 each)
     24     1  ball confidence * 255                          (u8)
     25     1  obstacle count k <= 9                          (u8)
     26  10*k  obstacle: x, y [cm] i16, axis [mrad] i16, interest length [cm] u16,
               confidence u8, speed along axis [4 cm/s] i8
      .     .  zero padding up to byte 124
    124     4  CRC-32 of bytes 0..123
"""
from __future__ import annotations

import heapq
import math
import struct
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .errors import DecodeError
from .geometry import Point2
from .world_model import AgentPose, Event, EventKind, ModelSummary, ObstacleEstimate

PACKET_SIZE = 128
MAGIC = 0x4D52
VERSION = 1
MAX_OBSTACLES = 9
CRC_OFFSET = 124

FLAG_TRUNCATED = 0x01
FLAG_SATURATED = 0x02

_HEADER = struct.Struct("<HBBBBI")
_POSE = struct.Struct("<hhh")
_BALL = struct.Struct("<hhhhBB")
_OBSTACLE = struct.Struct("<hhhHBb")
_CRC = struct.Struct("<I")

_HEADER_END = _HEADER.size + _POSE.size + _BALL.size  # 26
assert _HEADER_END + MAX_OBSTACLES * _OBSTACLE.size <= CRC_OFFSET

SPEED_UNIT = 0.04  # m/s per count for obstacle axis speed


class _Quantizer:
    def __init__(self):
        self.saturated = False

    def q(self, value: float, scale: float, lo: int, hi: int) -> int:
        v = int(round(value * scale))
        if v < lo or v > hi:
            self.saturated = True
            v = min(max(v, lo), hi)
        return v

    def i16(self, value: float, scale: float) -> int:
        return self.q(value, scale, -32768, 32767)


def _wrap(a: float) -> float:
    """Angle in (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


def encode_packet(event: Event) -> bytes:
    """Serialize an event into exactly 128 bytes."""
    q = _Quantizer()
    s = event.payload
    obstacles = list(s.obstacles)
    flags = 0
    if len(obstacles) > MAX_OBSTACLES:
        obstacles = sorted(obstacles, key=lambda o: -o.confidence)[:MAX_OBSTACLES]
        flags |= FLAG_TRUNCATED
    if not 0 <= event.sender <= 255:
        raise ValueError(f"sender id {event.sender} does not fit one byte")
    ts = q.q(event.timestamp, 1000.0, 0, 0xFFFFFFFF)
    buf = bytearray(PACKET_SIZE)
    pose = s.pose
    _POSE.pack_into(
        buf, 10,
        q.i16(pose.position[0], 100.0), q.i16(pose.position[1], 100.0), q.i16(_wrap(pose.heading), 1000.0),
    )
    _BALL.pack_into(
        buf, 16,
        q.i16(s.ball_position[0], 100.0), q.i16(s.ball_position[1], 100.0),
        q.i16(s.ball_velocity[0], 100.0), q.i16(s.ball_velocity[1], 100.0),
        q.q(s.ball_confidence, 255.0, 0, 255), len(obstacles),
    )
    off = _HEADER_END
    for o in obstacles:
        ax, ay = o.axis_direction
        along = o.velocity[0] * ax + o.velocity[1] * ay
        _OBSTACLE.pack_into(
            buf, off,
            q.i16(o.centroid[0], 100.0), q.i16(o.centroid[1], 100.0),
            q.i16(math.atan2(ay, ax), 1000.0),
            q.q(o.interest_length, 100.0, 0, 0xFFFF),
            q.q(o.confidence, 255.0, 0, 255),
            q.q(along, 1.0 / SPEED_UNIT, -128, 127),
        )
        off += _OBSTACLE.size
    if q.saturated:
        flags |= FLAG_SATURATED
    _HEADER.pack_into(buf, 0, MAGIC, VERSION, event.sender, int(event.kind), flags, ts)
    _CRC.pack_into(buf, CRC_OFFSET, zlib.crc32(bytes(buf[:CRC_OFFSET])))
    return bytes(buf)


def packet_flags(raw: bytes) -> int:
    return raw[5]


def decode_packet(raw: bytes) -> Event:
    """Parse and validate a 128-byte packet; raises :class:`DecodeError`."""
    if len(raw) != PACKET_SIZE:
        raise DecodeError(f"packet length {len(raw)} != {PACKET_SIZE}")
    magic, version, sender, kind, flags, ts = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise DecodeError(f"bad magic 0x{magic:04x}")
    if version != VERSION:
        raise DecodeError(f"unsupported protocol version {version}")
    (crc,) = _CRC.unpack_from(raw, CRC_OFFSET)
    if crc != zlib.crc32(bytes(raw[:CRC_OFFSET])):
        raise DecodeError("CRC mismatch")
    try:
        kind = EventKind(kind)
    except ValueError:
        raise DecodeError(f"unknown event kind {kind}") from None
    px, py, ph = _POSE.unpack_from(raw, 10)
    bx, by, bvx, bvy, bconf, k = _BALL.unpack_from(raw, 16)
    if k > MAX_OBSTACLES:
        raise DecodeError(f"obstacle count {k} > {MAX_OBSTACLES}")
    obstacles = []
    off = _HEADER_END
    for i in range(k):
        ox, oy, oth, olen, oconf, ospeed = _OBSTACLE.unpack_from(raw, off)
        off += _OBSTACLE.size
        th = oth / 1000.0
        ax, ay = math.cos(th), math.sin(th)
        sp = ospeed * SPEED_UNIT
        obstacles.append(
            ObstacleEstimate(
                centroid=Point2(ox / 100.0, oy / 100.0),
                velocity=(sp * ax, sp * ay),
                axis_direction=(ax, ay),
                interest_length=olen / 100.0,
                confidence=oconf / 255.0,
                id=i,
            )
        )
    if any(raw[off:CRC_OFFSET]):
        raise DecodeError("non-zero padding")
    payload = ModelSummary(
        pose=AgentPose(Point2(px / 100.0, py / 100.0), ph / 1000.0),
        ball_position=Point2(bx / 100.0, by / 100.0),
        ball_velocity=(bvx / 100.0, bvy / 100.0),
        ball_confidence=bconf / 255.0,
        obstacles=tuple(obstacles),
    )
    return Event(kind, sender, ts / 1000.0, payload)


# --------------------------------------------------------------------------
# Budget


@dataclass
class BudgetTracker:
    """Team-wide packet allowance for one match."""

    total_budget: int = 1200
    consumed: int = 0
    match_length: float = 1200.0

    @property
    def remaining(self) -> int:
        return self.total_budget - self.consumed

    def try_send(self, packet: Optional[bytes] = None, now: float = 0.0) -> bool:
        if self.consumed >= self.total_budget:
            return False
        self.consumed += 1
        return True


def try_send(tracker: BudgetTracker, packet: Optional[bytes], now: float) -> bool:
    """Charge one packet to the team budget; ``False`` once it is spent."""
    return tracker.try_send(packet, now)


# --------------------------------------------------------------------------
# Channel


@dataclass(frozen=True)
class ChannelConfig:
    loss_probability: float = 0.1
    latency_mean: float = 0.1
    latency_jitter: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.loss_probability <= 1.0:
            raise ValueError("loss_probability must be in [0, 1]")
        if self.latency_mean < 0.0 or self.latency_jitter < 0.0:
            raise ValueError("latencies must be >= 0")


@dataclass(frozen=True)
class TraceEntry:
    send_time: float
    deliver_time: Optional[float]  # None: dropped
    sender: int
    recipient: int
    packet: bytes

    def line(self) -> str:
        d = "dropped" if self.deliver_time is None else f"{self.deliver_time:.3f}"
        return f"{self.send_time:.3f} {d} {self.sender} {self.recipient} {self.packet.hex()}"


class Channel:
    """Seeded broadcast medium with independent per-copy loss and latency.

    Each copy draws its loss and latency from one stream, in recipient order,
    so a given send trace always produces the same delivery trace.
    """

    def __init__(self, config: ChannelConfig, team_size: int, record_trace: bool = False):
        self.config = config
        self.team_size = team_size
        self.rng = np.random.default_rng(config.seed)
        self._queue: list = []
        self._seq = 0
        self.record_trace = record_trace
        self.trace: list[TraceEntry] = []
        self.copies_sent = 0
        self.copies_dropped = 0
        self.copies_delivered = 0

    def broadcast(self, packet: bytes, sender: int, now: float) -> None:
        cfg = self.config
        for r in range(self.team_size):
            if r == sender:
                continue
            u_loss, u_lat = self.rng.random(2)
            self.copies_sent += 1
            if u_loss < cfg.loss_probability:
                self.copies_dropped += 1
                if self.record_trace:
                    self.trace.append(TraceEntry(now, None, sender, r, packet))
                continue
            latency = max(0.0, cfg.latency_mean + cfg.latency_jitter * (2.0 * u_lat - 1.0))
            heapq.heappush(self._queue, (now + latency, sender, self._seq, r, packet, now))
            self._seq += 1

    def step(self, now: float) -> list[tuple[int, bytes]]:
        """Pop every copy due by ``now``: ordered by time, then sender id."""
        out = []
        while self._queue and self._queue[0][0] <= now + 1e-12:
            t, sender, _, r, packet, sent = heapq.heappop(self._queue)
            out.append((r, packet))
            self.copies_delivered += 1
            if self.record_trace:
                self.trace.append(TraceEntry(sent, t, sender, r, packet))
        return out

    @property
    def in_flight(self) -> int:
        return len(self._queue)


def channel_step(channel: Channel, now: float) -> list[tuple[int, bytes]]:
    return channel.step(now)


def write_trace(entries: Iterable[TraceEntry], path) -> None:
    with open(path, "w") as fh:
        fh.write("# send_time deliver_time sender recipient packet_hex\n")
        for e in entries:
            fh.write(e.line() + "\n")
