"""Teleoperation wire protocol and channel-degradation model.

Every message is one UTF-8 JSON object per line. Client->server types:
hello, start_session, control, stop_session, ping. Server->client types:
welcome, session_started, state, event, session_ended, pong, error.

The ChannelModel injects one-way delay, jitter, and drops into either
direction while preserving FIFO order; the mock-physical backend is the sim
backend plus a non-zero channel, PWM-quantized actuation, and sensor noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .errors import InvalidValue, ProtocolError

PROTOCOL_VERSION = 1
MAX_LINE_BYTES = 64 * 1024
FAILSAFE_TIMEOUT_S = 0.5
FAILSAFE_BRAKE = 0.3
MAX_CONSECUTIVE_ERRORS = 10

CLIENT_TYPES = {
    "hello": ("client_kind", "protocol_version"),
    "start_session": ("scenario_ref", "vehicle_id", "backend", "driver_label", "order_index"),
    "control": ("steer", "throttle", "brake"),
    "stop_session": (),
    "ping": ("nonce",),
}
SERVER_TYPES = ("welcome", "session_started", "state", "event",
                "session_ended", "pong", "error")


@dataclass(frozen=True)
class Message:
    type: str
    seq: int
    t: float
    payload: dict
    clamped: bool = False


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(float(v))


def decode_message(line: str) -> Message:
    """Decode one inbound line; strict fields, clamping control ranges.

    Raises ProtocolError for anything that is not exactly one well-formed
    message of a known client type.
    """
    if len(line.encode("utf-8", errors="replace")) > MAX_LINE_BYTES:
        raise ProtocolError("line exceeds 64 KiB")
    try:
        obj = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ProtocolError(f"malformed JSON: {e}") from None
    if not isinstance(obj, dict):
        raise ProtocolError("message must be a JSON object")
    mtype = obj.get("type")
    if not isinstance(mtype, str) or mtype not in CLIENT_TYPES:
        raise ProtocolError(f"unknown type {mtype!r}")
    required = CLIENT_TYPES[mtype]
    allowed = set(required) | {"type", "seq", "t"}
    unknown = set(obj) - allowed
    if unknown:
        raise ProtocolError(f"unknown field {sorted(unknown)[0]!r} for {mtype}")
    for key in ("seq",) + tuple(required):
        if key not in obj:
            raise ProtocolError(f"missing field {key!r} for {mtype}")
    if not isinstance(obj["seq"], int) or isinstance(obj["seq"], bool) or obj["seq"] < 0:
        raise ProtocolError("seq must be a non-negative integer")
    t = obj.get("t", 0.0)
    if not _is_num(t):
        raise ProtocolError("t must be a finite number")

    payload = {k: obj[k] for k in obj if k not in ("type", "seq", "t")}
    clamped = False
    if mtype == "control":
        for key, lo, hi in (("steer", -1.0, 1.0), ("throttle", 0.0, 1.0), ("brake", 0.0, 1.0)):
            if not _is_num(payload[key]):
                raise ProtocolError(f"{key} must be a finite number")
            v = float(payload[key])
            c = min(hi, max(lo, v))
            if c != v:
                clamped = True
            payload[key] = c
    elif mtype == "hello":
        if payload["protocol_version"] != PROTOCOL_VERSION:
            raise ProtocolError(f"unsupported protocol_version {payload['protocol_version']!r}")
        if not isinstance(payload["client_kind"], str):
            raise ProtocolError("client_kind must be a string")
    elif mtype == "start_session":
        if payload["backend"] not in ("sim", "mock_physical"):
            raise ProtocolError(f"unknown backend {payload['backend']!r}")
        if not isinstance(payload["vehicle_id"], str):
            raise ProtocolError("vehicle_id must be a string")
        if not isinstance(payload["driver_label"], str):
            raise ProtocolError("driver_label must be a string")
        if not isinstance(payload["order_index"], int) or isinstance(payload["order_index"], bool):
            raise ProtocolError("order_index must be an integer")
    return Message(type=mtype, seq=obj["seq"], t=float(t), payload=payload, clamped=clamped)


def encode_message(mtype: str, seq: int, t: float, **payload) -> str:
    """One outbound line (newline not included)."""
    obj = {"type": mtype, "seq": seq, "t": round(t, 6)}
    obj.update(payload)
    return json.dumps(obj, sort_keys=True, allow_nan=False)


# ---------------------------------------------------------------------------
# channel model

@dataclass(frozen=True)
class ChannelModel:
    uplink_delay_ms: float = 0.0
    downlink_delay_ms: float = 0.0
    jitter_ms: float = 0.0
    drop_prob: float = 0.0
    seed: int | None = None  # None: derive from the scenario seed

    def __post_init__(self):
        if self.uplink_delay_ms < 0 or self.downlink_delay_ms < 0 or self.jitter_ms < 0:
            raise InvalidValue("channel", "delays and jitter must be >= 0")
        if not 0.0 <= self.drop_prob < 1.0:
            raise InvalidValue("drop_prob", "must be in [0, 1)")

    def is_zero(self):
        return (self.uplink_delay_ms == 0 and self.downlink_delay_ms == 0
                and self.jitter_ms == 0 and self.drop_prob == 0)

    def to_obj(self):
        return {
            "uplink_delay_ms": self.uplink_delay_ms,
            "downlink_delay_ms": self.downlink_delay_ms,
            "jitter_ms": self.jitter_ms,
            "drop_prob": self.drop_prob,
            "seed": self.seed,
        }

    @classmethod
    def from_obj(cls, obj):
        return cls(**obj)


ZERO_CHANNEL = ChannelModel()
DEFAULT_MOCK_CHANNEL = ChannelModel(
    uplink_delay_ms=40.0, downlink_delay_ms=80.0, jitter_ms=15.0, drop_prob=0.005,
)


def apply_channel(model: ChannelModel, direction: str, now: float, rng,
                  last_deliver_at: float):
    """Delivery time for a message sent at `now`, or None when dropped.

    FIFO per direction: the result is floored to last_deliver_at. Callers
    thread last_deliver_at through consecutive sends.
    """
    if model.is_zero():
        return max(now, last_deliver_at)
    if model.drop_prob > 0.0 and rng.random() < model.drop_prob:
        return None
    base = model.uplink_delay_ms if direction == "up" else model.downlink_delay_ms
    jitter = rng.uniform(-model.jitter_ms, model.jitter_ms) if model.jitter_ms > 0 else 0.0
    deliver = now + max(0.0, base + jitter) / 1000.0
    return max(deliver, last_deliver_at, now)


class ChannelSim:
    """Stateful FIFO wrapper around apply_channel for one direction."""

    def __init__(self, model: ChannelModel, direction: str, rng):
        self.model = model
        self.direction = direction
        self.rng = rng
        self.last_deliver_at = 0.0

    def send(self, now: float):
        deliver = apply_channel(self.model, self.direction, now, self.rng,
                                self.last_deliver_at)
        if deliver is not None:
            self.last_deliver_at = deliver
        return deliver


# ---------------------------------------------------------------------------
# backend descriptor

@dataclass(frozen=True)
class BackendDescriptor:
    kind: str = "sim"                    # "sim" | "mock_physical"
    channel: ChannelModel = ZERO_CHANNEL
    actuation: str = "direct"            # "direct" | "pwm"
    noise_on: bool = False

    def __post_init__(self):
        if self.kind not in ("sim", "mock_physical"):
            raise InvalidValue("backend.kind", f"unknown backend {self.kind!r}")
        if self.actuation not in ("direct", "pwm"):
            raise InvalidValue("backend.actuation", f"unknown path {self.actuation!r}")
        if self.kind == "sim" and (not self.channel.is_zero() or self.actuation != "direct"
                                   or self.noise_on):
            raise InvalidValue("backend", "sim backend must be zero-channel, direct, noiseless")

    def to_obj(self):
        return {
            "kind": self.kind,
            "channel": self.channel.to_obj(),
            "actuation": self.actuation,
            "noise_on": self.noise_on,
        }

    @classmethod
    def from_obj(cls, obj):
        return cls(
            kind=obj.get("kind", "sim"),
            channel=ChannelModel.from_obj(obj["channel"]) if "channel" in obj else ZERO_CHANNEL,
            actuation=obj.get("actuation", "direct"),
            noise_on=obj.get("noise_on", False),
        )

    @classmethod
    def default_mock_physical(cls):
        return cls(kind="mock_physical", channel=DEFAULT_MOCK_CHANNEL,
                   actuation="pwm", noise_on=True)
