"""Domain types shared by every layer: events, channel tags, messages, windows.

All types are immutable once built, so they can be handed between threads
without copying.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence


class ConfigError(ValueError):
    """Raised when a value object is built from out-of-range settings."""


class DeserializationError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


U64_MAX = (1 << 64) - 1


class Event(NamedTuple):
    key: int
    value: int
    event_time: int
    payload: bytes = b""


@dataclass(frozen=True)
class ChannelTag:
    source_rank: int
    source_op: int
    target_rank: int
    target_op: int

    def __post_init__(self):
        for name in ("source_rank", "source_op", "target_rank", "target_op"):
            v = getattr(self, name)
            if not 0 <= v <= 255:
                raise ConfigError(f"{name}={v} does not fit in 8 bits")

    def __int__(self) -> int:
        return encode_tag(self)


def encode_tag(c: ChannelTag) -> int:
    return (c.source_rank << 24) + (c.source_op << 16) + (c.target_rank << 8) + c.target_op


def decode_tag(t: int) -> ChannelTag:
    if not 0 <= t <= 0xFFFFFFFF:
        raise ConfigError(f"tag {t} is not a 32-bit unsigned value")
    return ChannelTag((t >> 24) & 0xFF, (t >> 16) & 0xFF, (t >> 8) & 0xFF, t & 0xFF)


class MessageKind(enum.IntEnum):
    DATA = 0
    WINDOW_MARKER = 1
    TERMINATE = 2


@dataclass(frozen=True)
class Message:
    tag: ChannelTag
    kind: MessageKind = MessageKind.DATA
    window_id: int = 0
    events: Sequence[Event] = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind != MessageKind.DATA and len(self.events):
            raise ConfigError(f"{self.kind.name} message cannot carry events")

    def __eq__(self, other):
        if not isinstance(other, Message):
            return NotImplemented
        return (
            self.tag == other.tag
            and self.kind == other.kind
            and self.window_id == other.window_id
            and list(self.events) == list(other.events)
        )

    @classmethod
    def data(cls, tag: ChannelTag, events: Sequence[Event]) -> "Message":
        return cls(tag, MessageKind.DATA, 0, events)

    @classmethod
    def marker(cls, tag: ChannelTag, window: int) -> "Message":
        return cls(tag, MessageKind.WINDOW_MARKER, window)

    @classmethod
    def terminate(cls, tag: ChannelTag) -> "Message":
        return cls(tag, MessageKind.TERMINATE)


@dataclass(frozen=True)
class WindowSpec:
    """Tumbling windows; window i covers [i*size, (i+1)*size)."""

    window_size_ms: int

    def __post_init__(self):
        if self.window_size_ms <= 0:
            raise ConfigError("window_size_ms must be positive")

    def bounds(self, wid: int) -> tuple[int, int]:
        return wid * self.window_size_ms, (wid + 1) * self.window_size_ms


def window_id(event_time: int, spec: WindowSpec) -> int:
    return event_time // spec.window_size_ms


# Wire format, little-endian throughout.
_HEADER = struct.Struct("<IBQI")
_EVENT_HEAD = struct.Struct("<QQQI")
HEADER_SIZE = _HEADER.size  # 17
EVENT_HEADER_SIZE = _EVENT_HEAD.size  # 28


def serialize_message(m: Message) -> bytes:
    parts = [_HEADER.pack(encode_tag(m.tag), int(m.kind), m.window_id, len(m.events))]
    pack = _EVENT_HEAD.pack
    for e in m.events:
        parts.append(pack(e.key, e.value, e.event_time, len(e.payload)))
        if e.payload:
            parts.append(e.payload)
    return b"".join(parts)


def deserialize_message(b: bytes) -> Message:
    b = memoryview(b)
    if len(b) < HEADER_SIZE:
        raise DeserializationError(f"frame shorter than {HEADER_SIZE}-byte header", len(b))
    tag, kind, wid, count = _HEADER.unpack_from(b, 0)
    try:
        kind = MessageKind(kind)
    except ValueError:
        raise DeserializationError(f"unknown message kind {kind}", 4) from None
    if kind != MessageKind.DATA and count:
        raise DeserializationError(f"{kind.name} frame declares {count} events", 13)
    off = HEADER_SIZE
    events = []
    unpack = _EVENT_HEAD.unpack_from
    for _ in range(count):
        if off + EVENT_HEADER_SIZE > len(b):
            raise DeserializationError("truncated event header", off)
        key, value, t, plen = unpack(b, off)
        off += EVENT_HEADER_SIZE
        if off + plen > len(b):
            raise DeserializationError("truncated event payload", off)
        events.append(Event(key, value, t, bytes(b[off:off + plen])))
        off += plen
    if off != len(b):
        raise DeserializationError(f"{len(b) - off} trailing bytes", off)
    return Message(decode_tag(tag), kind, wid, tuple(events))
