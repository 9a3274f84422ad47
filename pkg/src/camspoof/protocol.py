"""Wire codec for the simplified GVSP/GVCP packet format.

Layout (big-endian), after the two magic bytes ``b"GV"`` and a one-byte type:

==========  ====  =====================================================
type        code  fields
==========  ====  =====================================================
leader      1     block_id u64, width u32, height u32, pixel_format u32,
                  timestamp_ns u64
payload     2     block_id u64, packet_id u32, data_len u32, data
trailer     3     block_id u64
GVCP        4     register u16, value u32
==========  ====  =====================================================
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple, Union

from camspoof.pixels import PixelBuffer, PixelFormat

MAGIC = b"GV"
MAX_PAYLOAD = 8950
GVCP_PORT = 3956
GVSP_SOURCE_PORT = 10010

_U32 = 0xFFFFFFFF
_U64 = 0xFFFFFFFFFFFFFFFF

_PREFIX = struct.Struct(">2sB")
_LEADER = struct.Struct(">QIIIQ")
_PAYLOAD_HEAD = struct.Struct(">QII")
_TRAILER = struct.Struct(">Q")
_GVCP = struct.Struct(">HI")

# field name and width, in wire order, for truncation diagnostics
_LEADER_FIELDS = (("block_id", 8), ("width", 4), ("height", 4), ("pixel_format", 4), ("timestamp_ns", 8))
_PAYLOAD_FIELDS = (("block_id", 8), ("packet_id", 4), ("data_len", 4))
_TRAILER_FIELDS = (("block_id", 8),)
_GVCP_FIELDS = (("register", 2), ("value", 4))


class PacketType(enum.IntEnum):
    LEADER = 1
    PAYLOAD = 2
    TRAILER = 3
    GVCP = 4


class Register(enum.IntEnum):
    ACQUISITION = 1
    WIDTH = 2


class ProtocolError(Exception):
    """Stream-level violation (e.g. payloads with no leader)."""


class ParseError(ProtocolError):
    """Base class for malformed wire bytes."""


class BadMagicError(ParseError):
    pass


class UnknownTypeError(ParseError):
    pass


class LengthError(ParseError):
    """Packet is shorter or longer than its type requires.

    ``field`` names the first field that could not be read completely, or is
    ``None`` when the packet has trailing bytes or a mismatched data length.
    """

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


def _check_range(name: str, value: int, limit: int) -> None:
    if not 0 <= value <= limit:
        raise ValueError(f"{name}={value} out of range [0, {limit}]")


@dataclass(frozen=True)
class LeaderPacket:
    block_id: int
    width: int
    height: int
    pixel_format: int = int(PixelFormat.BayerRG8)
    timestamp_ns: int = 0

    def __post_init__(self) -> None:
        _check_range("block_id", self.block_id, _U64)
        _check_range("timestamp_ns", self.timestamp_ns, _U64)
        _check_range("pixel_format", self.pixel_format, _U32)
        for name in ("width", "height"):
            value = getattr(self, name)
            _check_range(name, value, _U32)
            if value == 0 or value % 2:
                raise ValueError(f"{name} must be even and positive, got {value}")

    @property
    def byte_count(self) -> int:
        return self.width * self.height


@dataclass(frozen=True)
class PayloadPacket:
    block_id: int
    packet_id: int
    data: bytes = field(repr=False)

    def __post_init__(self) -> None:
        _check_range("block_id", self.block_id, _U64)
        _check_range("packet_id", self.packet_id, _U32)
        if not self.data:
            raise ValueError("payload data must be non-empty")
        if len(self.data) > MAX_PAYLOAD:
            raise ValueError(f"payload of {len(self.data)} bytes exceeds {MAX_PAYLOAD}")


@dataclass(frozen=True)
class TrailerPacket:
    block_id: int

    def __post_init__(self) -> None:
        _check_range("block_id", self.block_id, _U64)


@dataclass(frozen=True)
class GvcpCommand:
    register: Register
    value: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "register", Register(self.register))
        _check_range("value", self.value, _U32)
        if self.register is Register.ACQUISITION and self.value not in (0, 1):
            raise ValueError(f"acquisition value must be 0 or 1, got {self.value}")
        if self.register is Register.WIDTH and (self.value == 0 or self.value % 2):
            raise ValueError(f"width must be even and positive, got {self.value}")


StreamPacket = Union[LeaderPacket, PayloadPacket, TrailerPacket, GvcpCommand]


def encode_packet(p: StreamPacket) -> bytes:
    if isinstance(p, LeaderPacket):
        return _PREFIX.pack(MAGIC, PacketType.LEADER) + _LEADER.pack(
            p.block_id, p.width, p.height, p.pixel_format, p.timestamp_ns
        )
    if isinstance(p, PayloadPacket):
        return _PREFIX.pack(MAGIC, PacketType.PAYLOAD) + _PAYLOAD_HEAD.pack(p.block_id, p.packet_id, len(p.data)) + p.data
    if isinstance(p, TrailerPacket):
        return _PREFIX.pack(MAGIC, PacketType.TRAILER) + _TRAILER.pack(p.block_id)
    if isinstance(p, GvcpCommand):
        return _PREFIX.pack(MAGIC, PacketType.GVCP) + _GVCP.pack(int(p.register), p.value)
    raise TypeError(f"not a stream packet: {type(p).__name__}")


def _missing_field(kind: str, fields: Sequence[Tuple[str, int]], available: int) -> LengthError:
    offset = 0
    for name, size in fields:
        if available < offset + size:
            return LengthError(f"truncated {kind}: missing field '{name}'", field=name)
        offset += size
    return LengthError(f"truncated {kind}")


def decode_packet(raw: bytes) -> StreamPacket:
    """Parse one packet; raises a :class:`ParseError` subclass on malformed input."""
    try:
        return _decode(raw)
    except ParseError:
        raise
    except ValueError as exc:
        # well-framed bytes carrying an invalid field value
        raise ParseError(str(exc)) from exc


def _decode(raw: bytes) -> StreamPacket:
    if len(raw) < _PREFIX.size:
        raise LengthError("packet shorter than magic and type", field="magic" if len(raw) < 2 else "type")
    magic, code = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    body = memoryview(raw)[_PREFIX.size:]
    if code == PacketType.LEADER:
        if len(body) != _LEADER.size:
            if len(body) < _LEADER.size:
                raise _missing_field("leader", _LEADER_FIELDS, len(body))
            raise LengthError(f"leader has {len(body) - _LEADER.size} trailing bytes")
        return LeaderPacket(*_LEADER.unpack(body))
    if code == PacketType.PAYLOAD:
        if len(body) < _PAYLOAD_HEAD.size:
            raise _missing_field("payload", _PAYLOAD_FIELDS, len(body))
        block_id, packet_id, data_len = _PAYLOAD_HEAD.unpack_from(body)
        data = bytes(body[_PAYLOAD_HEAD.size:])
        if len(data) != data_len:
            raise LengthError(f"payload declares {data_len} data bytes but carries {len(data)}")
        return PayloadPacket(block_id, packet_id, data)
    if code == PacketType.TRAILER:
        if len(body) != _TRAILER.size:
            if len(body) < _TRAILER.size:
                raise _missing_field("trailer", _TRAILER_FIELDS, len(body))
            raise LengthError(f"trailer has {len(body) - _TRAILER.size} trailing bytes")
        return TrailerPacket(*_TRAILER.unpack(body))
    if code == PacketType.GVCP:
        if len(body) != _GVCP.size:
            if len(body) < _GVCP.size:
                raise _missing_field("gvcp", _GVCP_FIELDS, len(body))
            raise LengthError(f"gvcp has {len(body) - _GVCP.size} trailing bytes")
        register, value = _GVCP.unpack(body)
        return GvcpCommand(Register(register), value)
    raise UnknownTypeError(f"unknown packet type {code}")


def payload_count(byte_count: int, max_payload: int = MAX_PAYLOAD) -> int:
    return math.ceil(byte_count / max_payload)


def fragment_frame(
    buf: PixelBuffer, block_id: int, timestamp_ns: int, max_payload: int = MAX_PAYLOAD
) -> List[StreamPacket]:
    """Leader, payloads ``1..K`` of at most ``max_payload`` bytes, then trailer."""
    if max_payload < 1:
        raise ValueError("max_payload must be >= 1")
    packets: List[StreamPacket] = [LeaderPacket(block_id, buf.width, buf.height, int(buf.format), timestamp_ns)]
    data = buf.data
    for i, start in enumerate(range(0, len(data), max_payload), start=1):
        packets.append(PayloadPacket(block_id, i, data[start : start + max_payload]))
    packets.append(TrailerPacket(block_id))
    return packets


@dataclass(frozen=True)
class ReassemblyResult:
    """Receiver-side frame plus bookkeeping.

    ``overwritten_packet_ids`` lists IDs that arrived more than once (the first
    copy was kept). ``truncated`` is set when payload bytes reached past the
    leader's frame size, or when the leader disagreed with the expected
    dimensions. ``arrival_ns`` is the receive time of the leader.
    """

    buffer: PixelBuffer
    leader: LeaderPacket
    missing_packet_ids: Tuple[int, ...] = ()
    overwritten_packet_ids: Tuple[int, ...] = ()
    truncated: bool = False
    arrival_ns: int = 0

    @property
    def complete(self) -> bool:
        return not self.missing_packet_ids and not self.overwritten_packet_ids


def _known_format(code: int) -> PixelFormat:
    try:
        return PixelFormat(code)
    except ValueError:
        return PixelFormat.BayerRG8


def reassemble(
    packets: Iterable[StreamPacket],
    expected: Optional[Tuple[int, int]] = None,
    max_payload: int = MAX_PAYLOAD,
    arrival_ns: int = 0,
) -> ReassemblyResult:
    """Rebuild one frame from its packets, in arrival order.

    The first leader fixes the block and the dimensions. Payload ``i`` lands at
    byte offset ``(i - 1) * max_payload``; a repeated packet ID keeps the first
    copy. Packets of other blocks, extra leaders and trailers are ignored.
    """
    it = iter(packets)
    leader = None
    for p in it:
        if isinstance(p, LeaderPacket):
            leader = p
            break
        if not isinstance(p, PayloadPacket):
            continue
        raise ProtocolError("payload packet before any leader")
    if leader is None:
        raise ProtocolError("no leader packet in sequence")

    total = leader.byte_count
    frame = bytearray(total)
    seen: set = set()
    overwritten: List[int] = []
    truncated = expected is not None and tuple(expected) != (leader.width, leader.height)
    for p in it:
        if not isinstance(p, PayloadPacket) or p.block_id != leader.block_id:
            continue
        if p.packet_id in seen:
            if p.packet_id not in overwritten:
                overwritten.append(p.packet_id)
            continue
        seen.add(p.packet_id)
        start = (p.packet_id - 1) * max_payload
        if p.packet_id < 1 or start >= total:
            truncated = True
            continue
        chunk = p.data[: total - start]
        if len(chunk) < len(p.data):
            truncated = True
        frame[start : start + len(chunk)] = chunk

    expected_ids = range(1, payload_count(total, max_payload) + 1)
    missing = tuple(i for i in expected_ids if i not in seen)
    return ReassemblyResult(
        # unknown format codes are still shown to detectors as BayerRG8 bytes
        buffer=PixelBuffer(leader.width, leader.height, bytes(frame), _known_format(leader.pixel_format)),
        leader=leader,
        missing_packet_ids=missing,
        overwritten_packet_ids=tuple(sorted(overwritten)),
        truncated=truncated,
        arrival_ns=arrival_ns,
    )
