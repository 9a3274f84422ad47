"""Width-varying active defense.

Each frame the defense asks the camera, over GVCP, for a width drawn from
``{w_max - 2k : 0 <= k < 2**b}``; ``k`` comes from ``b`` bits of an RC4
keystream (first 1000 bytes dropped, bits read most-significant first). A
received frame is valid when its leader width matches one of the last
``d_max + 1`` requested widths.
"""

from __future__ import annotations

import enum
import logging
from collections import deque
from dataclasses import dataclass
from typing import Deque, Iterator, List, Optional, Sequence

from camspoof.protocol import GvcpCommand, LeaderPacket, Register

logger = logging.getLogger(__name__)

RC4_DROP = 1000


class RC4:
    """Plain RC4 keystream generator (KSA + PRGA)."""

    def __init__(self, key: bytes):
        key = bytes(key)
        if not 1 <= len(key) <= 256:
            raise ValueError(f"RC4 key must be 1..256 bytes, got {len(key)}")
        s = list(range(256))
        j = 0
        for i in range(256):
            j = (j + s[i] + key[i % len(key)]) & 0xFF
            s[i], s[j] = s[j], s[i]
        self._s = s
        self._i = 0
        self._j = 0

    def next_byte(self) -> int:
        s = self._s
        self._i = i = (self._i + 1) & 0xFF
        self._j = j = (self._j + s[i]) & 0xFF
        s[i], s[j] = s[j], s[i]
        return s[(s[i] + s[j]) & 0xFF]

    def read(self, n: int) -> bytes:
        return bytes(self.next_byte() for _ in range(n))


def rc4_keystream(key: bytes, drop: int = RC4_DROP) -> Iterator[int]:
    """Endless RC4 output bytes after discarding the first ``drop``."""
    gen = RC4(key)
    for _ in range(drop):
        gen.next_byte()
    while True:
        yield gen.next_byte()


def symbol_widths(bits_per_frame: int, w_max: int) -> List[int]:
    return [w_max - 2 * k for k in range(2**bits_per_frame)]


class WidthScheduler:
    """Turns the keystream into a sequence of requested frame widths.

    Bits are consumed strictly in order, so the state after ``n`` widths
    depends only on ``(key, bits_per_frame, n)``.
    """

    def __init__(self, key: bytes, bits_per_frame: int, w_max: int, drop: int = RC4_DROP):
        if not 1 <= bits_per_frame <= 8:
            raise ValueError(f"bits_per_frame must be in 1..8, got {bits_per_frame}")
        if w_max % 2 or w_max - 2 * (2**bits_per_frame - 1) <= 0:
            raise ValueError(f"w_max={w_max} cannot host {2**bits_per_frame} even positive widths")
        self.key = bytes(key)
        self.bits_per_frame = bits_per_frame
        self.w_max = w_max
        self.drop = drop
        self._stream = rc4_keystream(self.key, drop)
        self._bits = 0
        self._nbits = 0
        self.bit_cursor = 0

    @property
    def widths(self) -> List[int]:
        return symbol_widths(self.bits_per_frame, self.w_max)

    def next_symbol(self) -> int:
        b = self.bits_per_frame
        while self._nbits < b:
            self._bits = (self._bits << 8) | next(self._stream)
            self._nbits += 8
        self._nbits -= b
        k = (self._bits >> self._nbits) & ((1 << b) - 1)
        self._bits &= (1 << self._nbits) - 1
        self.bit_cursor += b
        return k

    def next_width(self) -> int:
        return self.w_max - 2 * self.next_symbol()

    def skip(self, frames: int) -> "WidthScheduler":
        for _ in range(frames):
            self.next_symbol()
        return self

    @classmethod
    def resumed(cls, key: bytes, bits_per_frame: int, w_max: int, frames: int, drop: int = RC4_DROP) -> "WidthScheduler":
        return cls(key, bits_per_frame, w_max, drop).skip(frames)


class Verdict(enum.Enum):
    Valid = "Valid"
    Invalid = "Invalid"


@dataclass(frozen=True)
class WidthVerdict:
    block_id: int
    received_width: int
    verdict: Verdict
    matched_delay: Optional[int]
    requested_width: Optional[int] = None

    @property
    def valid(self) -> bool:
        return self.verdict is Verdict.Valid

    def csv_row(self) -> list:
        return [
            self.block_id,
            "" if self.requested_width is None else self.requested_width,
            self.received_width,
            self.verdict.value,
            "" if self.matched_delay is None else self.matched_delay,
        ]


WIDTH_VERDICT_HEADER = ["block_id", "requested_width", "received_width", "verdict", "matched_delay"]


@dataclass
class VerifierState:
    """The last ``d_max + 1`` requested widths, most recent first."""

    d_max: int = 1
    recent_requested: Optional[Deque[int]] = None

    def __post_init__(self) -> None:
        if self.d_max < 0:
            raise ValueError("d_max must be >= 0")
        self.recent_requested = deque(self.recent_requested or (), maxlen=self.d_max + 1)

    def record_request(self, width: int) -> None:
        self.recent_requested.appendleft(width)


def verify_width(received_width: int, state: VerifierState, block_id: int = 0) -> WidthVerdict:
    """Match a received width against the request window without mutating it.

    Before the first request there is nothing to check against; the frame is
    let through as Valid and the abstention is logged.
    """
    window: Sequence[int] = state.recent_requested
    latest = window[0] if window else None
    if not window:
        logger.info("width check abstained for block %d: no request issued yet", block_id)
        return WidthVerdict(block_id, received_width, Verdict.Valid, None, latest)
    for delay, width in enumerate(window):
        if width == received_width:
            return WidthVerdict(block_id, received_width, Verdict.Valid, delay, latest)
    return WidthVerdict(block_id, received_width, Verdict.Invalid, None, latest)


class DefenseLoop:
    """Scheduler plus verifier, as run by the active defense unit.

    Call :meth:`request` once per frame period and :meth:`on_leader` for every
    received frame. Only valid frames are appended to ``forwarded``.
    """

    def __init__(self, scheduler: WidthScheduler, d_max: int = 1):
        self.scheduler = scheduler
        self.state = VerifierState(d_max)
        self.verdicts: List[WidthVerdict] = []
        self.forwarded: List[int] = []

    def request(self) -> GvcpCommand:
        width = self.scheduler.next_width()
        self.state.record_request(width)
        return GvcpCommand(Register.WIDTH, width)

    def note_request(self, width: int) -> None:
        self.state.record_request(width)

    def on_leader(self, leader: LeaderPacket) -> WidthVerdict:
        verdict = verify_width(leader.width, self.state, leader.block_id)
        self.verdicts.append(verdict)
        if verdict.valid:
            self.forwarded.append(leader.block_id)
        return verdict
