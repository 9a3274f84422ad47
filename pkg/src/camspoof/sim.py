"""Deterministic event-driven simulation of the camera link.

One event queue ordered by ``(time_ns, sequence)`` drives the camera, the
active defense unit and the attacker. Every packet that reaches a wire is
recorded in a :class:`Capture`; the ADAS-side :class:`Observer` consumes the
records in order, so a live session and a replay of its capture go through
the very same code.

Timeline of camera slot ``t`` (period ``P``, slot start ``S_t = (t + 2) P``)::

    S_t - P/2   defense sends the width for slot t
    S_t - P/4   attacker hooks fire (stripe/patch forging, full-frame Stop)
    S_t         camera leader, then payloads every packet_spacing_ns

One extra defense request goes out at ``S_0 - 3P/2`` so that a camera with a
one-frame lag already has a requested width for its first frame.
"""

from __future__ import annotations

import csv
import enum
import heapq
import io
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from camspoof.attacker import (
    AttackKind,
    AttackLog,
    AttackPlan,
    AttackerView,
    Target,
    full_frame_attack,
    stripe_attack,
)
from camspoof.defense import VerifierState, WidthScheduler, WidthVerdict, verify_width
from camspoof.pixels import SceneConfig, synth_frame
from camspoof.protocol import (
    MAX_PAYLOAD,
    GvcpCommand,
    LeaderPacket,
    PayloadPacket,
    ReassemblyResult,
    Register,
    StreamPacket,
    TrailerPacket,
    decode_packet,
    encode_packet,
    fragment_frame,
    reassemble,
)

logger = logging.getLogger(__name__)

CAPTURE_MAGIC = b"GVSC"
CAPTURE_VERSION = 1
_CAP_HEADER = struct.Struct(">4sHI")
_CAP_RECORD = struct.Struct(">QBI")


class Link(enum.IntEnum):
    CameraToAdas = 1
    DefenseToCamera = 2
    AttackerToAdas = 3
    AttackerToCamera = 4


class CaptureError(ValueError):
    """Malformed capture file."""


class ConfigError(ValueError):
    """Session configuration that cannot be run."""


@dataclass(frozen=True)
class SimConfig:
    """Session parameters.

    ``loss_prob`` is the per-payload-packet drop probability on links into the
    ADAS. Its default of 0 is arbitrary: no measured loss rate is available.
    """

    scene: SceneConfig
    fps: float = 20.0
    loss_prob: float = 0.0
    camera_delay_frames: int = 0
    duration_frames: int = 10
    seed: int = 0
    max_payload: int = MAX_PAYLOAD
    packet_spacing_ns: int = 10_000

    def __post_init__(self) -> None:
        if not self.fps > 0:
            raise ConfigError(f"fps must be positive, got {self.fps}")
        if not 0 <= self.loss_prob < 1:
            raise ConfigError(f"loss_prob must be in [0, 1), got {self.loss_prob}")
        if self.camera_delay_frames not in (0, 1):
            raise ConfigError(f"camera_delay_frames must be 0 or 1, got {self.camera_delay_frames}")
        if self.duration_frames < 0:
            raise ConfigError("duration_frames must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.max_payload < 1 or self.packet_spacing_ns < 2:
            raise ConfigError("max_payload must be >= 1 and packet_spacing_ns >= 2")
        packets = math.ceil(self.scene.width * self.scene.height / self.max_payload) + 2
        if packets * self.packet_spacing_ns >= self.period_ns // 4:
            raise ConfigError("a frame's packets do not fit in a quarter of the frame period")

    @property
    def period_ns(self) -> int:
        return int(round(1e9 / self.fps))

    def slot_time(self, t: int) -> int:
        return (t + 2) * self.period_ns

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["scene"]["motion"] = list(self.scene.motion)
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "SimConfig":
        d = dict(d)
        scene = dict(d.pop("scene"))
        if "motion" in scene:
            scene["motion"] = tuple(scene["motion"])
        return cls(scene=SceneConfig(**scene), **d)


@dataclass(frozen=True)
class DefensePlan:
    """Active defense settings; ``w_max`` defaults to the scene width."""

    key: bytes
    bits_per_frame: int
    d_max: int = 1
    w_max: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        return {"key": self.key.hex(), "b": self.bits_per_frame, "d_max": self.d_max, "w_max": self.w_max}


@dataclass(frozen=True)
class CaptureRecord:
    time_ns: int
    link: Link
    data: bytes

    def packet(self) -> StreamPacket:
        return decode_packet(self.data)


@dataclass
class Capture:
    """Header metadata plus every packet put on a wire, in event order."""

    config: Dict[str, Any]
    records: List[CaptureRecord] = field(default_factory=list)

    def to_bytes(self) -> bytes:
        meta = json.dumps(self.config, sort_keys=True, separators=(",", ":")).encode()
        parts = [_CAP_HEADER.pack(CAPTURE_MAGIC, CAPTURE_VERSION, len(meta)), meta]
        for rec in self.records:
            parts.append(_CAP_RECORD.pack(rec.time_ns, int(rec.link), len(rec.data)))
            parts.append(rec.data)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Capture":
        if len(blob) < _CAP_HEADER.size:
            raise CaptureError("capture shorter than its header")
        magic, version, meta_len = _CAP_HEADER.unpack_from(blob)
        if magic != CAPTURE_MAGIC:
            raise CaptureError(f"bad capture magic {magic!r}")
        if version != CAPTURE_VERSION:
            raise CaptureError(f"unsupported capture version {version}")
        pos = _CAP_HEADER.size
        try:
            config = json.loads(blob[pos : pos + meta_len])
        except ValueError as exc:
            raise CaptureError(f"unreadable capture metadata: {exc}") from exc
        pos += meta_len
        records = []
        while pos < len(blob):
            if pos + _CAP_RECORD.size > len(blob):
                raise CaptureError(f"truncated record header at byte {pos}")
            time_ns, link, n = _CAP_RECORD.unpack_from(blob, pos)
            pos += _CAP_RECORD.size
            if pos + n > len(blob):
                raise CaptureError(f"truncated record body at byte {pos}")
            try:
                link = Link(link)
            except ValueError as exc:
                raise CaptureError(f"unknown link code {link}") from exc
            records.append(CaptureRecord(time_ns, link, bytes(blob[pos : pos + n])))
            pos += n
        return cls(config, records)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Capture":
        return cls.from_bytes(Path(path).read_bytes())

    def csv_text(self) -> str:
        """One line per record: time, link, type, block_id, packet_id, size."""
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["time_ns", "link", "type", "block_id", "packet_id", "size"])
        for rec in self.records:
            p = rec.packet()
            kind = type(p).__name__.replace("Packet", "").replace("Command", "").lower()
            block = getattr(p, "block_id", "")
            pid = p.packet_id if isinstance(p, PayloadPacket) else ""
            w.writerow([rec.time_ns, rec.link.name, kind, block, pid, len(rec.data)])
        return out.getvalue()


@dataclass(frozen=True)
class ReceivedFrame:
    """A frame as reassembled by the ADAS, with its width verdict if any."""

    index: int
    result: ReassemblyResult
    width_verdict: Optional[WidthVerdict] = None
    link: Link = Link.CameraToAdas

    @property
    def leader(self) -> LeaderPacket:
        return self.result.leader


class Observer:
    """ADAS-side receiver plus width verifier, fed one capture record at a time.

    GVCP width requests on the defense link fill the verifier window; frames
    arriving from the camera or the attacker are grouped by leader and
    reassembled when their trailer (or the next leader) arrives.
    """

    def __init__(self, max_payload: int = MAX_PAYLOAD, d_max: Optional[int] = None, on_frame=None):
        self.max_payload = max_payload
        self.verifier = None if d_max is None else VerifierState(d_max)
        self.frames: List[ReceivedFrame] = []
        self._open: Optional[List[StreamPacket]] = None
        self._open_time = 0
        self._open_link = Link.CameraToAdas
        self._open_verdict: Optional[WidthVerdict] = None
        self._on_frame = on_frame

    def feed(self, rec: CaptureRecord) -> None:
        if rec.link is Link.AttackerToCamera:
            return
        packet = rec.packet()
        if rec.link is Link.DefenseToCamera:
            if isinstance(packet, GvcpCommand) and packet.register is Register.WIDTH and self.verifier is not None:
                self.verifier.record_request(packet.value)
            return
        if isinstance(packet, LeaderPacket):
            self._close()
            self._open = [packet]
            self._open_time = rec.time_ns
            self._open_link = rec.link
            self._open_verdict = (
                None if self.verifier is None else verify_width(packet.width, self.verifier, packet.block_id)
            )
        elif self._open is not None:
            self._open.append(packet)
            if isinstance(packet, TrailerPacket) and packet.block_id == self._open[0].block_id:
                self._close()

    def _close(self) -> None:
        if self._open is None:
            return
        result = reassemble(self._open, max_payload=self.max_payload, arrival_ns=self._open_time)
        frame = ReceivedFrame(len(self.frames), result, self._open_verdict, self._open_link)
        self.frames.append(frame)
        self._open = None
        if self._on_frame is not None:
            self._on_frame(frame)

    def finish(self) -> List[ReceivedFrame]:
        self._close()
        return self.frames


class _Camera:
    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.width = cfg.scene.width
        self.acquiring = True
        self.next_block = 1
        self.pending: Dict[int, int] = {}

    def receive(self, cmd: GvcpCommand, now: int) -> None:
        if cmd.register is Register.ACQUISITION:
            self.acquiring = bool(cmd.value)
            return
        # the command takes effect at the first slot starting after it arrives
        # slot_time(now // P - 1) is the first slot start strictly after now;
        # it may be the virtual slot -1 for the warm-up request
        first = now // self.cfg.period_ns - 1
        self.pending[first + self.cfg.camera_delay_frames] = cmd.value

    def frame_packets(self, t: int) -> List[StreamPacket]:
        for slot in sorted(s for s in self.pending if s <= t):
            self.width = self.pending.pop(slot)
        buf = synth_frame(self.cfg.scene, t, self.width)
        block = self.next_block
        self.next_block += 1
        return fragment_frame(buf, block, self.cfg.slot_time(t), self.cfg.max_payload)


class _TapView:
    """Attacker's tap on the camera link: remembers the last complete frame."""

    def __init__(self, max_payload: int):
        self.view = AttackerView()
        self.max_payload = max_payload
        self._packets: List[StreamPacket] = []

    def see(self, packet: StreamPacket) -> None:
        if isinstance(packet, LeaderPacket):
            self._packets = [packet]
        elif self._packets:
            self._packets.append(packet)
            if isinstance(packet, TrailerPacket):
                result = reassemble(self._packets, max_payload=self.max_payload)
                self.view = AttackerView(result.leader, result.buffer.data)
                self._packets = []


@dataclass
class SessionResult:
    capture: Capture
    frames: List[ReceivedFrame]
    attack_log: AttackLog
    requested_widths: List[int]

    @property
    def results(self) -> List[ReassemblyResult]:
        return [f.result for f in self.frames]

    @property
    def width_verdicts(self) -> List[WidthVerdict]:
        return [f.width_verdict for f in self.frames if f.width_verdict is not None]


def session_header(cfg: SimConfig, attack: Optional[AttackPlan], defense: Optional[DefensePlan]) -> Dict[str, Any]:
    header: Dict[str, Any] = {"sim": cfg.to_dict(), "seed": cfg.seed}
    if attack is not None:
        header["attack"] = {
            "kind": attack.kind.value,
            "start_frame": attack.start_frame,
            "duration_frames": attack.duration_frames,
            "injected_width": attack.injected_width,
            "metadata_policy": attack.metadata_policy.value,
            "rate_multiplier": attack.rate_multiplier,
        }
    if defense is not None:
        header["defense"] = {"b": defense.bits_per_frame, "d_max": defense.d_max, "w_max": defense.w_max}
    return header


def run_session(
    cfg: SimConfig,
    attack: Optional[AttackPlan] = None,
    defense: Optional[DefensePlan] = None,
    header: Optional[Dict[str, Any]] = None,
    on_frame: Optional[Callable[[ReceivedFrame], None]] = None,
    keep_records: bool = True,
) -> SessionResult:
    """Run one session and return its capture and the ADAS-side frames.

    Deterministic in ``(cfg, attack, defense)``: the only randomness is the
    packet-loss draw from a generator seeded with ``cfg.seed``.
    """
    if attack is not None:
        attack.check_session(cfg.scene.width, cfg.scene.height, cfg.duration_frames)
    period = cfg.period_ns
    rng = np.random.default_rng(cfg.seed)
    capture = Capture(header if header is not None else session_header(cfg, attack, defense))
    observer = Observer(cfg.max_payload, None if defense is None else defense.d_max, on_frame)
    camera = _Camera(cfg)
    tap = _TapView(cfg.max_payload)
    log = AttackLog()
    requested: List[int] = []
    scheduler = None
    if defense is not None:
        w_max = defense.w_max if defense.w_max is not None else cfg.scene.width
        scheduler = WidthScheduler(defense.key, defense.bits_per_frame, w_max)

    queue: List[Tuple[int, int, str, Any]] = []
    seq = 0

    def push(time_ns: int, kind: str, payload: Any = None) -> None:
        nonlocal seq
        heapq.heappush(queue, (time_ns, seq, kind, payload))
        seq += 1

    if scheduler is not None:
        push(cfg.slot_time(0) - 3 * period // 2, "request")
    for t in range(cfg.duration_frames):
        s = cfg.slot_time(t)
        if scheduler is not None:
            push(s - period // 2, "request")
        push(s - period // 4, "hook", t)
        push(s, "slot", t)

    def record(time_ns: int, link: Link, packet: StreamPacket) -> None:
        if isinstance(packet, PayloadPacket) and link in (Link.CameraToAdas, Link.AttackerToAdas):
            if cfg.loss_prob and rng.random() < cfg.loss_prob:
                return
        rec = CaptureRecord(time_ns, link, encode_packet(packet))
        if keep_records:
            capture.records.append(rec)
        if link is Link.CameraToAdas:
            tap.see(packet)
        elif link in (Link.DefenseToCamera, Link.AttackerToCamera):
            camera.receive(packet, time_ns)
        observer.feed(rec)

    while queue:
        now, _, kind, payload = heapq.heappop(queue)
        if kind == "send":
            link, packet = payload
            record(now, link, packet)
        elif kind == "request":
            width = scheduler.next_width()
            requested.append(width)
            record(now, Link.DefenseToCamera, GvcpCommand(Register.WIDTH, width))
        elif kind == "slot":
            if camera.acquiring:
                for i, p in enumerate(camera.frame_packets(payload)):
                    push(now + i * cfg.packet_spacing_ns, "send", (Link.CameraToAdas, p))
        elif kind == "hook" and attack is not None:
            _attack_hook(attack, payload, now + period // 4, tap.view, cfg, log, push)

    return SessionResult(capture, observer.finish(), log, requested)


def _attack_hook(
    plan: AttackPlan, t: int, slot_ns: int, view: AttackerView, cfg: SimConfig, log: AttackLog, push
) -> None:
    scheduled = []
    if plan.kind is AttackKind.FullFrame:
        if t == plan.start_frame:
            scheduled = full_frame_attack(plan, view, cfg.period_ns, cfg.packet_spacing_ns, cfg.max_payload)
            log.add(t, f"full-frame attack, {plan.duration_frames} fabricated frames")
    elif plan.start_frame <= t < plan.start_frame + plan.duration_frames:
        scheduled = stripe_attack(plan, view, t, cfg.packet_spacing_ns, cfg.max_payload, log)
    for item in scheduled:
        link = Link.AttackerToAdas if item.target is Target.ADAS else Link.AttackerToCamera
        push(slot_ns + item.offset_ns, "send", (link, item.packet))


def replay(capture: Capture, d_max: Optional[int] = None, max_payload: Optional[int] = None) -> List[ReceivedFrame]:
    """Feed a saved capture through a fresh ADAS observer."""
    if max_payload is None:
        max_payload = capture.config.get("sim", {}).get("max_payload", MAX_PAYLOAD)
    if d_max is None and "defense" in capture.config:
        d_max = capture.config["defense"]["d_max"]
    observer = Observer(max_payload, d_max)
    for rec in capture.records:
        observer.feed(rec)
    return observer.finish()
