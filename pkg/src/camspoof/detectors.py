"""The seven passive per-frame anomaly detectors.

Each check compares the current frame (and its leader) with the previous one.
Three look at metadata (constant fields, block ID, timestamp), one at timing
against the receiver's clock, and three at content: raw-byte MSE, an HSV
hue-saturation histogram distance and sparse optical flow.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import cv2
import numpy as np

from camspoof.pixels import PixelBuffer, PixelFormat, RgbImage, demosaic
from camspoof.protocol import LeaderPacket


@dataclass(frozen=True)
class DetectorConfig:
    """Thresholds and constants for the passive detectors.

    ``ts_tolerance_ns`` defaults to 20% of the nominal period. The flow error
    threshold is in pixels of forward-backward tracking error.
    """

    expected_width: int
    expected_height: int
    expected_format: int = int(PixelFormat.BayerRG8)
    id_window: int = 3
    period_ns: int = 50_000_000
    ts_tolerance_ns: Optional[int] = None
    mse_threshold: float = 10.0
    hist_threshold: float = 0.4
    flow_error_threshold: float = 1.0
    flow_min_match_fraction: float = 0.5
    hue_bins: int = 50
    sat_bins: int = 60
    max_corners: int = 200
    min_corners: int = 10

    def __post_init__(self) -> None:
        if self.ts_tolerance_ns is None:
            object.__setattr__(self, "ts_tolerance_ns", int(round(0.2 * self.period_ns)))
        for f in ("id_window", "period_ns", "ts_tolerance_ns", "mse_threshold", "hist_threshold",
                  "flow_error_threshold", "flow_min_match_fraction", "hue_bins", "sat_bins"):
            if not getattr(self, f) > 0:
                raise ValueError(f"{f} must be positive")
        if self.hist_threshold > 1 or self.flow_min_match_fraction > 1:
            raise ValueError("hist_threshold and flow_min_match_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class FrameObservation:
    """A received frame with everything the detectors need."""

    leader: LeaderPacket
    raw: PixelBuffer
    image: RgbImage
    arrival_ns: int = 0

    @classmethod
    def from_raw(cls, leader: LeaderPacket, raw: PixelBuffer, arrival_ns: int = 0) -> "FrameObservation":
        return cls(leader, raw, demosaic(raw), arrival_ns)


# --------------------------------------------------------------------------
# Metadata checks
# --------------------------------------------------------------------------

def constant_meta_check(leader: LeaderPacket, cfg: DetectorConfig) -> bool:
    return (leader.width, leader.height, leader.pixel_format) != (
        cfg.expected_width,
        cfg.expected_height,
        cfg.expected_format,
    )


def frame_id_check(leader: LeaderPacket, prev: Optional[LeaderPacket], cfg: DetectorConfig) -> bool:
    if prev is None:
        return False
    return not prev.block_id < leader.block_id <= prev.block_id + cfg.id_window


def timestamp_check(leader: LeaderPacket, prev: Optional[LeaderPacket], cfg: DetectorConfig) -> bool:
    """Timestamp step must match the block-ID step times the nominal period."""
    if prev is None:
        return False
    gap = leader.block_id - prev.block_id
    return abs((leader.timestamp_ns - prev.timestamp_ns) - gap * cfg.period_ns) > cfg.ts_tolerance_ns


def timestamp_rate_check(
    leader: LeaderPacket, prev: Optional[LeaderPacket], external_clock_delta: Optional[int], cfg: DetectorConfig
) -> bool:
    """Timestamp step must match the receiver's own clock step."""
    if prev is None or external_clock_delta is None:
        return False
    return abs((leader.timestamp_ns - prev.timestamp_ns) - external_clock_delta) > cfg.ts_tolerance_ns


# --------------------------------------------------------------------------
# Content checks
# --------------------------------------------------------------------------

def _common_crop(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    h = min(a.shape[0], b.shape[0])
    w = min(a.shape[1], b.shape[1])
    return a[:h, :w], b[:h, :w]


def frame_mse(cur: PixelBuffer, prev: PixelBuffer) -> float:
    """Mean squared difference of raw mosaic bytes.

    Frames of different size are compared over their common top-left region.
    """
    a, b = _common_crop(cur.array(), prev.array())
    d = a.astype(np.int64) - b.astype(np.int64)
    return float(np.mean(d * d))


def mse_check(cur: PixelBuffer, prev: Optional[PixelBuffer], cfg: DetectorConfig) -> bool:
    """Alerts when two frames are too similar, i.e. a frozen or looped image."""
    if prev is None:
        return False
    return frame_mse(cur, prev) < cfg.mse_threshold


def rgb_to_hue_sat(img: RgbImage) -> Tuple[np.ndarray, np.ndarray]:
    """Hexcone hue in degrees ``[0, 360)`` and saturation in ``[0, 1]``."""
    px = img.pixels.astype(np.float64) / 255.0
    r, g, b = px[..., 0], px[..., 1], px[..., 2]
    mx = px.max(axis=2)
    mn = px.min(axis=2)
    c = mx - mn
    safe = np.where(c > 0, c, 1.0)
    hue = np.select(
        [c == 0, mx == r, mx == g],
        [0.0, ((g - b) / safe) % 6.0, (b - r) / safe + 2.0],
        (r - g) / safe + 4.0,
    ) * 60.0
    hue = np.mod(hue, 360.0)
    sat = np.where(mx > 0, c / np.where(mx > 0, mx, 1.0), 0.0)
    return hue, sat


def hs_histogram(img: RgbImage, hue_bins: int = 50, sat_bins: int = 60) -> np.ndarray:
    """Hue-saturation count histogram, shape ``(hue_bins, sat_bins)``."""
    hue, sat = rgb_to_hue_sat(img)
    hi = np.minimum((hue * hue_bins / 360.0).astype(np.int64), hue_bins - 1)
    si = np.minimum((sat * sat_bins).astype(np.int64), sat_bins - 1)
    return np.bincount((hi * sat_bins + si).ravel(), minlength=hue_bins * sat_bins).reshape(hue_bins, sat_bins)


def bhattacharyya(h1: np.ndarray, h2: np.ndarray) -> float:
    """Bhattacharyya distance of two count histograms over the same bins.

    ``sqrt(1 - sum(sqrt(h1 * h2)) / sqrt(mean(h1) * mean(h2) * N**2))`` with
    ``N`` the number of bins. The result lies in ``[0, 1]``.
    """
    a = np.asarray(h1, dtype=np.float64).ravel()
    b = np.asarray(h2, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError("histograms must have the same number of bins")
    n = a.size
    norm = np.sqrt(a.mean() * b.mean() * n * n)
    if norm == 0:
        return 0.0 if not a.any() and not b.any() else 1.0
    coeff = np.sum(np.sqrt(a * b)) / norm
    return float(np.sqrt(max(0.0, 1.0 - coeff)))


def histogram_distance(cur: RgbImage, prev: RgbImage, cfg: DetectorConfig) -> float:
    return bhattacharyya(
        hs_histogram(cur, cfg.hue_bins, cfg.sat_bins), hs_histogram(prev, cfg.hue_bins, cfg.sat_bins)
    )


def histogram_check(cur: RgbImage, prev: Optional[RgbImage], cfg: DetectorConfig) -> bool:
    if prev is None:
        return False
    return histogram_distance(cur, prev, cfg) > cfg.hist_threshold


@dataclass(frozen=True)
class FlowStats:
    """Sparse-flow summary between two frames.

    ``median_error`` is the median forward-backward error in pixels over the
    features tracked both ways; ``median_flow`` the median displacement.
    """

    corners: int
    matched_fraction: float
    median_error: float
    median_flow: Tuple[float, float]

    @property
    def abstained(self) -> bool:
        return self.corners == 0


_LK_PARAMS = dict(
    winSize=(21, 21),
    maxLevel=2,  # three pyramid levels including the base image
    criteria=(cv2.TERM_CRITERIA_EPS | cv2.TERM_CRITERIA_COUNT, 30, 0.01),
)


def flow_stats(cur: np.ndarray, prev: np.ndarray, cfg: DetectorConfig) -> FlowStats:
    """Shi-Tomasi corners on ``prev`` tracked into ``cur`` with pyramidal LK.

    Inputs are 8-bit grayscale images. Returns zero corners when ``prev`` has
    fewer than ``cfg.min_corners`` usable features.
    """
    prev, cur = _common_crop(np.ascontiguousarray(prev), np.ascontiguousarray(cur))
    prev = np.ascontiguousarray(prev)
    cur = np.ascontiguousarray(cur)
    pts = cv2.goodFeaturesToTrack(prev, maxCorners=cfg.max_corners, qualityLevel=0.01, minDistance=10)
    if pts is None or len(pts) < cfg.min_corners:
        return FlowStats(0, 1.0, 0.0, (0.0, 0.0))
    fwd, st1, _ = cv2.calcOpticalFlowPyrLK(prev, cur, pts, None, **_LK_PARAMS)
    back, st2, _ = cv2.calcOpticalFlowPyrLK(cur, prev, fwd, None, **_LK_PARAMS)
    ok = (st1.ravel() == 1) & (st2.ravel() == 1)
    frac = float(ok.mean())
    if not ok.any():
        return FlowStats(len(pts), 0.0, float("inf"), (0.0, 0.0))
    p0 = pts.reshape(-1, 2)[ok]
    err = np.linalg.norm(back.reshape(-1, 2)[ok] - p0, axis=1)
    flow = np.median(fwd.reshape(-1, 2)[ok] - p0, axis=0)
    return FlowStats(len(pts), frac, float(np.median(err)), (float(flow[0]), float(flow[1])))


def optical_flow_check(cur: RgbImage, prev: Optional[RgbImage], cfg: DetectorConfig) -> bool:
    if prev is None:
        return False
    stats = flow_stats(cur.gray(), prev.gray(), cfg)
    return _flow_alert(stats, cfg)


def _flow_alert(stats: FlowStats, cfg: DetectorConfig) -> bool:
    if stats.abstained:
        return False
    return stats.matched_fraction < cfg.flow_min_match_fraction or stats.median_error > cfg.flow_error_threshold


# --------------------------------------------------------------------------
# Combined
# --------------------------------------------------------------------------

DETECTOR_NAMES = ("constant_meta", "frame_id", "timestamp", "timestamp_rate", "mse", "histogram", "optical_flow")


@dataclass(frozen=True)
class DetectorVerdict:
    frame_index: int
    block_id: int
    constant_meta: bool
    frame_id: bool
    timestamp: bool
    timestamp_rate: bool
    mse: bool
    histogram: bool
    optical_flow: bool

    @property
    def combined(self) -> bool:
        return any(getattr(self, name) for name in DETECTOR_NAMES)

    def csv_row(self) -> list:
        return [self.frame_index, self.block_id] + [int(getattr(self, n)) for n in DETECTOR_NAMES] + [int(self.combined)]


@dataclass(frozen=True)
class DetectorScores:
    """Raw scores behind the content detectors, for DET curves."""

    mse: float
    hist_distance: float
    flow: Optional[FlowStats]


def evaluate_pair(
    index: int, cur: FrameObservation, prev: Optional[FrameObservation], cfg: DetectorConfig
) -> Tuple[DetectorVerdict, Optional[DetectorScores]]:
    """All seven checks for one frame; the first frame never alerts."""
    if prev is None:
        return DetectorVerdict(index, cur.leader.block_id, *([False] * 7)), None
    mse = frame_mse(cur.raw, prev.raw)
    dist = histogram_distance(cur.image, prev.image, cfg)
    flow = flow_stats(cur.image.gray(), prev.image.gray(), cfg)
    verdict = DetectorVerdict(
        index,
        cur.leader.block_id,
        constant_meta=constant_meta_check(cur.leader, cfg),
        frame_id=frame_id_check(cur.leader, prev.leader, cfg),
        timestamp=timestamp_check(cur.leader, prev.leader, cfg),
        timestamp_rate=timestamp_rate_check(cur.leader, prev.leader, cur.arrival_ns - prev.arrival_ns, cfg),
        mse=mse < cfg.mse_threshold,
        histogram=dist > cfg.hist_threshold,
        optical_flow=_flow_alert(flow, cfg),
    )
    return verdict, DetectorScores(mse, dist, flow)


def run_detectors(observations: Iterable[FrameObservation], cfg: DetectorConfig) -> List[DetectorVerdict]:
    verdicts = []
    prev = None
    for i, obs in enumerate(observations):
        verdicts.append(evaluate_pair(i, obs, prev, cfg)[0])
        prev = obs
    return verdicts


VERDICT_HEADER = ["frame_index", "block_id", *DETECTOR_NAMES, "combined"]


def verdict_csv(verdicts: Sequence[DetectorVerdict]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(VERDICT_HEADER)
    for v in verdicts:
        w.writerow(v.csv_row())
    return out.getvalue()
