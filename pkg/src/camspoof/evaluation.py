"""End-to-end experiment drivers: attack Monte Carlo, protection rates, DET scores."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from camspoof.analytics import p_detection, p_protection, run_lengths
from camspoof.attacker import AttackKind, AttackPlan, forge_stripe_bytes
from camspoof.detectors import DetectorConfig, histogram_distance
from camspoof.pixels import (
    SIGN_THRESHOLD,
    PixelBuffer,
    SceneConfig,
    SignLabel,
    demosaic,
    make_template,
    mosaic,
    paste,
    scene_rgb,
    synth_frame,
    toy_sign_detect,
)
from camspoof.protocol import MAX_PAYLOAD
from camspoof.sim import DefensePlan, Link, SimConfig, run_session

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# Full-frame attack against the width defense
# --------------------------------------------------------------------------

@dataclass
class MonteCarloReport:
    """Per-frame verdicts of fixed-width full-frame attacks, aggregated.

    ``std_error`` is the plain binomial standard error. Consecutive verdicts
    share a requested width, so the true spread is somewhat larger.
    """

    b: int
    d_max: int
    fps: float
    trials: int
    frames_per_trial: int
    seed: int
    attack_frames: int
    detected: int
    run_histogram: Dict[int, int] = field(default_factory=dict)

    @property
    def detection_rate(self) -> float:
        return self.detected / self.attack_frames

    @property
    def closed_form(self) -> float:
        return p_detection(self.b, self.d_max)

    @property
    def std_error(self) -> float:
        p = self.closed_form
        return math.sqrt(p * (1 - p) / self.attack_frames)

    @property
    def z_score(self) -> float:
        return (self.detection_rate - self.closed_form) / self.std_error

    @property
    def max_run(self) -> int:
        return max(self.run_histogram, default=0)

    @property
    def max_run_seconds(self) -> float:
        return self.max_run / self.fps

    @property
    def max_run_probability(self) -> float:
        """Share of attack frames that start an undetected run of maximal length."""
        if not self.run_histogram:
            return 0.0
        return self.run_histogram[self.max_run] / self.attack_frames

    @property
    def modal_run(self) -> int:
        if not self.run_histogram:
            return 0
        return max(self.run_histogram, key=lambda k: (self.run_histogram[k], -k))

    def summary(self) -> dict:
        return {
            "b": self.b,
            "d_max": self.d_max,
            "fps": self.fps,
            "trials": self.trials,
            "frames_per_trial": self.frames_per_trial,
            "seed": self.seed,
            "attack_frames": self.attack_frames,
            "detection_rate": self.detection_rate,
            "closed_form": self.closed_form,
            "binomial_std_error": self.std_error,
            "z_score": self.z_score,
            "run_histogram": {str(k): v for k, v in sorted(self.run_histogram.items())},
            "max_run": self.max_run,
            "max_run_seconds": self.max_run_seconds,
            "max_run_probability": self.max_run_probability,
        }


def trial_key(seed: int, trial: int) -> bytes:
    return np.random.default_rng([seed, trial]).bytes(16)


def monte_carlo_attack(
    b: int,
    frames: int = 100_000,
    trials: int = 100,
    seed: int = 0,
    d_max: int = 1,
    fps: float = 20.0,
    w_max: int = 32,
    height: int = 4,
    attack_width: Optional[int] = None,
) -> MonteCarloReport:
    """Seeded sessions of a full-frame attacker at a fixed width vs the defense.

    Frames are tiny (``w_max`` x ``height``) since only leader widths matter.
    Each trial draws its own RC4 key from ``(seed, trial)``; the attacker
    starts at slot 1 and fabricates ``frames // trials`` frames.
    """
    per_trial = frames // trials
    if per_trial < 1:
        raise ValueError("need at least one frame per trial")
    attack_width = w_max if attack_width is None else attack_width
    fake = PixelBuffer(attack_width, height, bytes(attack_width * height))
    detected = 0
    total = 0
    hist: Counter = Counter()
    for trial in range(trials):
        cfg = SimConfig(
            scene=SceneConfig(seed=seed + trial, width=w_max, height=height),
            fps=fps,
            duration_frames=per_trial + 1,
            seed=(seed * 1_000_003 + trial) % 2**64,
        )
        plan = AttackPlan(AttackKind.FullFrame, 1, per_trial, fake, attack_width)
        defense = DefensePlan(trial_key(seed, trial), b, d_max, w_max)
        result = run_session(cfg, plan, defense, header={}, keep_records=False)
        valid = [f.width_verdict.valid for f in result.frames if f.link is Link.AttackerToAdas]
        total += len(valid)
        detected += len(valid) - sum(valid)
        hist.update(run_lengths(valid).tolist())
    return MonteCarloReport(b, d_max, fps, trials, per_trial, seed, total, detected, dict(hist))


# --------------------------------------------------------------------------
# Protection by width mismatch
# --------------------------------------------------------------------------

@dataclass
class ProtectionBucket:
    width_difference: int
    injections: int = 0
    recognized: int = 0
    by_kind: Dict[str, List[int]] = field(default_factory=dict)

    @property
    def defense_rate(self) -> float:
        return 1.0 - self.recognized / self.injections if self.injections else float("nan")

    @property
    def recognition_rate(self) -> float:
        return self.recognized / self.injections if self.injections else float("nan")


@dataclass
class ProtectionReport:
    b: int
    w_max: int
    height: int
    stripe_rows: int
    seed: int
    buckets: Dict[int, ProtectionBucket]

    def aggregate_defense_rate(self) -> float:
        """Defense rate with the two widths drawn independently and uniformly
        from the ``2**b`` symbols, as a stripe attacker faces each frame."""
        m = 2**self.b
        total = 0.0
        for d, bucket in self.buckets.items():
            pairs = m - abs(d) // 2
            total += pairs / (m * m) * bucket.defense_rate
        return total

    def summary(self) -> dict:
        return {
            "b": self.b,
            "w_max": self.w_max,
            "height": self.height,
            "stripe_rows": self.stripe_rows,
            "seed": self.seed,
            "p_protection": p_protection(self.b),
            "aggregate_defense_rate": self.aggregate_defense_rate(),
            "buckets": [
                {
                    "width_difference": d,
                    "injections": bk.injections,
                    "recognized": bk.recognized,
                    "defense_rate": bk.defense_rate,
                    "by_kind": bk.by_kind,
                }
                for d, bk in sorted(self.buckets.items())
            ],
        }


def received_view(
    forged: bytes, camera: PixelBuffer, search_rows: int, template_height: int
) -> PixelBuffer:
    """Top of the receiver's frame after a race injection.

    The forged bytes replace the start of the camera frame and are read at the
    camera's width. Only enough rows for the sign search are kept, plus two so
    the demosaic kernel sees real neighbours at the bottom edge.
    """
    data = bytearray(camera.data)
    data[: len(forged)] = forged[: len(data)]
    rows = min(camera.height, search_rows + template_height + 2)
    rows -= rows % 2
    return PixelBuffer(camera.width, rows, bytes(data[: rows * camera.width]))


def protection_eval(
    b: int = 3,
    injections_per_difference: int = 500,
    seed: int = 0,
    w_max: int = 320,
    height: int = 192,
    stripe_rows: int = 64,
    labels: Sequence[SignLabel] = (SignLabel.StopSign, SignLabel.RedLight),
    corpus_seeds: int = 6,
    corpus_frames: int = 40,
    max_payload: int = MAX_PAYLOAD,
    differences: Optional[Sequence[int]] = None,
) -> ProtectionReport:
    """Recognition of injected signs for every feasible width difference.

    The width difference is injected width minus the width the receiver
    reads the frame at. Injections alternate between stripe (sign on a flat
    canvas) and patch (sign on the previous frame); the template, scene,
    frame, sign position and the pair of symbols realizing the difference are
    drawn from a generator seeded with ``seed``.
    """
    rng = np.random.default_rng(seed)
    templates = [make_template(label) for label in labels]
    widths = [w_max - 2 * k for k in range(2**b)]
    span = 2 ** (b + 1) - 2
    diffs = list(range(-span, span + 1, 2)) if differences is None else list(differences)
    buckets: Dict[int, ProtectionBucket] = {}
    for d in diffs:
        pairs = [(wi, wr) for wi in widths for wr in widths if wi - wr == d]
        if not pairs:
            raise ValueError(f"width difference {d} is not feasible at b={b}")
        bucket = ProtectionBucket(d, by_kind={"Stripe": [0, 0], "Patch": [0, 0]})
        for i in range(injections_per_difference):
            kind = AttackKind.Stripe if i % 2 == 0 else AttackKind.Patch
            tpl = templates[int(rng.integers(len(templates)))]
            w_inj, w_recv = pairs[int(rng.integers(len(pairs)))]
            scene = SceneConfig(seed=int(rng.integers(corpus_seeds)), width=w_max, height=height)
            idx = int(rng.integers(1, corpus_frames))
            row = 2 * int(rng.integers((stripe_rows - tpl.height) // 2 + 1))
            col = 2 * int(rng.integers((w_inj - tpl.width) // 2 + 1))
            plan = AttackPlan(kind, 0, 1, tpl, w_inj, stripe_rows, (row, col))
            if kind is AttackKind.Patch:
                forged = forge_stripe_bytes(plan, synth_frame(scene, idx - 1, w_inj).data, w_inj, max_payload)
            else:
                forged = forge_stripe_bytes(plan, None, None, max_payload)
            view = received_view(forged, synth_frame(scene, idx, w_recv), stripe_rows, tpl.height)
            hit = toy_sign_detect(demosaic(view), tpl, rows=(0, stripe_rows)) >= SIGN_THRESHOLD
            bucket.injections += 1
            bucket.recognized += int(hit)
            bucket.by_kind[kind.value][0] += 1
            bucket.by_kind[kind.value][1] += int(hit)
        buckets[d] = bucket
        logger.info("width difference %+d: defense rate %.4f", d, bucket.defense_rate)
    return ProtectionReport(b, w_max, height, stripe_rows, seed, buckets)


# --------------------------------------------------------------------------
# Histogram detector scores for DET curves
# --------------------------------------------------------------------------

def histogram_det_scores(
    pairs: int = 200, seed: int = 0, width: int = 320, height: int = 192, corpus_seeds: int = 12
) -> Tuple[List[float], List[float]]:
    """Histogram distances for clean consecutive frames and for attack starts.

    A normal pair is two consecutive frames of one scene. An attack pair is a
    real frame followed by a fabricated frame: a stop sign pasted into a scene
    of another location. Real scenes use seeds ``0..corpus_seeds-1`` and
    fabricated ones the next ``corpus_seeds`` seeds.
    """
    rng = np.random.default_rng(seed)
    cfg = DetectorConfig(width, height)
    stop = make_template(SignLabel.StopSign)
    normal, attack = [], []
    for _ in range(pairs):
        s_real = int(rng.integers(corpus_seeds))
        s_fake = corpus_seeds + int(rng.integers(corpus_seeds))
        idx = int(rng.integers(1, 100))
        real = SceneConfig(seed=s_real, width=width, height=height)
        prev = demosaic(synth_frame(real, idx - 1))
        cur = demosaic(synth_frame(real, idx))
        fake_rgb = scene_rgb(SceneConfig(seed=s_fake, width=width, height=height), 0)
        row = 2 * int(rng.integers((height - stop.height) // 2))
        col = 2 * int(rng.integers((width - stop.width) // 2))
        fake = demosaic(mosaic(paste(fake_rgb, stop, row, col)))
        normal.append(histogram_distance(cur, prev, cfg))
        attack.append(histogram_distance(fake, prev, cfg))
    return normal, attack
