"""Closed-form attack probabilities and their oracles.

An attacker needs ``r`` consecutive successful injections (the ADAS must see
the sign for ``r`` frames before it reacts). With per-frame success ``p`` this
module gives the probability of such a run within ``n`` frames, the expected
wait for the first run, brute-force and Monte Carlo checks of both, and DET
curves for the passive detectors.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import mpmath
import numpy as np


# --------------------------------------------------------------------------
# Per-frame probabilities of the width defense
# --------------------------------------------------------------------------

def p_detection(b: int, d_max: int = 1) -> float:
    """Chance that a full frame at a fixed width matches none of the last
    ``d_max + 1`` requested widths."""
    if b < 0 or d_max < 0:
        raise ValueError("b and d_max must be non-negative")
    return (1.0 - 2.0**-b) ** (d_max + 1)


def p_protection(b: int) -> float:
    """Chance that a stripe or patch is laid out at a width other than the
    current one."""
    if b < 0:
        raise ValueError("b must be non-negative")
    return 1.0 - 2.0**-b


def attack_success_prob(b: int, kind: str = "fullframe", d_max: int = 1) -> float:
    """Per-frame success ``p``: ``1 - P_detection`` or ``1 - P_protection``."""
    if kind == "fullframe":
        return 1.0 - p_detection(b, d_max)
    if kind in ("stripe", "patch"):
        return 1.0 - p_protection(b)
    raise ValueError(f"unknown attack kind {kind!r}")


# --------------------------------------------------------------------------
# Success runs
# --------------------------------------------------------------------------

def _beta_terms_log10(n: int, r: int, p: float, binom) -> float:
    q = 1.0 - p
    worst = 0.0
    if p == 0.0 or q == 0.0:
        return worst
    for ell in range(1, n // (r + 1) + 1):
        c = binom(n, r, ell)
        if c <= 0:
            continue
        worst = max(worst, (math.log(c) + ell * (math.log(q) + r * math.log(p))) / math.log(10))
    return worst


def _uspensky_binom(n: int, r: int, ell: int) -> int:
    return math.comb(n - ell * r, ell)


def _literal_binom(n: int, r: int, ell: int) -> int:
    return math.comb(n, n - ell * r)


def _beta(n: int, r: int, p: float, binom) -> mpmath.mpf:
    """Alternating sum for the probability of no success run of length ``r``.

    Terms grow far beyond the result for large ``n``, so the working precision
    is raised to cover the largest term plus 20 significant digits.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    digits = int(_beta_terms_log10(n, r, p, binom)) + 25
    with mpmath.workdps(max(30, digits)):
        pm = mpmath.mpf(p)
        x = (1 - pm) * pm**r
        total = mpmath.mpf(0)
        for ell in range(0, n // (r + 1) + 1):
            total += (-1) ** ell * binom(n, r, ell) * x**ell
        return +total


def beta_run(n: int, r: int, p: float) -> float:
    """``sum_l (-1)^l C(n - l r, l) (q p^r)^l`` over ``0 <= l <= n // (r + 1)``."""
    return float(_beta(n, r, p, _uspensky_binom))


def beta_run_literal(n: int, r: int, p: float) -> float:
    """The same sum with ``C(n, n - l r)`` as the binomial factor."""
    return float(_beta(n, r, p, _literal_binom))


def _p_run(n: int, r: int, p: float, binom) -> float:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    if r == 0:
        return 1.0
    if r > n:
        return 0.0
    digits = max(int(_beta_terms_log10(n, r, p, binom)) + 25, 30)
    with mpmath.workdps(digits):
        pm = mpmath.mpf(p)
        value = 1 - _beta(n, r, p, binom) + pm**r * _beta(n - r, r, p, binom)
        return float(min(max(value, 0), 1))


def p_run(n: int, r: int, p: float) -> float:
    """Probability of at least ``r`` consecutive successes in ``n`` trials.

    ``P = 1 - beta(n, r) + p**r * beta(n - r, r)``; returns 0 for ``r > n``
    and 1 for ``r == 0``.
    """
    return _p_run(n, r, p, _uspensky_binom)


def p_run_literal(n: int, r: int, p: float) -> float:
    """:func:`p_run` evaluated with the ``C(n, n - l r)`` binomial; kept only
    to show that it disagrees with enumeration."""
    return _p_run(n, r, p, _literal_binom)


def brute_force_run_prob(n: int, r: int, p: float) -> float:
    """Exact run probability by dynamic programming over the current run length."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    if r == 0:
        return 1.0
    if r > n:
        return 0.0
    q = 1.0 - p
    state = np.zeros(r)  # state[j]: no run yet, current streak j
    state[0] = 1.0
    done = 0.0
    for _ in range(n):
        nxt = np.zeros(r)
        nxt[0] = q * state.sum()
        nxt[1:] = p * state[:-1]
        done += p * state[-1]
        state = nxt
    return float(done)


def enumerate_run_prob(n: int, r: int, p: float) -> float:
    """Exact run probability by listing all ``2**n`` outcome strings (``n <= 20``)."""
    if n > 20:
        raise ValueError("enumeration is limited to n <= 20")
    if r == 0:
        return 1.0
    if r > n:
        return 0.0
    codes = np.arange(2**n, dtype=np.int64)
    bits = (codes[:, None] >> np.arange(n)) & 1
    streak = np.zeros(len(codes), dtype=np.int64)
    hit = np.zeros(len(codes), dtype=bool)
    for i in range(n):
        streak = np.where(bits[:, i] == 1, streak + 1, 0)
        hit |= streak >= r
    ones = bits.sum(axis=1)
    weights = p**ones * (1.0 - p) ** (n - ones)
    return float(weights[hit].sum())


# --------------------------------------------------------------------------
# Waiting time for the first run
# --------------------------------------------------------------------------

def expected_attempts(r: int, p: float) -> float:
    """Mean number of trials until the first run of ``r`` successes:
    ``sum_{l=1..r} p**-l``."""
    if r < 0:
        raise ValueError("r must be non-negative")
    if r == 0:
        return 0.0
    if p <= 0.0:
        return math.inf
    return float(sum(p**-ell for ell in range(1, r + 1)))


def expected_attempts_from_zero(r: int, p: float) -> float:
    """The same sum started at ``l = 0``; one trial longer than
    :func:`expected_attempts`, which Monte Carlo rejects."""
    return expected_attempts(r, p) + 1.0


def expected_time(r: int, p: float, fps: float) -> float:
    """Expected seconds until the first run at ``fps`` frames per second."""
    if fps <= 0:
        raise ValueError("fps must be positive")
    return expected_attempts(r, p) / fps


def n_stop(t_stop: float, fps: float) -> int:
    """Frames the ADAS needs to see a sign for ``t_stop`` seconds."""
    if t_stop < 0 or fps <= 0:
        raise ValueError("t_stop must be >= 0 and fps > 0")
    # round away float noise such as 5.25 * 20 = 105.00000000000001
    return math.ceil(round(t_stop * fps, 9))


def run_lengths(flags: Sequence[bool]) -> np.ndarray:
    """Lengths of the maximal runs of true values in ``flags``."""
    x = np.asarray(flags, dtype=np.int8)
    if x.size == 0:
        return np.zeros(0, dtype=np.int64)
    edges = np.diff(np.concatenate(([0], x, [0])))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return (ends - starts).astype(np.int64)


def monte_carlo_attempts(
    r: int, p: float, episodes: int, seed: int, chunk: int = 1 << 22
) -> Tuple[float, float]:
    """Mean and standard error of the trials needed for a run of ``r``.

    Simulates one long Bernoulli(p) stream and restarts the count after each
    completed run, so consecutive episodes are independent.
    """
    if r < 1 or not 0.0 < p <= 1.0:
        raise ValueError("need r >= 1 and 0 < p <= 1")
    rng = np.random.default_rng(seed)
    lengths: List[np.ndarray] = []
    found = 0
    offset = 0  # index of the chunk's first trial in the whole stream
    carry = 0  # successes since the last completion at the end of the stream so far
    last = -1  # index of the last completion
    while found < episodes:
        x = rng.random(chunk) < p
        ext = np.concatenate((np.ones(carry, dtype=bool), x))
        base = offset - carry
        edges = np.diff(np.concatenate(([0], ext.astype(np.int8), [0])))
        starts = np.flatnonzero(edges == 1)
        runs = np.flatnonzero(edges == -1) - starts
        full = runs // r
        # completions at start + r*j - 1 for j = 1..full
        owner = np.repeat(starts, full)
        j = np.arange(full.sum()) - np.repeat(np.cumsum(full) - full, full) + 1
        pos = base + owner + r * j - 1
        if pos.size:
            lengths.append(np.diff(np.concatenate(([last], pos))))
            last = int(pos[-1])
            found += pos.size
        tail = runs[-1] if runs.size and starts[-1] + runs[-1] == ext.size else 0
        carry = int(tail % r)
        offset += chunk
    n = np.concatenate(lengths)[:episodes].astype(np.float64)
    return float(n.mean()), float(n.std(ddof=1) / math.sqrt(n.size))


# --------------------------------------------------------------------------
# DET curves
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DetPoint:
    false_positive_rate: float
    false_negative_rate: float
    threshold: float


@dataclass(frozen=True)
class DetCurve:
    points: Tuple[DetPoint, ...]

    def csv_text(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["threshold", "fpr", "fnr"])
        for pt in self.points:
            w.writerow([repr(pt.threshold), repr(pt.false_positive_rate), repr(pt.false_negative_rate)])
        return out.getvalue()

    def zero_error_thresholds(self) -> List[float]:
        return [pt.threshold for pt in self.points if pt.false_positive_rate == 0 and pt.false_negative_rate == 0]


def det_curve(
    scores_normal: Iterable[float],
    scores_attack: Iterable[float],
    thresholds: Iterable[float],
    flag_below: bool = False,
) -> DetCurve:
    """False-positive and false-negative rates at each threshold.

    A score is flagged when it is above the threshold, or below it when
    ``flag_below`` is set (the MSE detector alerts on too-similar frames).
    """
    normal = np.asarray(list(scores_normal), dtype=np.float64)
    attack = np.asarray(list(scores_attack), dtype=np.float64)
    if normal.size == 0 or attack.size == 0:
        raise ValueError("both score sets must be non-empty")
    points = []
    for t in sorted(float(t) for t in thresholds):
        flag_n = normal < t if flag_below else normal > t
        flag_a = attack < t if flag_below else attack > t
        points.append(DetPoint(float(flag_n.mean()), float(1.0 - flag_a.mean()), t))
    return DetCurve(tuple(points))


def read_scores(text: str) -> List[float]:
    """One real per non-blank line."""
    return [float(line) for line in text.splitlines() if line.strip()]
