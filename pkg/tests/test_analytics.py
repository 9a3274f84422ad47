import math
from fractions import Fraction

import numpy as np
import pytest

from camspoof.analytics import (
    attack_success_prob,
    beta_run,
    brute_force_run_prob,
    det_curve,
    enumerate_run_prob,
    expected_attempts,
    expected_attempts_from_zero,
    expected_time,
    monte_carlo_attempts,
    n_stop,
    p_detection,
    p_protection,
    p_run,
    p_run_literal,
    read_scores,
    run_lengths,
)

GRID_P = (0.1, 0.25, 0.5, 0.75, 0.9)
GRID = [(n, r, p) for n in range(1, 21) for r in range(1, n + 1) for p in GRID_P]


def test_per_frame_probabilities():
    assert p_detection(3, 1) == 0.765625
    assert p_detection(1, 0) == 0.5
    assert p_detection(40, 1) == pytest.approx(1.0)
    assert p_protection(1) == 0.5
    assert p_protection(3) == 0.875
    assert p_protection(0) == 0.0
    assert attack_success_prob(2, "fullframe") == pytest.approx(1 - 0.5625)
    assert attack_success_prob(2, "patch") == 0.25
    with pytest.raises(ValueError):
        attack_success_prob(2, "nope")


def _exact_enumeration(n, r, p):
    # rational arithmetic over all outcome strings
    p = Fraction(p)
    total = Fraction(0)
    for code in range(2**n):
        s = format(code, f"0{n}b")
        if "1" * r in s:
            k = s.count("1")
            total += p**k * (1 - p) ** (n - k)
    return total


def test_p_run_hand_example():
    assert _exact_enumeration(5, 2, 0.5) == Fraction(19, 32)
    assert p_run(5, 2, 0.5) == pytest.approx(19 / 32, abs=1e-15)
    assert brute_force_run_prob(5, 2, 0.5) == pytest.approx(19 / 32, abs=1e-15)


def test_p_run_edge_cases():
    assert p_run(3, 4, 0.5) == 0.0
    assert p_run(3, 0, 0.5) == 1.0
    for n, p in [(7, 0.3), (12, 0.9)]:
        assert p_run(n, 1, p) == pytest.approx(1 - (1 - p) ** n, abs=1e-12)
        assert p_run(n, n, p) == pytest.approx(p**n, abs=1e-12)
    assert p_run(10, 3, 1.0) == 1.0
    assert brute_force_run_prob(10, 3, 1.0) == 1.0
    assert p_run(10, 3, 0.0) == 0.0


def test_dp_matches_enumeration():
    for n, r, p in GRID[::7]:
        if n <= 14:
            assert brute_force_run_prob(n, r, p) == pytest.approx(enumerate_run_prob(n, r, p), abs=1e-12)


def test_p_run_matches_dp_on_full_grid():
    worst = max(abs(p_run(n, r, p) - brute_force_run_prob(n, r, p)) for n, r, p in GRID)
    assert worst < 1e-10


def test_literal_binomial_form_disagrees():
    bad = [g for g in GRID if abs(p_run_literal(*g) - brute_force_run_prob(*g)) > 1e-10]
    assert len(bad) > 100
    assert abs(p_run_literal(10, 3, 0.3) - brute_force_run_prob(10, 3, 0.3)) > 1e-3


def test_p_run_monotone():
    for n, r, p in GRID:
        v = p_run(n, r, p)
        if n < 20:
            assert p_run(n + 1, r, p) >= v - 1e-12
        if r < n:
            assert p_run(n, r + 1, p) <= v + 1e-12
    for n, r in [(10, 3), (20, 5)]:
        vals = [p_run(n, r, p) for p in GRID_P]
        assert vals == sorted(vals)


def test_p_run_large_n_is_stable():
    # a handful of runs in 10^4 frames; float64 would cancel catastrophically
    n, r, p = 10_000, 5, 0.25
    dp = brute_force_run_prob(n, r, p)
    assert p_run(n, r, p) == pytest.approx(dp, rel=1e-9)
    assert 0.0 < beta_run(n, r, p) < 1.0


def test_expected_attempts_closed_forms():
    assert expected_attempts(1, 0.5) == 2.0
    assert expected_attempts(5, 1.0) == 5.0
    assert expected_attempts_from_zero(5, 1.0) == 6.0
    assert expected_attempts(3, 0.0) == math.inf
    # b = 1, d_max = 1, full-frame: p = 0.25 gives seconds to wait
    assert expected_time(5, 0.25, 20) == pytest.approx(68.2)
    assert expected_time(5, 0.5, 20) == pytest.approx(3.1)


@pytest.mark.parametrize("r,p", [(1, 0.5), (2, 0.5), (3, 0.4), (5, 0.25)])
def test_expected_attempts_matches_monte_carlo(r, p):
    mean, se = monte_carlo_attempts(r, p, episodes=100_000, seed=r)
    assert abs(mean - expected_attempts(r, p)) / expected_attempts(r, p) < 0.02
    assert abs(mean - expected_attempts(r, p)) < 4 * se
    # the sum started at zero is off by a whole trial
    if r <= 3:
        assert abs(mean - expected_attempts_from_zero(r, p)) > 4 * se


def test_monte_carlo_attempts_certain_success():
    mean, se = monte_carlo_attempts(5, 1.0, episodes=1000, seed=0)
    assert mean == 5.0 and se == 0.0


def test_monte_carlo_attempts_is_deterministic():
    assert monte_carlo_attempts(3, 0.5, 5000, seed=9) == monte_carlo_attempts(3, 0.5, 5000, seed=9)


@pytest.mark.parametrize("t,n", [(2.58, 52), (5.25, 105), (0.0, 0), (0.25, 5)])
def test_n_stop(t, n):
    assert n_stop(t, 20) == n


def test_run_lengths():
    assert run_lengths([]).tolist() == []
    assert run_lengths([1, 1, 0, 1, 0, 0, 1, 1, 1]).tolist() == [2, 1, 3]
    assert run_lengths([0, 0]).tolist() == []


def test_det_separated_sets_reach_zero_error():
    curve = det_curve([0.1, 0.2, 0.15], [0.8, 0.9], np.arange(0, 1.01, 0.1))
    assert 0.5 in [round(t, 6) for t in curve.zero_error_thresholds()]
    fprs = [pt.false_positive_rate for pt in curve.points]
    fnrs = [pt.false_negative_rate for pt in curve.points]
    assert fprs == sorted(fprs, reverse=True)
    assert fnrs == sorted(fnrs)


def test_det_identical_sets_lie_on_diagonal():
    scores = np.random.default_rng(0).random(500)
    curve = det_curve(scores, scores, np.linspace(0, 1, 21))
    for pt in curve.points:
        assert pt.false_positive_rate + pt.false_negative_rate == pytest.approx(1.0)


def test_det_flag_below_for_mse():
    curve = det_curve([500, 800, 900], [0, 0, 3], [10], flag_below=True)
    assert curve.points[0].false_positive_rate == 0
    assert curve.points[0].false_negative_rate == 0


def test_det_csv_is_reproducible():
    a = det_curve([0.1, 0.3], [0.5, 0.7], [0.2, 0.4, 0.6]).csv_text()
    b = det_curve([0.1, 0.3], [0.5, 0.7], [0.6, 0.2, 0.4]).csv_text()
    assert a == b
    assert a.splitlines()[0] == "threshold,fpr,fnr"
    assert read_scores("0.5\n\n1.25\n") == [0.5, 1.25]
    with pytest.raises(ValueError):
        det_curve([], [1.0], [0.5])
