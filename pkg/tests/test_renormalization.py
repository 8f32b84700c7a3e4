import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rwdre.core import SpaceTimePoint
from rwdre.errors import InvariantViolation, ParameterError
from rwdre.renormalization import (EstimateWithCI, ScaleLadder, bracket_speeds, build_ladder,
                                   concentration_diagnostic, displacement_table, estimate_pH,
                                   estimate_pH_tilde, estimate_speed, event_A, event_A_tilde,
                                   iroot, is_threatened, is_trapped, round_point,
                                   threatened_density, threatened_probability, trap_starts,
                                   trapped_probability, window_starts, z_value)
from rwdre.walker import JumpRule, WalkerPath

from conftest import within_sigma

ZERO, RIGHT, FAIR = JumpRule.constant(0), JumpRule.constant(1), JumpRule.blind()


# events

def test_event_A_examples():
    still = np.zeros(5)
    assert not event_A(still, 0.1, 10.0)
    assert event_A(still, 0.0, 10.0)
    assert event_A(np.array([1, 5]), 1.0, 4.0)


def test_event_A_tilde_examples():
    still = np.zeros(5)
    assert not event_A_tilde(still, -0.1, 10.0)
    assert event_A_tilde(still, 0.0, 10.0)
    assert event_A_tilde(np.array([-5, 1]), -1.0, 4.0)


@settings(max_examples=50, deadline=None)
@given(d=st.lists(st.integers(-30, 30), min_size=1, max_size=20),
       v=st.floats(-3, 3), dv=st.floats(0, 2), H=st.floats(1, 20))
def test_event_nesting(d, v, dv, H):
    d = np.array(d)
    if event_A(d, v + dv, H):
        assert event_A(d, v, H)
    if event_A_tilde(d, v, H):
        assert event_A_tilde(d, v + dv, H)


def test_window_starts_representatives():
    assert window_starts(4.0, 0.0).tolist() == [0, 1, 2, 3]
    assert window_starts(4.0, 0.5).tolist() == [1, 2, 3, 4]
    assert window_starts(3.5, 0.5).tolist() == [1, 2, 3]


# deviation probabilities

def test_pH_zero_rule():
    assert estimate_pH("blind", ZERO, 20.0, 0.5, 50, seed=1).point == 0.0
    assert estimate_pH_tilde("blind", ZERO, 20.0, -0.5, 50, seed=1).point == 0.0
    e = estimate_pH_tilde("blind", ZERO, 20.0, 0.0, 50, seed=1)
    assert e.point == 1.0 and e.half_width == 0.0


def _ring_count_oracle(H, n, rng):
    """Direct Poisson clocks on sites 0..: the always-right walker from y
    jumps at each arrival of its current site after it got there."""
    starts = {0.0: range(0, math.ceil(H)), 0.5: range(1, math.ceil(H + 0.5))}
    hits = {w: 0 for w in starts}
    top = math.ceil(H + 0.5) + 4 * int(H) + 40
    for _ in range(n):
        clocks = [np.sort(rng.uniform(0, H, rng.poisson(H))) for _ in range(top)]
        reach = {}
        for y in range(0, math.ceil(H + 0.5)):
            x, t = y, 0.0
            while True:
                c = clocks[x]
                k = np.searchsorted(c, t, side="right")
                if k == c.size:
                    break
                x, t = x + 1, c[k]
            reach[y] = x - y
        for w, ys in starts.items():
            hits[w] += any(reach[y] >= 2 * H for y in ys)
    return max(hits.values()) / n


def test_pH_right_rule_matches_ring_oracle():
    n = 10000
    est = estimate_pH("blind", RIGHT, 10.0, 2.0, n, seed=2)
    ref = _ring_count_oracle(10.0, n, np.random.default_rng(7))
    sig = math.sqrt(2 * max(ref, 1e-4) * (1 - ref) / n)
    assert abs(est.point - ref) <= 3 * sig


def test_pH_curves_nested_on_shared_seeds():
    tab = displacement_table("spinflip", JumpRule.occupation_bias(), 30.0, 100, seed=3)
    grid = np.linspace(-1, 1, 41)
    p = [tab.p_hat(v).point for v in grid]
    pt = [tab.p_tilde_hat(v).point for v in grid]
    assert all(b <= a for a, b in zip(p, p[1:]))
    assert all(b >= a for a, b in zip(pt, pt[1:]))


def test_pH_tilde_symmetric_rule_at_zero():
    e = estimate_pH_tilde("blind", FAIR, 20.0, 0.0, 400, seed=4)
    assert e.point + e.half_width >= 0.5


def test_max_over_representatives():
    tab = displacement_table("blind", FAIR, 7.5, 60, seed=5)
    v = 0.3
    k = (tab.highs >= v * 7.5).sum(axis=0)
    assert tab.p_hat(v).point == k.max() / 60


def test_estimate_speed_zero_rule_exact():
    e = estimate_speed("blind", ZERO, 100.0, 30, seed=0)
    assert e.point == 0.0 and e.half_width == 0.0


def test_speed_independent_of_worker_count():
    a = estimate_speed("spinflip", JumpRule.occupation_bias(), 40.0, 12, seed=9, workers=1)
    b = estimate_speed("spinflip", JumpRule.occupation_bias(), 40.0, 12, seed=9, workers=2)
    assert a == b


# brackets

def test_bracket_blind_fair_rule():
    grid = np.round(np.linspace(-1, 1, 21), 10)
    b = bracket_speeds("blind", FAIR, [400], grid, 0.05, 300, seed=6)
    assert b.v_plus[0] is not None and b.v_minus[0] is not None
    assert b.v_minus[0] <= b.v_plus[0] + b.step
    assert b.v_plus[0] > 0 > b.v_minus[0]


@pytest.mark.slow
def test_bracket_right_rule_near_one():
    grid = np.round(np.linspace(0, 2, 21), 10)
    b = bracket_speeds("blind", RIGHT, [2000], grid, 0.05, 200, seed=3)
    assert abs(b.v_plus[0] - 1.0) <= b.step + 1e-12


def test_bracket_open_ended_flag():
    b = bracket_speeds("blind", RIGHT, [20], [-0.2, -0.1], 0.05, 30, seed=1)
    assert b.open_ended == [True]
    assert b.widths == [math.inf]


def test_bracket_grid_validation():
    with pytest.raises(ParameterError):
        bracket_speeds("blind", FAIR, [20], [0.1, 0.0], 0.05, 10, seed=1)


# trapping

def test_round_point_examples():
    assert round_point(SpaceTimePoint(5, 3.0), 16, 0.5) == SpaceTimePoint(4, 3.0)
    assert round_point((-5, 1.0), 16, 0.5) == (-6, 1.0)
    assert round_point((4, 2.0), 16, 0.5) == (4, 2.0)
    with pytest.raises(ParameterError):
        round_point((1, 0.0), 7, 0.5)


@settings(max_examples=60, deadline=None)
@given(x1=st.integers(-10**6, 10**6), x2=st.integers(-10**6, 10**6),
       H=st.floats(8, 1e4), delta=st.floats(0.5, 1.0))
def test_round_point_idempotent_and_monotone(x1, x2, H, delta):
    r1 = round_point((x1, 0.0), H, delta)
    assert round_point(r1, H, delta) == r1
    if x1 <= x2:
        assert r1[0] <= round_point((x2, 0.0), H, delta)[0]


def test_is_trapped_examples():
    w = (0, 0.0)
    assert trap_starts(w, 8, 0.25).tolist() == [2, 3, 4]
    assert is_trapped(w, 8, 0.25, -0.5, np.array([-3, 1]))
    assert not is_trapped(w, 8, 0.25, -0.5, np.array([0, 1]))
    assert is_trapped(w, 8, 0.25, -0.5, np.array([-2]))


def test_is_threatened_examples():
    middle = lambda x, t, H: t == H
    never = lambda x, t, H: False
    trapped_at_w = lambda x, t, H: (x, t) == (0, 0.0)
    assert is_threatened((0, 0.0), 10, 1, 0.4, 0.5, -0.5, trapped_at_w)
    assert is_threatened((0, 0.0), 10, 3, 0.4, 0.5, -0.5, middle)
    assert not is_threatened((0, 0.0), 10, 1, 0.4, 0.5, -0.5, middle)
    assert not is_threatened((0, 0.0), 10, 3, 0.4, 0.5, -0.5, never)


def _density_setup(flags):
    ladder = build_ladder("main", 16, 3)
    path = WalkerPath(SpaceTimePoint(0, 0.0), [], [], float(ladder.L[3]))
    step = ladder.L[1]
    hot = {j * step for j, f in enumerate(flags) if f}
    return ladder, path, (lambda x, t, H: t in hot)


@pytest.mark.parametrize("flags, want", [([1, 1, 1, 1], 1.0), ([0, 0, 0, 0], 0.0),
                                         ([1, 0, 1, 0], 0.5), ([0, 1, 1, 0], 0.5)])
def test_threatened_density_counts(flags, want):
    ladder, path, oracle = _density_setup(flags)
    assert ladder.L[3] // ladder.L[1] == 4
    assert threatened_density(path, 1.0, ladder, 0, oracle, 0.25, 0.0) == want


def test_threatened_density_ladder_mismatch():
    ladder, path, oracle = _density_setup([1, 1, 1, 1])
    short = WalkerPath(SpaceTimePoint(0, 0.0), [], [], 100.0)
    with pytest.raises(ParameterError):
        threatened_density(short, 1.0, ladder, 0, oracle, 0.25, 0.0)


def test_trapped_probability_extremes():
    # the always-left walker moves about -H, far below (v_minus + delta) H
    assert trapped_probability("blind", JumpRule.constant(-1), 40.0, 0.2, 0.0, 30, 1).point == 1
    assert trapped_probability("blind", ZERO, 40.0, 0.2, -0.5, 30, 1).point == 0
    e = threatened_probability("blind", ZERO, 40.0, 0.2, -0.5, 0.5, 3, 20, 1)
    assert e.point == 0


# ladders

def test_ladder_examples():
    main = build_ladder("main", 10**10, 1)
    assert main.l[0] == 316 and main.L[1] == 3_160_000_000_000
    ce = build_ladder("counterexample", 10**5, 2)
    assert ce.l[0] == 10 and ce.L[1] == 10**6


@settings(max_examples=60, deadline=None)
@given(L0=st.integers(2, 10**9), variant=st.sampled_from(["main", "counterexample"]))
def test_ladder_sandwich(L0, variant):
    lad = build_ladder(variant, L0, 2)
    m = 4 if variant == "main" else 5
    for k in range(lad.k_max):
        assert lad.L[k + 1] == lad.l[k] * lad.L[k]
        assert lad.L[k + 1] ** m <= lad.L[k] ** (m + 1)


def test_ladder_overflow_and_tamper():
    with pytest.raises(ParameterError):
        build_ladder("main", 10**10, 10)
    lad = build_ladder("main", 10**4, 2)
    bad = ScaleLadder("main", lad.L0, [lad.L[0], lad.L[1] + 1, lad.L[2]], lad.l)
    with pytest.raises(InvariantViolation):
        bad.check()


def test_ladder_densities():
    rho = build_ladder("main", 10**10, 2).densities()
    assert min(rho) >= 0.5
    with pytest.raises(ParameterError):
        build_ladder("main", 16, 3).densities()


def test_iroot_exact():
    for n in [0, 1, 15, 16, 17, 10**20, 10**20 - 1, 2**62]:
        r = iroot(n, 4)
        assert r**4 <= n < (r + 1) ** 4


# concentration

def test_concentration_zero_rule():
    tab = concentration_diagnostic("blind", ZERO, [10, 100], 0.1, 50, seed=1, v_hat=0.0)
    assert tab.frequencies == [0.0, 0.0]


def test_concentration_fair_rule_decreases():
    tab = concentration_diagnostic("blind", FAIR, [100, 1000], 0.1, 2000, seed=2, v_hat=0.0)
    (_, a), (_, b) = tab.rows
    assert a.point - b.point > 3 * math.sqrt(a.sigma**2 + b.sigma**2)


def test_estimate_with_ci_formulas():
    e = EstimateWithCI.proportion(30, 100, level=0.95)
    assert math.isclose(e.half_width, z_value(0.95) * math.sqrt(0.3 * 0.7 / 100))
    assert math.isclose(e.lo, 0.3 - e.half_width)
    m = EstimateWithCI.mean([1.0, 3.0], level=0.9)
    assert m.point == 2.0
