import math

import numpy as np
import pytest

from rwdre.core import Box, ClockSource, SpaceTimePoint, sample_clock_field
from rwdre.counterexample import (BLACK, COLOR_NAMES, GRAY, WHITE, ColorField, color_at,
                                  drift_window, fluctuation_experiment, generate_soup,
                                  run_drift_walker, soup_covariance_check, soup_width,
                                  touch_boxes, touch_union_bound)
from rwdre.environments.base import ConstantTrajectory
from rwdre.errors import ParameterError, QueryError
from rwdre.renormalization import build_ladder
from rwdre.walker import JumpRule, check_allowed_path, run_walker

from conftest import within_sigma


def covers_oracle(soup, r, x, t):
    """Rotate the point into the rectangle frame (tilt 30 degrees right
    for black, left for white) and compare against the half-sides."""
    k = soup.scale[r]
    L, w = soup.lengths[k], soup.widths[k]
    phi = math.radians(30.0) * (1 if soup.colors[r] == BLACK else -1)
    dx, dt = x - soup.cx[r], t - soup.ct[r]
    along = dx * math.sin(phi) + dt * math.cos(phi)
    across = dx * math.cos(phi) - dt * math.sin(phi)
    return abs(along) <= L / 2 + 1e-9 and abs(across) <= w / 2 + 1e-9


def color_oracle(soup, x, t):
    cover = [r for r in range(len(soup)) if covers_oracle(soup, r, x, t)]
    if not cover:
        return GRAY, cover
    best = max(cover, key=lambda r: (soup.scale[r], soup.heights[r]))
    return int(soup.colors[best]), cover


def test_mean_count_one_per_unit_window():
    n = 1000
    counts = []
    for s in range(n):
        soup = generate_soup(10**5, 0, Box(0, 1e5, 0, 1e5), seed=s)
        inside = (soup.cx >= 0) & (soup.cx < 1e5) & (soup.ct >= 0) & (soup.ct < 1e5)
        counts.append(int(inside.sum()))
    assert within_sigma(np.mean(counts), 1.0, 1.0 / math.sqrt(n))


def test_per_scale_counts_match_intensity():
    ladder = build_ladder("counterexample", 1000, 2)
    box = Box(0, 20000, 0, 20000)
    per = np.array([[((s.scale == k) & (s.cx >= 0) & (s.cx < 2e4) & (s.ct >= 0)
                      & (s.ct < 2e4)).sum() for k in range(3)]
                    for s in (generate_soup(1000, 2, box, seed) for seed in range(200))])
    for k in range(3):
        lam = 4e8 / float(ladder.L[k]) ** 2
        assert within_sigma(per[:, k].mean(), lam, math.sqrt(lam / 200))


def test_zero_area_window_is_empty():
    soup = generate_soup(1000, 2, (0.0, 0.0, 0.0, 100.0), seed=1)
    assert len(soup) == 0 and soup.window is None


def test_cover_multiplicity_at_origin():
    n = 2000
    ladder = build_ladder("counterexample", 100, 2)
    mult = np.zeros((n, 3))
    for s in range(n):
        soup = generate_soup(100, 2, Box(-1, 1, -1, 1), seed=s)
        for r in range(len(soup)):
            if covers_oracle(soup, r, 0.0, 0.0):
                mult[s, soup.scale[r]] += 1
    for k in range(3):
        L = float(ladder.L[k])
        lam = L * soup_width(L) / L**2
        assert within_sigma(mult[:, k].mean(), lam, math.sqrt(lam / n))


def test_color_rule_matches_oracle():
    box = Box(-300, 300, 0, 600)
    soup = generate_soup(100, 2, box, seed=3)
    field = ColorField(soup)
    rng = np.random.default_rng(1)
    seen_single_black = seen_nested = seen_gray = False
    for x, t in zip(rng.uniform(-300, 300, 4000), rng.uniform(0, 600, 4000)):
        want, cover = color_oracle(soup, x, t)
        assert field.color_code(x, t) == want
        assert color_at(field, (x, t)) == COLOR_NAMES[want]
        seen_gray |= not cover
        if len(cover) == 1 and soup.colors[cover[0]] == BLACK:
            seen_single_black = True
        scales = {int(soup.scale[r]) for r in cover}
        seen_nested |= len(scales) > 1
    assert seen_gray and seen_single_black and seen_nested


def test_larger_scale_wins():
    box = Box(-2000, 2000, 0, 4000)
    for seed in range(50):
        soup = generate_soup(100, 2, box, seed)
        big = [r for r in range(len(soup)) if soup.scale[r] == 2 and soup.colors[r] == WHITE
               and box.contains(soup.cx[r], soup.ct[r])]
        for r in big:
            for q in range(len(soup)):
                if soup.scale[q] != 1 or soup.colors[q] != BLACK:
                    continue
                if covers_oracle(soup, r, soup.cx[q], soup.ct[q]):
                    assert color_at(ColorField(soup), (soup.cx[q], soup.ct[q])) == "white"
                    return
    pytest.fail("no nested white/black pair found")


def test_color_outside_window():
    field = ColorField(generate_soup(100, 1, Box(0, 10, 0, 10), seed=1))
    with pytest.raises(QueryError):
        color_at(field, (11.0, 5.0))
    with pytest.raises(QueryError):
        field.state(3, 10.5)


def test_soup_is_deterministic_and_window_free():
    a = generate_soup(100, 2, Box(-500, 500, 0, 800), seed=7)
    b = generate_soup(100, 2, Box(-500, 500, 0, 800), seed=7)
    for attr in ("cx", "ct", "colors", "heights", "scale"):
        assert np.array_equal(getattr(a, attr), getattr(b, attr))
    small = generate_soup(100, 2, Box(-50, 50, 100, 200), seed=7)
    big = {(k, x, t) for k, x, t, _, _ in a.rectangles()}
    assert {(k, x, t) for k, x, t, _, _ in small.rectangles()} <= big
    fa, fs = ColorField(a), ColorField(small)
    for x in range(-50, 50, 7):
        for t in np.linspace(100, 199, 13):
            assert fa.color_code(x, t) == fs.color_code(x, t)


def test_site_events_follow_the_colors():
    field = ColorField(generate_soup(100, 2, Box(-200, 200, 0, 500), seed=4))
    for x in range(-200, 200, 37):
        init, times, states = field.site_events(x)
        assert init == field.state(x, 0.0)
        pts = np.concatenate(([0.0], times, [field.horizon]))
        vals = np.concatenate(([init], states))
        for a, b, v in zip(pts[:-1], pts[1:], vals):
            for t in np.linspace(a, b, 7)[1:-1]:
                assert field.state(x, t) == v


def test_forced_gray_is_the_symmetric_walker():
    T = 300.0
    field = ColorField.forced("gray", drift_window(T))
    clocks = sample_clock_field(1.0, field.window, T, seed=5)
    a = run_drift_walker(field, clocks, SpaceTimePoint(0, 0.0), T)
    env = ConstantTrajectory(field.window, T, 0)
    b = run_walker(env, clocks, JumpRule.blind(), SpaceTimePoint(0, 0.0), T)
    assert a == b
    assert check_allowed_path(a, clocks)


@pytest.mark.parametrize("color, drift", [("gray", 0.0), ("black", 0.8), ("white", -0.8)])
def test_forced_drift(color, drift):
    T, n = 1000.0, 200
    field = ColorField.forced(color, drift_window(T))
    v = [run_drift_walker(field, None, (0, 0.0), T, seed=s).final / T for s in range(n)]
    assert within_sigma(np.mean(v), drift, np.std(v, ddof=1) / math.sqrt(n))


def test_forced_color_validation():
    with pytest.raises(ParameterError):
        ColorField.forced("purple", Box(0, 1, 0, 1))
    field = ColorField.forced("gray", Box(0, 10, 0, 10))
    with pytest.raises(ParameterError):
        run_drift_walker(field, None, (0, 0.0), 5.0, seed=None)


def test_fluctuation_symmetric_when_gray():
    rows = fluctuation_experiment(1000, [0], 2000, seed=2, force="gray", baseline=False)
    (row,) = rows
    up, down = row["p_right"], row["p_left"]
    assert row["walker"] == "forced_gray" and row["L"] == 1000
    assert abs(up.point - down.point) <= 3 * math.sqrt(up.sigma**2 + down.sigma**2)


def test_touch_impossible_beyond_largest_scale():
    fit, rows = soup_covariance_check(100, [2000, 5000, 10**4], 0.5, 50, seed=1, k_max=1)
    assert all(r["estimate"].point == 0.0 for r in rows)
    assert all(r["bound"] == 0.0 for r in rows)
    assert fit.outcome == "below_noise_floor"


def test_union_bound_decreasing():
    ladder = build_ladder("counterexample", 1000, 2)
    r = [100, 1000, 10000, 20000]
    b = [touch_union_bound(ladder, x, 0.5) for x in r]
    assert all(y <= x for x, y in zip(b, b[1:]))
    want = 0.0
    for L in map(float, ladder.L):
        if L * math.cos(math.pi / 6) + math.log(L) ** 2 / 2 >= 1000:
            want += (L + 31.622776601683793) * (math.log(L) ** 2 + 31.622776601683793) / L**2
    assert touch_union_bound(ladder, 1000, 0.5) == pytest.approx(want, rel=1e-12)


def test_touch_boxes_geometry():
    b1, b2 = touch_boxes(100, 0.5)
    assert b1.width == b1.height == b2.height == 10.0
    assert b2.width == pytest.approx(10.0)
    assert b2.t_lo - b1.t_hi == 100.0
    assert b2.x_lo == pytest.approx(110 * math.tan(math.radians(30)))


def test_soup_csv(tmp_path):
    soup = generate_soup(100, 1, Box(0, 300, 0, 300), seed=2)
    soup.to_csv(tmp_path / "soup.csv")
    lines = (tmp_path / "soup.csv").read_text().splitlines()
    assert lines[0] == "scale,cx,cy,color,height"
    assert len(lines) == len(soup) + 1
