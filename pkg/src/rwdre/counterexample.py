"""Multi-scale soup of tilted rectangles and the drift walker living on it.

Scale ``k`` places rectangles of length ``L_k`` and width ``(ln L_k)**2`` at
the points of a Poisson process of intensity ``L_k**-2`` in the
``(site, time)`` plane. Each rectangle is black or white with probability
1/2 and carries a uniform height. Black long axes lean right of the time
axis by 30 degrees, white ones lean left. A point takes the color of the
covering rectangle of largest scale (ties: largest height), gray if none.

Centers are generated per square cell of side ``L_k`` from a counter-based
key, so any window sees the same rectangles. Rectangles are closed sets.
"""

from __future__ import annotations

import csv
import math

import numpy as np
from numba import njit

from . import _rng
from .core import Box, ClockSource, SpaceTimePoint, _check_horizon
from .environments.base import EnvTrajectory
from .errors import ParameterError, QueryError
from .mixing import DecayFit, fit_decay
from .renormalization import EstimateWithCI, build_ladder
from .walker import JumpRule, WalkerPath, run_walker

GRAY, BLACK, WHITE = 0, 1, 2
COLOR_NAMES = ("gray", "black", "white")
STREAM_SOUP = _rng.stream_id("soup")
_SIN30 = 0.5
_COS30 = math.sqrt(3.0) / 2.0
# (x, t) components of the long axis per color; index 0 unused
_AXIS_X = np.array([0.0, _SIN30, -_SIN30])
_AXIS_T = np.array([0.0, _COS30, _COS30])


def soup_width(L):
    return math.log(L) ** 2


@njit(cache=True)
def _poisson_inv(u, mean):
    p = math.exp(-mean)
    c = p
    k = 0
    while u >= c and k < 1000:
        k += 1
        p *= mean / k
        c += p
    return k


@njit(cache=True)
def _generate_scale(seed, k, L, lo_x, hi_x, lo_t, hi_t):
    """Rectangles of scale ``k`` with centers in the given box, grouped by
    cell; returns the cell grid origin, its shape and CSR offsets."""
    stream = STREAM_SOUP + k
    c = L
    i0 = int(math.floor(lo_x / c))
    i1 = int(math.floor(hi_x / c))
    j0 = int(math.floor(lo_t / c))
    j1 = int(math.floor(hi_t / c))
    ni = i1 - i0 + 1
    nj = j1 - j0 + 1
    off = np.zeros(ni * nj + 1, dtype=np.int64)
    cap = 16 + 4 * ni * nj
    cx = np.empty(cap)
    ct = np.empty(cap)
    col = np.empty(cap, dtype=np.int64)
    hgt = np.empty(cap)
    m = 0
    mean = (c / L) ** 2
    for a in range(ni):
        for b in range(nj):
            key = _rng.site_key(seed, stream, i0 + a, j0 + b)
            n = _poisson_inv(_rng.uniform(key, 0), mean)
            for r in range(n):
                x = (i0 + a + _rng.uniform(key, 1 + 4 * r)) * c
                t = (j0 + b + _rng.uniform(key, 2 + 4 * r)) * c
                if x < lo_x or x > hi_x or t < lo_t or t > hi_t:
                    continue
                if m >= cap:
                    cap *= 2
                    cx2 = np.empty(cap)
                    ct2 = np.empty(cap)
                    col2 = np.empty(cap, dtype=np.int64)
                    hgt2 = np.empty(cap)
                    cx2[:m] = cx[:m]
                    ct2[:m] = ct[:m]
                    col2[:m] = col[:m]
                    hgt2[:m] = hgt[:m]
                    cx, ct, col, hgt = cx2, ct2, col2, hgt2
                cx[m] = x
                ct[m] = t
                col[m] = BLACK if _rng.uniform(key, 3 + 4 * r) < 0.5 else WHITE
                hgt[m] = _rng.uniform(key, 4 + 4 * r)
                m += 1
            off[a * nj + b + 1] = m
    return i0, j0, ni, nj, off, cx[:m].copy(), ct[:m].copy(), col[:m].copy(), hgt[:m].copy()


@njit(inline="always", cache=True)
def _covers(cx, ct, color, L, w, x, t):
    dx = x - cx
    dt = t - ct
    ax = _AXIS_X[color]
    at = _AXIS_T[color]
    along = dx * ax + dt * at
    across = dx * at - dt * ax
    return abs(along) <= 0.5 * L and abs(across) <= 0.5 * w


@njit(cache=True)
def _color_point(meta, cell_off, cx, ct, col, hgt, x, t):
    # scales from the largest down; the first covered scale decides
    for k in range(meta.shape[0] - 1, -1, -1):
        L = meta[k, 0]
        w = meta[k, 1]
        i0 = int(meta[k, 2])
        j0 = int(meta[k, 3])
        ni = int(meta[k, 4])
        nj = int(meta[k, 5])
        cbase = int(meta[k, 6])
        ip = int(math.floor(x / L)) - i0
        jp = int(math.floor(t / L)) - j0
        best = -1.0
        color = GRAY
        for a in range(max(ip - 1, 0), min(ip + 2, ni)):
            for b in range(max(jp - 1, 0), min(jp + 2, nj)):
                c = cbase + a * nj + b
                for r in range(cell_off[c], cell_off[c + 1]):
                    if hgt[r] > best and _covers(cx[r], ct[r], col[r], L, w, x, t):
                        best = hgt[r]
                        color = col[r]
        if best >= 0.0:
            return color
    return GRAY


@njit(cache=True)
def _color_state(data, x, t):
    x_min, x_max, horizon, force, meta, cell_off, cx, ct, col, hgt = data
    if x < x_min or x > x_max or t < 0.0 or t > horizon:
        return 2, 0
    if force >= 0:
        return 0, force
    return 0, _color_point(meta, cell_off, cx, ct, col, hgt, float(x), t)


class RectangleSoup:
    """Rectangles of scales ``0..k_max`` meeting a generation window.

    Arrays are flat over scales; ``scale`` gives each rectangle's scale.
    """

    def __init__(self, ladder, window: Box, seed, scales):
        self.ladder = ladder
        self.window = window
        self.seed = int(seed)
        self.lengths = np.array([float(s[0]) for s in scales])
        self.widths = np.array([soup_width(L) for L in self.lengths])
        parts = [s[1] for s in scales]
        meta = np.zeros((len(scales), 7))
        offs, base = [np.zeros(1, dtype=np.int64)], 0
        cells = 0
        for k, (L, (i0, j0, ni, nj, off, cx, ct, col, hgt)) in enumerate(scales):
            meta[k] = (L, self.widths[k], i0, j0, ni, nj, cells)
            offs.append(off[1:] + base)
            base += len(cx)
            cells += ni * nj
        self._meta = meta
        self._cell_off = np.concatenate(offs)
        self.cx = np.concatenate([p[5] for p in parts]) if parts else np.empty(0)
        self.ct = np.concatenate([p[6] for p in parts]) if parts else np.empty(0)
        self.colors = (np.concatenate([p[7] for p in parts]) if parts
                       else np.empty(0, dtype=np.int64))
        self.heights = np.concatenate([p[8] for p in parts]) if parts else np.empty(0)
        self.scale = np.concatenate([np.full(len(p[5]), k, dtype=np.int64)
                                     for k, p in enumerate(parts)]) if parts else np.empty(0, np.int64)

    def __len__(self):
        return len(self.cx)

    def counts(self):
        """Rectangles per scale."""
        return np.bincount(self.scale, minlength=len(self.lengths))

    def kernel_arrays(self):
        return self._meta, self._cell_off, self.cx, self.ct, self.colors, self.heights

    def rectangles(self):
        """Rows ``(scale, cx, ct, color, height)``."""
        return [(int(k), float(x), float(t), COLOR_NAMES[int(c)], float(h))
                for k, x, t, c, h in zip(self.scale, self.cx, self.ct, self.colors,
                                         self.heights)]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scale", "cx", "cy", "color", "height"])
            for k, x, t, c, h in self.rectangles():
                w.writerow([k, repr(x), repr(t), c, repr(h)])

    def corners(self, r):
        """The four corners of rectangle ``r`` as a (4, 2) array."""
        k = self.scale[r]
        L, w = self.lengths[k], self.widths[k]
        c = self.colors[r]
        a = np.array([_AXIS_X[c], _AXIS_T[c]])
        n = np.array([a[1], -a[0]])
        ctr = np.array([self.cx[r], self.ct[r]])
        return np.array([ctr + sa * 0.5 * L * a + sn * 0.5 * w * n
                         for sa, sn in ((1, 1), (1, -1), (-1, -1), (-1, 1))])


def generate_soup(L0, k_max, window: Box, seed, ladder=None, empty=False) -> RectangleSoup:
    """All rectangles of scales ``0..k_max`` that can meet ``window``.

    Centers are kept when they lie in the window dilated by the
    rectangle's half-diagonal. A window of zero area, or ``empty=True``,
    gives no rectangles.
    """
    if ladder is None:
        ladder = build_ladder("counterexample", L0, k_max)
    if ladder.k_max < k_max:
        raise ParameterError("ladder is shorter than k_max")
    if not isinstance(window, Box):
        x_lo, x_hi, t_lo, t_hi = (float(v) for v in window)
        if x_hi > x_lo and t_hi > t_lo:
            window = Box(x_lo, x_hi, t_lo, t_hi)
        else:
            window, empty = None, True
    scales = []
    for k in range(k_max + 1):
        L = float(ladder.L[k])
        if empty:
            part = (0, 0, 0, 0, np.zeros(1, np.int64), np.empty(0), np.empty(0),
                    np.empty(0, np.int64), np.empty(0))
        else:
            R = 0.5 * math.hypot(L, soup_width(L))
            part = _generate_scale(np.int64(seed), np.int64(k), L, window.x_lo - R,
                                   window.x_hi + R, window.t_lo - R, window.t_hi + R)
        scales.append((L, part))
    return RectangleSoup(ladder, window, seed, scales)


class ColorField(EnvTrajectory):
    """Color of the soup at lattice points ``(x, t)``: 0 gray, 1 black,
    2 white. ``force`` pins every point to one color."""

    state_space = "color"

    def __init__(self, soup: RectangleSoup, force=None):
        win = soup.window
        if win is None:
            raise ParameterError("soup has an empty window")
        x_lo, x_hi = int(math.ceil(win.x_lo)), int(math.ceil(win.x_hi)) - 1
        super().__init__((x_lo, x_hi), win.t_hi, {"L0": int(soup.ladder.L[0]),
                                                  "k_max": len(soup.lengths) - 1})
        self.soup = soup
        if force is not None and force not in COLOR_NAMES:
            raise ParameterError(f"force must be one of {COLOR_NAMES}")
        self.force = force

    @classmethod
    def forced(cls, color, window: Box, L0=1000):
        return cls(generate_soup(L0, 0, window, 0, empty=True), force=color)

    def color_code(self, x, t):
        if self.force is not None:
            return COLOR_NAMES.index(self.force)
        return int(_color_point(*self.soup.kernel_arrays(), float(x), float(t)))

    def state(self, x, t):
        self._check(x, t)
        return self.color_code(x, t)

    def state_before(self, x, t):
        # colors are a function of the point; boundaries have measure zero
        return self.state(x, t)

    def site_events(self, x):
        """Color changes along the vertical line at ``x``.

        Changes sit where the line crosses a rectangle edge; the value after
        each crossing is read at the midpoint of the following piece.
        """
        self._check(x, 0.0)
        T = self.horizon
        if self.force is not None:
            return self.color_code(x, 0.0), np.empty(0), np.empty(0, dtype=np.int64)
        cuts = []
        s = self.soup
        for r in range(len(s)):
            k = s.scale[r]
            c = s.colors[r]
            ax, at = _AXIS_X[c], _AXIS_T[c]
            dx = x - s.cx[r]
            # |dx*ax + dt*at| <= L/2 and |dx*at - dt*ax| <= w/2, solved for dt
            lo1, hi1 = sorted(((-0.5 * s.lengths[k] - dx * ax) / at,
                               (0.5 * s.lengths[k] - dx * ax) / at))
            lo2, hi2 = sorted(((dx * at - 0.5 * s.widths[k]) / ax,
                               (dx * at + 0.5 * s.widths[k]) / ax))
            lo, hi = max(lo1, lo2), min(hi1, hi2)
            if lo <= hi:
                cuts.extend((s.ct[r] + lo, s.ct[r] + hi))
        cuts = np.unique([c for c in cuts if 0.0 < c < T])
        init = self.color_code(x, 0.0)
        pts = np.concatenate((cuts, [T]))
        times, states, cur = [], [], init
        for a, b in zip(pts[:-1], pts[1:]):
            v = self.color_code(x, 0.5 * (a + b))
            if v != cur:
                times.append(a)
                states.append(v)
                cur = v
        return init, np.array(times), np.array(states, dtype=np.int64)

    def kernel(self):
        force = -1 if self.force is None else COLOR_NAMES.index(self.force)
        return _color_state, (np.int64(self.window[0]), np.int64(self.window[1]),
                              self.horizon, np.int64(force)) + self.soup.kernel_arrays()


def color_at(field: ColorField, p):
    """Color name at the planar point ``p = (x, t)``."""
    x, t = float(p[0]), float(p[1])
    w = field.soup.window
    if not (w.x_lo <= x <= w.x_hi and w.t_lo <= t <= w.t_hi):
        raise QueryError(f"point {p} outside the generation window")
    return COLOR_NAMES[field.color_code(x, t)]


DRIFT_RULE = JumpRule.colors()


def run_drift_walker(field: ColorField, clocks, start, duration, seed=None) -> WalkerPath:
    """Rate-1 walker stepping by the color at its own space-time point:
    gray symmetric, black 0.9 right, white 0.9 left.

    ``clocks`` may be None, in which case a clock source keyed by ``seed``
    is used.
    """
    if clocks is None:
        if seed is None:
            raise ParameterError("give clocks or a seed")
        clocks = ClockSource(1.0, seed, window=field.window, horizon=field.horizon)
    if not isinstance(start, SpaceTimePoint):
        start = SpaceTimePoint(*start)
    return run_walker(field, clocks, DRIFT_RULE, start, duration)


def drift_window(L, margin=None):
    """Generation box for a walk of duration ``L`` from the origin."""
    m = L + 6.0 * math.sqrt(L) + 10.0 if margin is None else margin
    return Box(-m, m + 1.0, 0.0, float(L))


def _fluct_replica(L0, k_max, L, seed, force):
    soup_seed = _rng.derive_seed(seed, 0)
    clock_seed = _rng.derive_seed(seed, 1)
    soup = generate_soup(L0, k_max, drift_window(L), soup_seed, empty=force is not None)
    field = ColorField(soup, force=force)
    path = run_drift_walker(field, None, SpaceTimePoint(0, 0.0), L, seed=clock_seed)
    return path.final


def _baseline_replica(L, seed, nu=1.0, rho=0.5):
    from .environments.spinflip import spinflip_simulate

    m = int(L + 6.0 * math.sqrt(L) + 10.0)
    env = spinflip_simulate(nu, rho, (-m, m), L, _rng.derive_seed(seed, 0))
    clocks = ClockSource(1.0, _rng.derive_seed(seed, 1), window=env.window, horizon=L)
    return run_walker(env, clocks, JumpRule.blind(), SpaceTimePoint(0, 0.0), L).final


def _tail_row(name, L, finals, level):
    finals = np.asarray(finals, dtype=np.float64)
    n = len(finals)
    up = EstimateWithCI.proportion(int(np.sum(finals > 0.1 * L)), n, level=level)
    down = EstimateWithCI.proportion(int(np.sum(finals < -0.1 * L)), n, level=level)
    return {"walker": name, "L": L, "p_right": up, "p_left": down}


def fluctuation_experiment(L0, scales, replicas, seed, k_max=2, force=None, baseline=True,
                           level=0.95, workers=None):
    """Tail frequencies of ``X_L / L`` beyond ``+-0.1`` for the drift walker.

    Every replica draws a fresh soup and fresh clocks. ``scales`` are
    ladder indices or explicit lengths (values above ``k_max`` are read
    as lengths). With ``baseline`` the same table is produced for a
    symmetric walker on independent spin flips. Returns a list of rows.
    """
    from ._parallel import map_replicas

    ladder = build_ladder("counterexample", L0, k_max)
    lengths = [int(ladder.L[s]) if s <= k_max else int(s) for s in scales]
    rows = []
    for i, L in enumerate(lengths):
        base = _rng.derive_seed(seed, i)
        seeds = [_rng.derive_seed(base, r) for r in range(replicas)]
        finals = map_replicas(_fluct_replica, [(L0, k_max, L, s, force) for s in seeds],
                              workers)
        rows.append(_tail_row("soup" if force is None else f"forced_{force}", L, finals, level))
        if baseline:
            finals = map_replicas(_baseline_replica, [(L, s) for s in seeds], workers)
            rows.append(_tail_row("spinflip_symmetric", L, finals, level))
    return rows


def touch_union_bound(ladder, r, a, k_max=None):
    """Sum over scales long enough to reach across ``r`` of
    ``(L_k + r^a)(ln^2 L_k + r^a) / L_k^2`` (constant taken as 1). A scale
    reaches across when the time extent of its rectangles is at least ``r``."""
    s = float(r) ** a
    k_max = ladder.k_max if k_max is None else k_max
    total = 0.0
    for k in range(k_max + 1):
        L = float(ladder.L[k])
        if L * _COS30 + soup_width(L) * _SIN30 < r:
            continue
        total += (L + s) * (soup_width(L) + s) / L ** 2
    return total


def _segments_meet_box(corners, box: Box):
    """Whether a convex quadrilateral meets an axis-aligned closed box
    (separating axis test)."""
    bx = np.array([[box.x_lo, box.t_lo], [box.x_hi, box.t_lo],
                   [box.x_hi, box.t_hi], [box.x_lo, box.t_hi]])
    axes = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    for i in range(2):
        e = corners[i + 1] - corners[i]
        axes.append(np.array([-e[1], e[0]]))
    for ax in axes:
        p, q = corners @ ax, bx @ ax
        if p.max() < q.min() or q.max() < p.min():
            return False
    return True


def touch_boxes(r, a, aligned=True):
    """Boxes of side ``r**a`` at time-distance ``r``. With ``aligned`` the
    later box is shifted right along the black long axis; vertically
    stacked boxes cannot share a rectangle once ``r tan 30`` exceeds the
    rectangle's horizontal section."""
    s = float(r) ** a
    dx = (s + r) * _SIN30 / _COS30 if aligned else 0.0
    return Box(0.0, s, 0.0, s), Box(dx, dx + s, s + r, 2 * s + r)


def _touch_replica(L0, k_max, r, a, seed, aligned):
    b1, b2 = touch_boxes(r, a, aligned)
    soup = generate_soup(L0, k_max, Box(b1.x_lo, b2.x_hi, b1.t_lo, b2.t_hi), seed)
    for i in range(len(soup)):
        if soup.lengths[soup.scale[i]] < r:
            continue
        c = soup.corners(i)
        if _segments_meet_box(c, b1) and _segments_meet_box(c, b2):
            return True
    return False


def soup_covariance_check(L0, r_list, a, replicas, seed, k_max=2, level=0.95, aligned=True,
                          workers=None):
    """Probability that one rectangle touches both boxes of side ``r**a`` at
    time-distance ``r``, against the union bound.

    Returns ``(fit, rows)``: a :class:`DecayFit` of the touch probabilities
    and per-``r`` dicts with the estimate and the bound. Four times the
    touch probability bounds the covariance of any two [0, 1]-valued
    functions of the colors in the two boxes.
    """
    from ._parallel import map_replicas

    ladder = build_ladder("counterexample", L0, k_max)
    rows = []
    for i, r in enumerate(r_list):
        base = _rng.derive_seed(seed, i)
        hits = map_replicas(_touch_replica, [(L0, k_max, r, a, _rng.derive_seed(base, j), aligned)
                                             for j in range(replicas)], workers)
        est = EstimateWithCI.proportion(int(np.sum(hits)), replicas, level=level, seed=seed)
        rows.append({"r": r, "estimate": est, "bound": touch_union_bound(ladder, r, a, k_max)})
    fit = fit_decay([row["r"] for row in rows], [row["estimate"].point for row in rows],
                    [row["estimate"].half_width for row in rows])
    return fit, rows


__all__ = ["RectangleSoup", "ColorField", "generate_soup", "color_at", "run_drift_walker",
           "fluctuation_experiment", "soup_covariance_check", "touch_union_bound",
           "touch_boxes", "drift_window", "soup_width", "GRAY", "BLACK", "WHITE",
           "COLOR_NAMES", "DRIFT_RULE"]
