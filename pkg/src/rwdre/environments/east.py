"""East model, its distinguished zero, and its front.

Site ``x`` refreshes at the rings of a rate-1 clock, but only when ``x+1``
is empty; such rings are *legal* and set ``x`` to 1 with probability
``rho`` (ring uniform ``< rho``). Because the constraint looks right, the
trajectory on ``{x, x+1, ...}`` is a function of the data there alone, and
the whole window is simulated in one right-to-left sweep.

With ``causal=True`` the window is extended to the right by the exact
dependence cone of its top-right corner: site ``y+1`` is only simulated up
to the last ring of ``y`` before ``y``'s own horizon, and the extension
stops at the first site with no ring in its range. No boundary value is
ever read, so the result on the requested window is exact. Extension
sites are simulated but not stored.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .. import _rng
from ..core import STREAM_WALKER, ClockField, ClockSource, _check_horizon, _check_window
from ..errors import ParameterError, QueryError, TruncationError
from .base import EventLogTrajectory

STREAM_EAST = _rng.stream_id("east")
STREAM_EAST_INIT = _rng.stream_id("east/init")


@njit(cache=True)
def _csr_state_cone(data, x, t):
    x_min, hz, init, off, times, states = data
    i = x - x_min
    if i < 0 or i >= init.shape[0] or t < 0.0 or t > hz[i]:
        return 2, 0
    lo = off[i]
    hi = off[i + 1]
    k = np.searchsorted(times[lo:hi], t, side="left")
    if k == 0:
        return 0, init[i]
    return 0, states[lo + k - 1]


class EastTrajectory(EventLogTrajectory):
    """Event log whose sites may be known on different time ranges.

    Site ``x`` answers left-limit queries for ``t <= site_horizon[x]``.
    """

    def __init__(self, window, horizon, initial, offsets, times, states, site_horizon,
                 params=None):
        super().__init__(window, horizon, initial, offsets, times, states, "binary", params)
        self.site_horizon = np.ascontiguousarray(site_horizon, dtype=np.float64)
        self.site_horizon.setflags(write=False)

    def _check(self, x, t):
        super()._check(x, t)
        if t > self.site_horizon[x - self.window[0]]:
            raise QueryError(f"site {x} is only simulated up to {self.site_horizon[x - self.window[0]]}")

    def kernel(self):
        return _csr_state_cone, (np.int64(self.window[0]), self.site_horizon, self.initial,
                                 self.offsets, self.times, self.states)

    def restricted(self, window):
        sub = super().restricted(window)
        i0 = sub.window[0] - self.window[0]
        hz = self.site_horizon[i0:i0 + sub.n_sites].copy()
        return EastTrajectory(sub.window, sub.horizon, sub.initial, sub.offsets, sub.times,
                              sub.states, hz, sub.params)


@njit(cache=True)
def _cone(seed, x_top, horizon, max_sites):
    """Horizons of the sites right of ``x_top`` inside its dependence cone."""
    tb = np.empty(_rng.MAX_BLOCK)
    ub = np.empty(_rng.MAX_BLOCK)
    out = np.empty(max_sites)
    h = horizon
    y = x_top
    m = 0
    while m < max_sites:
        found, s, u = _rng.last_arrival(seed, STREAM_EAST, 1.0, y, h, False, tb, ub)
        if not found:
            return out[:m], True
        out[m] = s
        m += 1
        h = s
        y += 1
    return out[:m], False


@njit(cache=True)
def _east_sweep(seed, rho, x_min, hz, init, boundary, c_off, c_t, c_u, n_keep, cap, scap):
    """Right-to-left sweep. Clock data come from the CSR arrays when
    ``c_off`` is nonempty, otherwise from the lazy East stream.

    Only the first ``n_keep`` sites are logged; sites beyond them (the
    causal extension) live in two alternating scratch buffers. ``cap`` and
    ``scap`` bound the logged and scratch ring counts; on overflow the
    first returned value is False and the caller retries with more room.
    """
    n = init.shape[0]
    lazy = c_off.shape[0] == 0
    ev_t = np.empty(cap)
    ev_s = np.empty(cap, dtype=np.int64)
    lg_t = np.empty(cap)
    lg_s = np.empty(cap, dtype=np.int64)
    sa_t = np.empty(scap)
    sa_s = np.empty(scap, dtype=np.int64)
    sb_t = np.empty(scap)
    sb_s = np.empty(scap, dtype=np.int64)
    ev_cnt = np.zeros(n_keep, dtype=np.int64)
    lg_cnt = np.zeros(n_keep, dtype=np.int64)
    ne = 0
    nl = 0
    tb = np.empty(_rng.MAX_BLOCK)
    ub = np.empty(_rng.MAX_BLOCK)
    nb_t = sa_t
    nb_s = sa_s
    nb_lo = 0
    nb_hi = 0
    for i in range(n - 1, -1, -1):
        x = x_min + i
        h = hz[i]
        cur = init[i]
        keep = i < n_keep
        if keep:
            wt = ev_t
            ws = ev_s
            w = ne
            limit = cap
        elif (n - 1 - i) % 2 == 0:
            wt = sa_t
            ws = sa_s
            w = 0
            limit = scap
        else:
            wt = sb_t
            ws = sb_s
            w = 0
            limit = scap
        w0 = w
        if i == n - 1:
            nb_state = boundary
        else:
            nb_state = init[i + 1]
        p = nb_lo
        lg_lo = nl
        b = 0
        j = c_off[i] if not lazy else 0
        while True:
            if lazy:
                if _rng.block_start(b, 1.0) >= h:
                    break
                nr = _rng.block_arrivals(seed, STREAM_EAST, x, b, 1.0, tb, ub)
                b += 1
            else:
                nr = 0
                while j < c_off[i + 1] and nr < _rng.MAX_BLOCK:
                    tb[nr] = c_t[j]
                    ub[nr] = c_u[j]
                    nr += 1
                    j += 1
                if nr == 0:
                    break
            if w + nr >= limit or nl + nr >= cap:
                return False, ev_cnt, ev_t, ev_s, lg_cnt, lg_t, lg_s
            for r in range(nr):
                s = tb[r]
                if s >= h:
                    break
                while p < nb_hi and nb_t[p] < s:
                    nb_state = nb_s[p]
                    p += 1
                # branchless bookkeeping: always write, advance counters by flags
                legal = nb_state == 0
                new = 1 if ub[r] < rho else 0
                if keep:
                    lg_t[nl] = s
                    lg_s[nl] = new
                    nl += legal
                changed = legal & (new != cur)
                wt[w] = s
                ws[w] = new
                w += changed
                cur = new if legal else cur
        if keep:
            lg_cnt[i] = nl - lg_lo
            ev_cnt[i] = w - w0
            ne = w
        nb_t = wt
        nb_s = ws
        nb_lo = w0
        nb_hi = w
    # segments were appended right to left; reorder into CSR by site
    ev_off = np.zeros(n_keep + 1, dtype=np.int64)
    lg_off = np.zeros(n_keep + 1, dtype=np.int64)
    for i in range(n_keep):
        ev_off[i + 1] = ev_off[i] + ev_cnt[i]
        lg_off[i + 1] = lg_off[i] + lg_cnt[i]
    out_et = np.empty(ne)
    out_es = np.empty(ne, dtype=np.int64)
    out_lt = np.empty(nl)
    out_ls = np.empty(nl, dtype=np.int64)
    pe = 0
    pl = 0
    for i in range(n_keep - 1, -1, -1):
        out_et[ev_off[i]:ev_off[i + 1]] = ev_t[pe:pe + ev_cnt[i]]
        out_es[ev_off[i]:ev_off[i + 1]] = ev_s[pe:pe + ev_cnt[i]]
        pe += ev_cnt[i]
        out_lt[lg_off[i]:lg_off[i + 1]] = lg_t[pl:pl + lg_cnt[i]]
        out_ls[lg_off[i]:lg_off[i + 1]] = lg_s[pl:pl + lg_cnt[i]]
        pl += lg_cnt[i]
    return True, ev_off, out_et, out_es, lg_off, out_lt, out_ls


@njit(cache=True)
def _bernoulli_init(seed, rho, x_min, n):
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = 1 if _rng.init_uniform(seed, STREAM_EAST_INIT, x_min + i) < rho else 0
    return out


def _initial(init, rho, seed, x_min, n):
    """Resolve an initial-condition spec to a 0/1 array over the window.

    Accepted: a 0/1 array or constant, ``"stationary"`` (product
    Bernoulli), ``("zero_at", x)`` (Bernoulli conditioned on a 0 at ``x``)
    and ``"front"`` (1 left of the origin, 0 at it, Bernoulli right of it).
    """
    sites = np.arange(x_min, x_min + n)
    if isinstance(init, str):
        base = _bernoulli_init(np.int64(seed), rho, np.int64(x_min), n)
        if init == "stationary":
            return base
        if init == "front":
            base[sites < 0] = 1
            base[sites == 0] = 0
            return base
        raise ParameterError(f"unknown initial condition {init!r}")
    if isinstance(init, tuple) and len(init) == 2 and init[0] == "zero_at":
        base = _bernoulli_init(np.int64(seed), rho, np.int64(x_min), n)
        base[sites == int(init[1])] = 0
        return base
    arr = np.asarray(init, dtype=np.int64)
    if arr.ndim == 0:
        arr = np.full(n, int(arr), dtype=np.int64)
    if arr.shape != (n,) or not np.all((arr == 0) | (arr == 1)):
        raise ParameterError("initial configuration must be 0/1 on the whole window")
    return arr.copy()


class EastRealization:
    """East trajectory together with its graphical data and legal-ring log."""

    def __init__(self, rho, seed, trajectory, legal_offsets, legal_times, legal_values,
                 boundary, clock_field=None):
        self.rho = rho
        self.seed = seed
        self.trajectory = trajectory
        self.window = trajectory.window
        self.horizon = trajectory.horizon
        self.site_horizon = trajectory.site_horizon
        self.legal_offsets = legal_offsets
        self.legal_times = legal_times
        self.legal_values = legal_values
        self.boundary = boundary
        self._clock_field = clock_field

    def legal_rings(self, x):
        """``(times, refresh values)`` of the legal rings at ``x``."""
        if not self.window[0] <= x <= self.window[1]:
            raise QueryError(f"site {x} outside window {self.window}")
        i = x - self.window[0]
        lo, hi = self.legal_offsets[i], self.legal_offsets[i + 1]
        return self.legal_times[lo:hi], self.legal_values[lo:hi]

    def rings(self, x):
        """All ``(times, uniforms)`` of the clock at ``x`` within its horizon."""
        if self._clock_field is not None:
            return self._clock_field.arrivals(x)
        h = self.site_horizon[x - self.window[0]]
        return self.clock_source().arrivals(x, 0.0, h)

    def clock_source(self):
        """The East clocks as an unbounded lazy source (shared-clock walkers)."""
        if self._clock_field is not None:
            raise ParameterError("realization was built from an explicit clock field")
        return ClockSource(1.0, self.seed, STREAM_EAST, window=self.window, horizon=self.horizon)

    @property
    def clocks(self) -> ClockField:
        if self._clock_field is not None:
            return self._clock_field
        return self.clock_source().materialize(self.window, self.horizon)


def east_simulate(rho, init, window, horizon, seed, boundary=0, clocks=None,
                  causal=False) -> EastRealization:
    """Simulate the East model on ``window x [0, horizon]``.

    ``boundary`` is the frozen value right of the window. ``clocks`` may
    supply explicit rings as a :class:`ClockField` on the window. With
    ``causal`` the window is extended rightwards by the exact dependence
    cone instead (see module notes).
    """
    if not 0.0 < rho < 1.0:
        raise ParameterError(f"density must lie in (0, 1), got {rho}")
    if boundary not in (0, 1):
        raise ParameterError("boundary value must be 0 or 1")
    x_min, x_max = _check_window(window)
    horizon = _check_horizon(horizon)
    seed = int(seed)
    n_keep = x_max - x_min + 1
    hz = np.full(n_keep, horizon)
    if clocks is not None:
        if causal:
            raise ParameterError("causal extension needs the built-in clocks")
        if clocks.window != (x_min, x_max) or clocks.horizon < horizon:
            raise ParameterError("clock field must cover the simulation window")
        c_off, c_t, c_u = clocks.offsets, clocks.times, clocks.uniforms
    else:
        c_off, c_t, c_u = np.empty(0, np.int64), np.empty(0), np.empty(0)
    if causal:
        if not isinstance(init, (str, tuple)):
            raise ParameterError("causal extension needs a random initial law")
        ext, done = _cone(np.int64(seed), np.int64(x_max), horizon, 1 << 26)
        if not done:
            raise TruncationError("dependence cone did not close")
        hz = np.concatenate((hz, ext))
    n = len(hz)
    eta0 = _initial(init, rho, seed, x_min, n)
    if clocks is not None:
        cap = len(c_t) + 16
    else:
        mean = horizon * n_keep
        cap = int(mean + 8.0 * np.sqrt(mean) + 1024)
    scap = int(horizon + 10.0 * np.sqrt(horizon) + 4 * _rng.MAX_BLOCK)
    while True:
        ok, ev_off, et, es, lg_off, lt, ls = _east_sweep(
            np.int64(seed), float(rho), np.int64(x_min), hz, eta0, np.int64(boundary),
            c_off, c_t, c_u, n_keep, cap, scap)
        if ok:
            break
        cap *= 2
        scap *= 2
    params = {"rho": float(rho), "boundary": int(boundary), "causal": bool(causal),
              "cone_sites": n - n_keep}
    traj = EastTrajectory((x_min, x_max), horizon, eta0[:n_keep].copy(), ev_off, et, es,
                          hz[:n_keep], params)
    for arr in (lg_off, lt, ls):
        arr.setflags(write=False)
    return EastRealization(float(rho), seed, traj, lg_off, lt, ls, int(boundary), clocks)


def _next_legal(real, x, t, want=None):
    """First legal ring at ``x`` strictly after ``t`` (optionally with a
    given refresh value); ``inf`` if none within the site's horizon."""
    times, vals = real.legal_rings(x)
    k = np.searchsorted(times, t, side="right")
    if want is None:
        return times[k] if k < len(times) else np.inf
    hit = np.nonzero(vals[k:] == want)[0]
    return times[k + hit[0]] if len(hit) else np.inf


def east_distinguished_zero(realization: EastRealization, start, on_truncation="raise"):
    """Path of the distinguished zero started at ``start`` at time 0.

    It waits at ``x`` for the first legal ring there, then steps to
    ``x+1``. If the zero would need a site whose data stop before the
    horizon, the partial path is raised inside :class:`TruncationError`
    (or returned with ``truncated=True`` when ``on_truncation="return"``).
    """
    from ..walker import WalkerPath
    from ..core import SpaceTimePoint

    real = realization
    T = real.horizon
    x, t = int(start), 0.0
    jt, jx = [], []
    truncated = False
    while True:
        if not (real.window[0] <= x < real.window[1]):
            truncated = True
            break
        known = real.site_horizon[x - real.window[0]]
        s = _next_legal(real, x, t)
        if s > min(T, known):
            truncated = known < T
            break
        x += 1
        t = s
        jt.append(s)
        jx.append(x)
    path = WalkerPath(SpaceTimePoint(int(start), 0.0), np.array(jt), np.array(jx, dtype=np.int64),
                      T, truncated=truncated)
    if truncated and on_truncation == "raise":
        raise TruncationError("distinguished zero left the simulated window", time=t, partial=path)
    return path


def east_front_path(realization: EastRealization, on_truncation="raise"):
    """Front path on an existing realization started from the front law.

    At ``x`` it listens to legal rings at ``x`` (refresh 1: step right) and
    at ``x-1`` (refresh 0: step left).
    """
    from ..walker import WalkerPath
    from ..core import SpaceTimePoint

    real = realization
    T = real.horizon
    x, t = 0, 0.0
    jt, jx = [], []
    truncated = False
    while True:
        if not (real.window[0] < x < real.window[1]):
            truncated = True
            break
        i = x - real.window[0]
        known = min(real.site_horizon[i], real.site_horizon[i - 1])
        right = _next_legal(real, x, t, want=1)
        left = _next_legal(real, x - 1, t, want=0)
        s = min(right, left)
        if s > min(T, known):
            truncated = known < T
            break
        x += 1 if right < left else -1
        t = s
        jt.append(s)
        jx.append(x)
    path = WalkerPath(SpaceTimePoint(0, 0.0), np.array(jt), np.array(jx, dtype=np.int64), T,
                      truncated=truncated)
    if truncated and on_truncation == "raise":
        raise TruncationError("front left the simulated window", time=t, partial=path)
    return path


def _reach(horizon, reach):
    return int(math.ceil(0.25 * horizon)) + 20 if reach is None else int(reach)


def east_front(rho, window=None, horizon=1.0, seed=0, on_truncation="raise", reach=None):
    """Front of the East model started from 1s left of 0, a 0 at 0 and
    Bernoulli(rho) on the positive sites; returns ``(path, realization)``.

    Without a ``window`` one is chosen from ``reach`` and doubled until the
    front stays inside; the result does not depend on the final size.
    """
    if window is not None:
        x_min, x_max = _check_window(window)
        if not x_min < 0 < x_max:
            raise ParameterError("window must contain the origin strictly inside")
        real = east_simulate(rho, "front", window, horizon, seed, causal=True)
        return east_front_path(real, on_truncation), real
    left = _reach(horizon, reach)
    right = max(20, left // 8)
    while True:
        real = east_simulate(rho, "front", (-left, right), horizon, seed, causal=True)
        path = east_front_path(real, "return")
        if not path.truncated:
            return path, real
        if path.final <= -left + 1:
            left *= 2
        else:
            right *= 2


def east_zero_path(rho, horizon, seed, reach=None):
    """Distinguished zero from the origin under Bernoulli(rho) conditioned
    on a 0 there; returns ``(path, realization)``.

    The window ``[0, reach]`` is doubled until the zero stays inside.
    """
    reach = _reach(horizon, reach)
    while True:
        real = east_simulate(rho, ("zero_at", 0), (0, reach), horizon, seed, causal=True)
        path = east_distinguished_zero(real, 0, "return")
        if not path.truncated:
            return path, real
        reach *= 2


def _east_final(kind, rho, horizon, seed):
    fn = east_zero_path if kind == "zero" else east_front
    path, _ = fn(rho, horizon=horizon, seed=seed)
    return float(path.final) / horizon


def east_speed(kind, rho, horizon, replicas, seed, level=0.99, workers=None):
    """Mean of ``X_T / T`` over independent replicas for the distinguished
    zero (``kind="zero"``) or the front (``kind="front"``)."""
    from .._parallel import map_replicas
    from .._rng import derive_seed
    from ..renormalization import EstimateWithCI

    if kind not in ("zero", "front"):
        raise ParameterError("kind must be 'zero' or 'front'")
    vals = map_replicas(_east_final, [(kind, rho, float(horizon), derive_seed(seed, r))
                                      for r in range(replicas)], workers)
    return EstimateWithCI.mean(vals, level, seed)


def leftmost_zero(trajectory, t, x_lo, x_hi):
    """Leftmost site in ``[x_lo, x_hi]`` with state 0 at time ``t``, or None."""
    for x in range(x_lo, x_hi + 1):
        if trajectory.state(x, t) == 0:
            return x
    return None


__all__ = ["EastRealization", "EastTrajectory", "east_simulate", "east_distinguished_zero",
           "east_front", "east_front_path", "east_zero_path", "east_speed", "leftmost_zero",
           "STREAM_EAST", "STREAM_WALKER"]
