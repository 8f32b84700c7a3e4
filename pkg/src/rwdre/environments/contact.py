"""One-dimensional contact process through its graphical construction.

Every site carries recovery marks (rate 1) and two arrow clocks, one per
outgoing neighbor. Arrows are generated at a cap rate ``lam_cap`` and kept
when their paired uniform is below ``lam / lam_cap``, so processes with
different infection rates built from the same seed and cap are coupled and
the infected sets are nested.
"""

import math

import numpy as np
from numba import njit

from .. import _rng
from ..core import _check_horizon, _check_window
from ..errors import ParameterError, TruncationError
from .base import EventLogTrajectory

STREAM_RECOVERY = _rng.stream_id("contact/recovery")
STREAM_ARROW_RIGHT = _rng.stream_id("contact/arrow+")
STREAM_ARROW_LEFT = _rng.stream_id("contact/arrow-")

RECOVERY, ARROW_RIGHT, ARROW_LEFT = 0, 1, 2
BOUNDARIES = ("frozen0", "frozen1", "periodic")


class GraphicalConstruction:
    """Recovery marks and infection arrows, regenerated lazily per site.

    ``events(window, t0, t1)`` returns ``(times, kinds, sites)`` sorted by
    time with ties broken by site; kind 1 is an arrow ``x -> x+1`` and kind 2
    an arrow ``x -> x-1``.
    """

    def __init__(self, lam, seed, lam_cap=None):
        if not (lam >= 0 and math.isfinite(lam)):
            raise ParameterError(f"infection rate must be finite and >= 0, got {lam}")
        self.lam = float(lam)
        self.lam_cap = float(lam if lam_cap is None else lam_cap)
        if self.lam_cap < self.lam:
            raise ParameterError("lam_cap must be at least lam")
        self.seed = int(seed)

    def recoveries(self, x, t0, t1):
        _, t, _ = _rng.materialize_csr(self.seed, STREAM_RECOVERY, 1.0, x, 1, t0, t1)
        return t

    def arrows(self, x, direction, t0, t1):
        """Times of kept arrows out of ``x`` towards ``x + direction``."""
        if self.lam == 0.0:
            return np.empty(0)
        stream = STREAM_ARROW_RIGHT if direction > 0 else STREAM_ARROW_LEFT
        _, t, u = _rng.materialize_csr(self.seed, stream, self.lam_cap, x, 1, t0, t1)
        return t[u < self.lam / self.lam_cap]

    def events(self, window, t0, t1, extra_sources=False):
        """Merged events on ``window x [t0, t1)``.

        With ``extra_sources`` the arrows entering the window from the two
        outside neighbors are included (needed for a frozen-1 boundary).
        """
        x_min, x_max = _check_window(window)
        n = x_max - x_min + 1
        parts_t, parts_k, parts_x = [], [], []

        def add(stream, rate, lo, count, kind, thin):
            off, t, u = _rng.materialize_csr(self.seed, stream, rate, lo, count, t0, t1)
            sites = np.repeat(np.arange(lo, lo + count), np.diff(off))
            if thin:
                keep = u < self.lam / self.lam_cap
                t, sites = t[keep], sites[keep]
            parts_t.append(t)
            parts_k.append(np.full(len(t), kind, dtype=np.int64))
            parts_x.append(sites)

        add(STREAM_RECOVERY, 1.0, x_min, n, RECOVERY, False)
        if self.lam > 0.0:
            add(STREAM_ARROW_RIGHT, self.lam_cap, x_min, n, ARROW_RIGHT, True)
            add(STREAM_ARROW_LEFT, self.lam_cap, x_min, n, ARROW_LEFT, True)
            if extra_sources:
                add(STREAM_ARROW_RIGHT, self.lam_cap, x_min - 1, 1, ARROW_RIGHT, True)
                add(STREAM_ARROW_LEFT, self.lam_cap, x_max + 1, 1, ARROW_LEFT, True)
        t = np.concatenate(parts_t)
        k = np.concatenate(parts_k)
        x = np.concatenate(parts_x)
        order = np.lexsort((x, t))
        return t[order], k[order], x[order]


@njit(cache=True)
def _less(kt, kx, a, b):
    return kt[a] < kt[b] or (kt[a] == kt[b] and kx[a] < kx[b])


@njit(cache=True)
def _sift_down(heap, size, pos, kt, kx):
    item = heap[pos]
    while True:
        c = 2 * pos + 1
        if c >= size:
            break
        if c + 1 < size and _less(kt, kx, heap[c + 1], heap[c]):
            c += 1
        if not _less(kt, kx, heap[c], item):
            break
        heap[pos] = heap[c]
        pos = c
    heap[pos] = item


@njit(cache=True)
def _advance(s, seed, sid, site, rate, blk, cnt, idx, bt, bu, kt, ku):
    idx[s] += 1
    while idx[s] >= cnt[s]:
        blk[s] += 1
        cnt[s] = _rng.block_arrivals(seed, sid[s], site[s], blk[s], rate[s], bt[s], bu[s])
        idx[s] = 0
    kt[s] = bt[s, idx[s]]
    ku[s] = bu[s, idx[s]]


@njit(cache=True)
def _contact_forward(seed, lam, lam_cap, x_min, state, boundary, t_burn, t_end):
    """Event-driven forward run merging per-site streams through a heap.

    Events before ``t_burn`` update the state silently; later ones are
    logged with times shifted by ``-t_burn``. Returns the configuration
    at ``t_burn`` and the log ``(site index, time, new state)``.
    """
    n = state.shape[0]
    n_str = n
    if lam > 0.0:
        n_str = 3 * n + (2 if boundary == 1 else 0)
    sid = np.empty(n_str, dtype=np.int64)
    site = np.empty(n_str, dtype=np.int64)
    kind = np.empty(n_str, dtype=np.int64)
    rate = np.empty(n_str)
    for i in range(n):
        sid[i] = STREAM_RECOVERY
        site[i] = x_min + i
        kind[i] = RECOVERY
        rate[i] = 1.0
        if lam > 0.0:
            sid[n + i] = STREAM_ARROW_RIGHT
            site[n + i] = x_min + i
            kind[n + i] = ARROW_RIGHT
            sid[2 * n + i] = STREAM_ARROW_LEFT
            site[2 * n + i] = x_min + i
            kind[2 * n + i] = ARROW_LEFT
    if lam > 0.0:
        for j in range(n, n_str):
            rate[j] = lam_cap
        if boundary == 1:
            sid[3 * n] = STREAM_ARROW_RIGHT
            site[3 * n] = x_min - 1
            kind[3 * n] = ARROW_RIGHT
            sid[3 * n + 1] = STREAM_ARROW_LEFT
            site[3 * n + 1] = x_min + n
            kind[3 * n + 1] = ARROW_LEFT
    blk = np.full(n_str, -1, dtype=np.int64)
    cnt = np.zeros(n_str, dtype=np.int64)
    idx = np.full(n_str, -1, dtype=np.int64)
    bt = np.empty((n_str, _rng.MAX_BLOCK))
    bu = np.empty((n_str, _rng.MAX_BLOCK))
    kt = np.empty(n_str)
    ku = np.empty(n_str)
    heap = np.arange(n_str)
    for s in range(n_str):
        _advance(s, seed, sid, site, rate, blk, cnt, idx, bt, bu, kt, ku)
    for p in range(n_str // 2 - 1, -1, -1):
        _sift_down(heap, n_str, p, kt, site)

    thin = lam / lam_cap if lam > 0.0 else 0.0
    cap = 1024
    log_i = np.empty(cap, dtype=np.int64)
    log_t = np.empty(cap)
    log_s = np.empty(cap, dtype=np.int64)
    m = 0
    init = state.copy()
    burnt = t_burn <= 0.0
    while True:
        s = heap[0]
        t = kt[s]
        if t >= t_end:
            break
        if not burnt and t >= t_burn:
            init[:] = state
            burnt = True
        i = site[s] - x_min
        k = kind[s]
        target = -1
        new = 0
        if k == RECOVERY:
            if state[i] == 1:
                target = i
        elif ku[s] < thin:
            if i < 0 or i >= n:
                src = 1 if boundary == 1 else 0
            else:
                src = state[i]
            if src == 1:
                tg = i + 1 if k == ARROW_RIGHT else i - 1
                if tg < 0 or tg >= n:
                    if boundary == 2:
                        tg = tg % n
                    else:
                        tg = -1
                if tg >= 0 and state[tg] == 0:
                    target = tg
                    new = 1
        if target >= 0:
            state[target] = new
            if burnt:
                if m >= cap:
                    cap *= 2
                    a = np.empty(cap, dtype=np.int64)
                    a[:m] = log_i[:m]
                    log_i = a
                    b = np.empty(cap)
                    b[:m] = log_t[:m]
                    log_t = b
                    c = np.empty(cap, dtype=np.int64)
                    c[:m] = log_s[:m]
                    log_s = c
                log_i[m] = target
                log_t[m] = t - t_burn
                log_s[m] = new
                m += 1
        _advance(s, seed, sid, site, rate, blk, cnt, idx, bt, bu, kt, ku)
        _sift_down(heap, n_str, 0, kt, site)
    if not burnt:
        init[:] = state
    return init, log_i[:m], log_t[:m], log_s[:m]


def _init_config(init, n):
    if isinstance(init, str):
        if init in ("all_ones", "upper_invariant"):
            return np.ones(n, dtype=np.int64)
        if init == "all_zeros":
            return np.zeros(n, dtype=np.int64)
        raise ParameterError(f"unknown initial condition {init!r}")
    arr = np.asarray(init, dtype=np.int64)
    if arr.ndim == 0:
        arr = np.full(n, int(arr), dtype=np.int64)
    if arr.shape != (n,) or not np.all((arr == 0) | (arr == 1)):
        raise ParameterError("initial configuration must be 0/1 on the whole window")
    return arr.copy()


def default_depth(lam):
    """Burn-in depth used to approximate the upper invariant measure."""
    return 50.0 / max(float(lam), 1.0)


def contact_simulate(lam, init, window, horizon, seed, boundary="frozen0",
                     lam_cap=None, depth=None) -> EventLogTrajectory:
    """Forward contact process on ``window x [0, horizon]``.

    ``init`` is a 0/1 array over the window, a constant, ``"all_ones"``, or
    ``"upper_invariant"``. The last runs the process from all ones for
    ``depth`` time units first (default ``50/lam``); that equals asking,
    at every site, whether the dual survives for ``depth``, so 1s are
    over-reported relative to the true upper invariant law.
    """
    x_min, x_max = _check_window(window)
    horizon = _check_horizon(horizon)
    if boundary not in BOUNDARIES:
        raise ParameterError(f"boundary must be one of {BOUNDARIES}")
    n = x_max - x_min + 1
    gc = GraphicalConstruction(lam, seed, lam_cap)
    state = _init_config(init, n)
    burn = 0.0
    if isinstance(init, str) and init == "upper_invariant":
        burn = default_depth(lam) if depth is None else float(depth)
    code = BOUNDARIES.index(boundary)
    initial, li, lt, ls = _contact_forward(np.int64(gc.seed), gc.lam, max(gc.lam_cap, 1e-300),
                                           np.int64(x_min), state, code, burn, burn + horizon)
    order = np.argsort(li, kind="stable")
    off = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(li, minlength=n), out=off[1:])
    params = {"lam": gc.lam, "boundary": boundary, "burn_in": burn, "lam_cap": gc.lam_cap}
    return EventLogTrajectory((x_min, x_max), horizon, initial, off, lt[order], ls[order],
                              state_space="binary", params=params)


@njit(cache=True)
def _dual(times, kinds, sites, x, x_min, n, strict):
    alive = np.zeros(n, dtype=np.bool_)
    alive[x - x_min] = True
    count = 1
    for e in range(times.shape[0] - 1, -1, -1):
        i = sites[e] - x_min
        k = kinds[e]
        if k == RECOVERY:
            if alive[i]:
                alive[i] = False
                count -= 1
                if count == 0:
                    return 0, times[e]
        else:
            target = i + 1 if k == ARROW_RIGHT else i - 1
            if 0 <= target < n and 0 <= i < n and alive[target] and not alive[i]:
                alive[i] = True
                count += 1
                if strict and (i == 0 or i == n - 1):
                    return 2, times[e]
    return 1, 0.0


def contact_dual_survival(x, t, depth, lam, window, seed, lam_cap=None, strict=True):
    """Whether the dual started at ``(x, t)`` is alive at time ``t - depth``.

    The dual follows arrows backwards and dies at recovery marks, on the
    same graphical data as :func:`contact_simulate`. With ``strict`` a dual
    set touching an edge site of ``window`` raises :class:`TruncationError`;
    otherwise the outside is treated as permanently healthy.
    """
    x_min, x_max = _check_window(window)
    if not (t >= depth >= 0):
        raise ParameterError("need t >= depth >= 0")
    if not x_min <= x <= x_max:
        raise ParameterError(f"site {x} outside window {window}")
    if depth == 0:
        return True
    if strict and x in (x_min, x_max):
        raise TruncationError("dual starts on the window edge", time=t)
    gc = GraphicalConstruction(lam, seed, lam_cap)
    times, kinds, sites = gc.events((x_min, x_max), t - depth, t)
    status, when = _dual(times, kinds, sites, np.int64(x), np.int64(x_min),
                         x_max - x_min + 1, strict)
    if status == 2:
        raise TruncationError("dual set reached the window edge; widen the window", time=when)
    return bool(status)
