"""Nearest-neighbor walkers driven by per-site clocks and a local jump rule.

At each arrival ``(T, U)`` of the clock at its current site ``x`` the walker
reads the environment word ``eta_{T-}(x-l), ..., eta_{T-}(x+l)`` and the
paired uniform ``U`` and steps by ``g(word, U)`` in ``{-1, 0, +1}``.

Table rules code ``U`` monotonically: ``[0, p_right)`` steps right,
``[p_right, p_right + p_stay)`` stays, the rest steps left.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numba import njit

from .core import SpaceTimePoint
from .errors import InvariantViolation, ParameterError, TruncationError

# kernel status codes
OK, CLOCK_TRUNCATED, ENV_TRUNCATED = 0, 1, 2


class JumpRule:
    """Local jump rule ``g`` of radius ``ell`` over an alphabet of states.

    ``table[code] = (p_right, p_stay, p_left)`` where the word
    ``(s_{-l}, ..., s_{l})`` has code ``sum_j s_j * alphabet**(j + l)``.
    States are clipped into ``[0, alphabet - 1]`` before coding.
    Alternatively ``func(word, u) -> step`` gives an opaque rule that runs
    on the slower pure-Python path.
    """

    def __init__(self, ell=0, table=None, alphabet=2, func=None, name="custom"):
        if int(ell) != ell or ell < 0:
            raise ParameterError(f"radius must be a nonnegative integer, got {ell}")
        if (table is None) == (func is None):
            raise ParameterError("give exactly one of table or func")
        self.ell = int(ell)
        self.alphabet = int(alphabet)
        self.name = name
        self.func = func
        self.table = None
        if table is not None:
            tab = np.array(table, dtype=np.float64).reshape(-1, 3)
            words = self.alphabet ** (2 * self.ell + 1)
            if tab.shape[0] == 1:
                tab = np.repeat(tab, words, axis=0)
            if tab.shape[0] != words:
                raise ParameterError(f"table needs {words} rows, got {tab.shape[0]}")
            if np.any(tab < 0) or np.any(np.abs(tab.sum(axis=1) - 1.0) > 1e-12):
                raise ParameterError("each row must be a probability triple")
            tab.setflags(write=False)
            self.table = tab

    def __repr__(self):
        return f"JumpRule({self.name!r}, ell={self.ell})"

    def code(self, word):
        w = np.clip(np.asarray(word, dtype=np.int64), 0, self.alphabet - 1)
        return int(np.sum(w * self.alphabet ** np.arange(len(w))))

    def step(self, word, u):
        """Evaluate ``g(word, u)``."""
        if self.func is not None:
            s = int(self.func(tuple(int(v) for v in word), u))
            if s not in (-1, 0, 1):
                raise InvariantViolation(f"rule returned step {s}")
            return s
        pr, ps, _ = self.table[self.code(word)]
        return 1 if u < pr else (0 if u < pr + ps else -1)

    @classmethod
    def constant(cls, step):
        row = {1: (1.0, 0.0, 0.0), 0: (0.0, 1.0, 0.0), -1: (0.0, 0.0, 1.0)}[int(step)]
        return cls(0, [row], name=f"constant{step:+d}")

    @classmethod
    def blind(cls, p_right=0.5, p_left=0.5):
        """Environment-blind rule; the remaining mass stays put."""
        return cls(0, [(p_right, 1.0 - p_right - p_left, p_left)], name="blind")

    @classmethod
    def from_function(cls, ell, alphabet, probs: Callable, name="custom"):
        """Tabulate ``probs(word) -> (p_right, p_stay, p_left)`` over all words."""
        n = 2 * ell + 1
        rows = []
        for code in range(alphabet ** n):
            word = [(code // alphabet ** j) % alphabet for j in range(n)]
            rows.append(probs(tuple(word)))
        return cls(ell, rows, alphabet, name=name)

    @classmethod
    def occupation_bias(cls, p_right_on_1=0.75, p_right_on_0=0.25):
        """Never stays; steps right w.p. depending on the state at the walker."""
        return cls(0, [(p_right_on_0, 0.0, 1 - p_right_on_0),
                       (p_right_on_1, 0.0, 1 - p_right_on_1)], name="occupation_bias")

    @classmethod
    def east_zero(cls):
        """Step right exactly when the right neighbor is empty."""
        return cls.from_function(1, 2, lambda w: (1.0, 0.0, 0.0) if w[2] == 0 else (0.0, 1.0, 0.0),
                                 name="east_zero")

    @classmethod
    def colors(cls, gray=(0.5, 0.0, 0.5), black=(0.9, 0.0, 0.1), white=(0.1, 0.0, 0.9)):
        """Color-driven drift rule; states 0 gray, 1 black, 2 white."""
        return cls(0, [gray, black, white], alphabet=3, name="colors")

    @classmethod
    def preset(cls, name, **kw):
        presets = {"zero": lambda: cls.constant(0), "right": lambda: cls.constant(1),
                   "left": lambda: cls.constant(-1), "blind": cls.blind,
                   "occupation_bias": cls.occupation_bias, "east_zero": cls.east_zero,
                   "colors": cls.colors}
        if name not in presets:
            raise ParameterError(f"unknown rule preset {name!r}; known: {sorted(presets)}")
        return presets[name](**kw)


@dataclass
class WalkerPath:
    """Cadlag nearest-neighbor path: ``start``, then jumps ``(time, new site)``
    up to ``horizon``. ``rings`` counts the clock arrivals it consumed."""

    start: SpaceTimePoint
    jump_times: np.ndarray
    sites: np.ndarray
    horizon: float
    truncated: bool = False
    rings: Optional[int] = None

    def __post_init__(self):
        self.jump_times = np.asarray(self.jump_times, dtype=np.float64)
        self.sites = np.asarray(self.sites, dtype=np.int64)
        if self.jump_times.shape != self.sites.shape:
            raise ParameterError("jump times and sites differ in length")

    @property
    def jumps(self):
        return list(zip(self.jump_times.tolist(), self.sites.tolist()))

    @property
    def final(self):
        return int(self.sites[-1]) if len(self.sites) else self.start.x

    @property
    def displacement(self):
        return self.final - self.start.x

    def position(self, t):
        """Site at time(s) ``t`` (right-continuous)."""
        t = np.asarray(t, dtype=np.float64)
        k = np.searchsorted(self.jump_times, t, side="right")
        all_sites = np.concatenate(([self.start.x], self.sites))
        out = all_sites[k]
        return int(out) if out.ndim == 0 else out

    def __eq__(self, other):
        if not isinstance(other, WalkerPath):
            return NotImplemented
        return (self.start == other.start and self.horizon == other.horizon
                and np.array_equal(self.jump_times, other.jump_times)
                and np.array_equal(self.sites, other.sites))

    def rows(self):
        yield (self.start.t, self.start.x)
        yield from zip(self.jump_times.tolist(), self.sites.tolist())

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "site"])
            for t, x in self.rows():
                w.writerow([repr(float(t)), int(x)])


@njit(cache=True)
def _grow(bt, bx, n):
    if n < bt.shape[0]:
        return bt, bx
    nt = np.empty(2 * bt.shape[0])
    nx = np.empty(2 * bt.shape[0], dtype=np.int64)
    nt[:n] = bt[:n]
    nx[:n] = bx[:n]
    return nt, nx


@njit(cache=True)
def _ring_step(env_fn, edata, table, ell, alphabet, x, s, u):
    """Step chosen at a ring; ``(ok, step)`` with ``ok`` False if the
    environment could not be read."""
    code = 0
    mult = 1
    for j in range(-ell, ell + 1):
        st, v = env_fn(edata, x + j, s)
        if st != 0:
            return False, 0
        if v < 0:
            v = 0
        elif v >= alphabet:
            v = alphabet - 1
        code += v * mult
        mult *= alphabet
    pr = table[code, 0]
    if u < pr:
        return True, 1
    if u < pr + table[code, 1]:
        return True, 0
    return True, -1


@njit(cache=True)
def _walk(next_fn, cdata, env_fn, edata, table, ell, alphabet, x0, t0, t_end):
    bt = np.empty(64)
    bx = np.empty(64, dtype=np.int64)
    n = 0
    rings = 0
    x = x0
    t = t0
    while True:
        st, s, u = next_fn(cdata, x, t)
        if st == 2:
            return CLOCK_TRUNCATED, t, bt[:n], bx[:n], rings
        if st == 1:
            if s < t_end:
                return CLOCK_TRUNCATED, s, bt[:n], bx[:n], rings
            break
        if s > t_end:
            break
        rings += 1
        ok, step = _ring_step(env_fn, edata, table, ell, alphabet, x, s, u)
        if not ok:
            return ENV_TRUNCATED, s, bt[:n], bx[:n], rings
        if step != 0:
            x += step
            bt, bx = _grow(bt, bx, n)
            bt[n] = s
            bx[n] = x
            n += 1
        t = s
    return OK, t_end, bt[:n], bx[:n], rings


@njit(cache=True)
def _walk_many(next_fn, cdata, env_fn, edata, table, ell, alphabet, starts, t0, t_end):
    """Final positions of walkers from ``starts`` (all at time ``t0``).

    Walker ``k`` is compared with walker ``k-1`` after each of its rings;
    once both sit on the same site they share clocks, uniforms and
    environment, so ``k`` inherits the rest of ``k-1``'s path.
    """
    m = starts.shape[0]
    finals = np.empty(m, dtype=np.int64)
    status = np.zeros(m, dtype=np.int64)
    pt = np.empty(64)
    px = np.empty(64, dtype=np.int64)
    pn = 0
    p_x0 = 0
    p_ok = False
    for k in range(m):
        ct = np.empty(64)
        cx = np.empty(64, dtype=np.int64)
        cn = 0
        x = starts[k]
        t = t0
        q = 0
        prev_pos = p_x0
        st_k = OK
        while True:
            st, s, u = next_fn(cdata, x, t)
            if st == 2 or (st == 1 and s < t_end):
                st_k = CLOCK_TRUNCATED
                break
            if st == 1 or s > t_end:
                break
            ok, step = _ring_step(env_fn, edata, table, ell, alphabet, x, s, u)
            if not ok:
                st_k = ENV_TRUNCATED
                break
            if step != 0:
                x += step
                ct, cx = _grow(ct, cx, cn)
                ct[cn] = s
                cx[cn] = x
                cn += 1
            t = s
            if p_ok:
                while q < pn and pt[q] <= s:
                    prev_pos = px[q]
                    q += 1
                if prev_pos == x:
                    for r in range(q, pn):
                        ct, cx = _grow(ct, cx, cn)
                        ct[cn] = pt[r]
                        cx[cn] = px[r]
                        cn += 1
                    if cn > 0:
                        x = cx[cn - 1]
                    break
        finals[k] = x
        status[k] = st_k
        if st_k == OK:
            pt, px, pn, p_x0, p_ok = ct, cx, cn, starts[k], True
        else:
            p_ok = False
    return finals, status


def _kernels(env, clocks):
    return clocks.kernel(), env.kernel()


def _check_duration(env, start, duration):
    if not duration >= 0:
        raise ParameterError(f"duration must be nonnegative, got {duration}")
    t_end = start.t + duration
    if t_end > env.horizon:
        raise ParameterError(f"walk ends at {t_end}, beyond the environment horizon {env.horizon}")
    return t_end


def _python_walk(env, clocks, rule, start, t_end):
    x, t = start.x, start.t
    jt, jx = [], []
    rings = 0
    env_fn, env_data = env.kernel()
    while True:
        st, s, u = clocks.next_arrival(x, t)
        if st == 2 or (st == 1 and s < t_end):
            return CLOCK_TRUNCATED, t, jt, jx, rings
        if st == 1 or s > t_end:
            return OK, t_end, jt, jx, rings
        rings += 1
        word = []
        for y in range(x - rule.ell, x + rule.ell + 1):
            st_e, v = env_fn(env_data, y, s)
            if st_e != 0:
                return ENV_TRUNCATED, s, jt, jx, rings
            word.append(v)
        step = rule.step(word, u)
        if step:
            x += step
            jt.append(s)
            jx.append(x)
        t = s


def run_walker(env, clocks, rule: JumpRule, start: SpaceTimePoint, duration) -> WalkerPath:
    """Walk from ``start`` for ``duration`` on ``env`` with ``clocks``.

    ``clocks`` is a :class:`~rwdre.core.ClockField` or a lazy
    :class:`~rwdre.core.ClockSource`. Leaving either the clock or the
    environment window raises :class:`TruncationError` carrying the first
    offending time and the partial path.
    """
    if not isinstance(start, SpaceTimePoint):
        start = SpaceTimePoint(*start)
    t_end = _check_duration(env, start, duration)
    if rule.table is not None:
        (nf, cd), (ef, ed) = _kernels(env, clocks)
        status, when, jt, jx, rings = _walk(nf, cd, ef, ed, rule.table, rule.ell, rule.alphabet,
                                            np.int64(start.x), float(start.t), float(t_end))
        jt, jx = jt.copy(), jx.copy()
    else:
        status, when, jt, jx, rings = _python_walk(env, clocks, rule, start, t_end)
    path = WalkerPath(start, jt, jx, t_end, truncated=status != OK, rings=rings)
    if status != OK:
        what = "clock" if status == CLOCK_TRUNCATED else "environment"
        raise TruncationError(f"walker left the {what} window at time {when}", time=when,
                              partial=path)
    return path


def final_positions(env, clocks, rule: JumpRule, starts, start_time, duration):
    """Final sites of walkers from ``starts``, using path coalescence.

    Returns ``(finals, truncated)`` where ``truncated`` flags walkers that
    left the simulated window. Results equal those of :func:`run_walker`
    started from each site separately.
    """
    if rule.table is None:
        raise ParameterError("final_positions needs a table rule")
    starts = np.ascontiguousarray(starts, dtype=np.int64)
    t_end = _check_duration(env, SpaceTimePoint(0, start_time), duration)
    (nf, cd), (ef, ed) = _kernels(env, clocks)
    finals, status = _walk_many(nf, cd, ef, ed, rule.table, rule.ell, rule.alphabet,
                                starts, float(start_time), float(t_end))
    return finals, status != OK


@dataclass
class CoupledEnsemble:
    """Walkers from several starts on shared clocks and environment."""

    starts: np.ndarray
    start_time: float
    horizon: float
    paths: list = field(default_factory=list)
    env: object = None
    clocks: object = None

    @property
    def displacements(self):
        return np.array([p.displacement for p in self.paths], dtype=np.int64)

    def positions(self, times):
        return np.array([p.position(times) for p in self.paths])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path_id", "time", "site"])
            for i, p in enumerate(self.paths):
                for t, x in p.rows():
                    w.writerow([i, repr(float(t)), int(x)])


def check_order(paths: Sequence[WalkerPath]):
    """Exact order check: sorted starts stay sorted at every jump time.

    Neighbours in start order are compared at every jump of either one;
    ordered neighbours order the whole family. Returns the number of
    violating ``(time, pair)`` combinations.
    """
    if len(paths) < 2:
        return 0
    order = np.argsort([p.start.x for p in paths], kind="stable")
    paths = [paths[i] for i in order]
    bad = 0
    for a, b in zip(paths, paths[1:]):
        times = np.unique(np.concatenate([a.jump_times, b.jump_times, [a.start.t]]))
        bad += int(np.sum(np.atleast_1d(b.position(times)) < np.atleast_1d(a.position(times))))
    return bad


def run_coupled(env, clocks, rule: JumpRule, starts, start_time, duration) -> CoupledEnsemble:
    """Independent full paths from every start; order is then asserted at
    every jump event and a violation raises :class:`InvariantViolation`."""
    starts = np.asarray(starts, dtype=np.int64)
    paths = [run_walker(env, clocks, rule, SpaceTimePoint(int(x), float(start_time)), duration)
             for x in starts]
    bad = check_order(paths)
    if bad:
        raise InvariantViolation(f"{bad} ordering violations among coupled walkers from "
                                 f"{starts.tolist()}")
    return CoupledEnsemble(starts, float(start_time), float(start_time + duration), paths,
                           env, clocks)


@njit(cache=True)
def _allowed(next_fn, cdata, x0, t0, horizon, times, sites):
    prev_x, prev_t = x0, t0
    for i in range(times.shape[0]):
        t, x = times[i], sites[i]
        if abs(x - prev_x) != 1 or not (prev_t < t <= horizon):
            return False
        st, s, _ = next_fn(cdata, prev_x, np.nextafter(t, -np.inf))
        if st != 0 or s != t:
            return False
        prev_x, prev_t = x, t
    return True


def check_allowed_path(path: WalkerPath, clocks) -> bool:
    """True iff the path is nearest-neighbor and each jump sits on an
    arrival of the clock at its pre-jump site."""
    next_fn, cdata = clocks.kernel()
    return bool(_allowed(next_fn, cdata, np.int64(path.start.x), float(path.start.t),
                         float(path.horizon), np.asarray(path.jump_times, dtype=np.float64),
                         np.asarray(path.sites, dtype=np.int64)))


@njit(cache=True)
def _frontier(next_fn, cdata, x0, t_end, direction):
    x = x0
    t = 0.0
    while True:
        st, s, u = next_fn(cdata, x, t)
        if st == 2 or (st == 1 and s < t_end):
            return False, x, t
        if st == 1 or s > t_end:
            return True, x, t
        x += direction
        t = s


def reachability_envelope(clocks, T, origin=0):
    """``(max_right, min_left)`` reachable by allowed paths from
    ``(origin, 0)`` within time ``T``.

    The greedy frontier jumps at the first arrival at its current site,
    which is optimal. Needing a site outside the clock window raises
    :class:`TruncationError`.
    """
    nf, cd = clocks.kernel()
    out = []
    for d in (1, -1):
        ok, x, t = _frontier(nf, cd, np.int64(origin), float(T), np.int64(d))
        if not ok:
            raise TruncationError("envelope left the clock window", time=t, partial=x)
        out.append(int(x))
    return out[0], out[1]


def _envelope_replica(T, seed):
    from .core import ClockSource

    right, left = reachability_envelope(ClockSource(1.0, seed, horizon=T), T)
    return max(right, -left)


def envelope_tail(T, replicas, seed, factor=2.0, level=0.95, workers=None):
    """Frequency of ``max(max_right, -min_left) >= factor * T`` over
    independent rate-1 clock fields."""
    from . import _rng
    from ._parallel import map_replicas
    from .renormalization import EstimateWithCI

    reach = map_replicas(_envelope_replica, [(float(T), _rng.derive_seed(seed, r))
                                             for r in range(replicas)], workers)
    return EstimateWithCI.proportion(int(np.sum(np.asarray(reach) >= factor * T)), replicas,
                                     level, seed)
