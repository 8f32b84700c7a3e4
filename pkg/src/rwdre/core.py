"""Space-time primitives and per-site Poisson clocks."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from numba import njit

from . import _rng
from .errors import ParameterError, QueryError

MAX_HORIZON = float(2**53)

STREAM_WALKER = _rng.stream_id("walker")


@dataclass(frozen=True, order=True)
class SpaceTimePoint:
    """A point ``(x, t)`` of the lattice Z x R+."""

    x: int
    t: float

    def __post_init__(self):
        if not self.t >= 0:
            raise ParameterError(f"time must be nonnegative, got {self.t}")

    def shifted(self, dx=0, dt=0.0):
        return SpaceTimePoint(self.x + dx, self.t + dt)


@dataclass(frozen=True)
class Box:
    """Half-open box ``[x_lo, x_hi) x [t_lo, t_hi)`` in the plane."""

    x_lo: float
    x_hi: float
    t_lo: float
    t_hi: float

    def __post_init__(self):
        if not (self.x_lo < self.x_hi and self.t_lo < self.t_hi):
            raise ParameterError(f"degenerate box {self}")

    @property
    def width(self):
        return self.x_hi - self.x_lo

    @property
    def height(self):
        return self.t_hi - self.t_lo

    def contains(self, x, t):
        return self.x_lo <= x < self.x_hi and self.t_lo <= t < self.t_hi

    def sites(self):
        """Integer sites inside the box's horizontal extent."""
        return np.arange(math.ceil(self.x_lo), math.ceil(self.x_hi), dtype=np.int64)

    def translated(self, dx=0.0, dt=0.0):
        return Box(self.x_lo + dx, self.x_hi + dx, self.t_lo + dt, self.t_hi + dt)


class TimeDistance(NamedTuple):
    distance: float
    overlap: bool


def time_distance(b1: Box, b2: Box) -> TimeDistance:
    """Gap between the later box's start and the earlier box's end.

    Overlapping time intervals give ``TimeDistance(0.0, overlap=True)``.
    """
    if b2.t_lo < b1.t_lo:
        b1, b2 = b2, b1
    gap = b2.t_lo - b1.t_hi
    if gap < 0:
        return TimeDistance(0.0, True)
    return TimeDistance(float(gap), False)


def _check_window(window):
    x_min, x_max = (int(v) for v in window)
    if x_max < x_min:
        raise ParameterError(f"empty site window {window}")
    return x_min, x_max


def _check_horizon(horizon):
    horizon = float(horizon)
    if not horizon > 0:
        raise ParameterError(f"horizon must be positive, got {horizon}")
    if horizon > MAX_HORIZON:
        raise ParameterError("horizons beyond 2**53 time units are not supported")
    return horizon


@njit(cache=True)
def _csr_next(data, x, t):
    # status: 0 ok, 1 no arrival before horizon, 2 site outside window
    x_min, horizon, off, times, unifs = data
    i = x - x_min
    if i < 0 or i >= off.shape[0] - 1:
        return 2, 0.0, 0.0
    lo = off[i]
    hi = off[i + 1]
    k = lo + np.searchsorted(times[lo:hi], t, side="right")
    if k >= hi:
        return 1, horizon, 0.0
    return 0, times[k], unifs[k]


@njit(cache=True)
def _lazy_next(data, x, t):
    seed, stream, rate, horizon, x_min, x_max, tbuf, ubuf = data
    if x < x_min or x > x_max:
        return 2, 0.0, 0.0
    if rate <= 0.0:
        return 1, horizon, 0.0
    s, u = _rng.next_arrival(seed, stream, rate, x, t, tbuf, ubuf)
    if s >= horizon:
        return 1, horizon, 0.0
    return 0, s, u


class ClockSource:
    """Unbounded splittable family of per-site Poisson clocks.

    Nothing is stored; arrivals are regenerated on demand. ``materialize``
    freezes a finite piece into a :class:`ClockField`.
    """

    def __init__(self, rate, seed, stream=STREAM_WALKER, window=None, horizon=math.inf):
        if not rate >= 0:
            raise ParameterError(f"rate must be nonnegative, got {rate}")
        self.rate = float(rate)
        self.seed = int(seed)
        self.stream = int(stream)
        self.window = (-(2**62), 2**62) if window is None else _check_window(window)
        self.horizon = float(horizon)

    def arrivals(self, x, t0=0.0, t1=None):
        """Sorted ``(times, uniforms)`` of site ``x`` on ``[t0, t1)``."""
        t1 = self.horizon if t1 is None else min(t1, self.horizon)
        if not math.isfinite(t1):
            raise ParameterError("need a finite end time")
        off, t, u = _rng.materialize_csr(self.seed, self.stream, self.rate, int(x), 1, t0, t1)
        return t, u

    def next_arrival(self, x, t):
        status, s, u = _lazy_next(self.kernel()[1], int(x), float(t))
        return status, s, u

    def materialize(self, window, horizon) -> ClockField:
        x_min, x_max = _check_window(window)
        horizon = _check_horizon(horizon)
        off, t, u = _rng.materialize_csr(self.seed, self.stream, self.rate,
                                         x_min, x_max - x_min + 1, 0.0, horizon)
        return ClockField((x_min, x_max), horizon, off, t, u, self.rate, self.seed, self.stream)

    def kernel(self):
        buf_t = np.empty(_rng.MAX_BLOCK)
        buf_u = np.empty(_rng.MAX_BLOCK)
        return _lazy_next, (np.int64(self.seed), np.int64(self.stream), self.rate,
                            self.horizon, np.int64(self.window[0]),
                            np.int64(self.window[1]), buf_t, buf_u)


class ClockField:
    """Materialized Poisson arrivals with paired uniforms on a finite window.

    Arrivals are stored CSR-style: site ``x`` owns
    ``times[offsets[i]:offsets[i+1]]`` with ``i = x - x_min``. Immutable.
    """

    def __init__(self, window, horizon, offsets, times, uniforms, rate=1.0,
                 seed=None, stream=STREAM_WALKER):
        self.window = _check_window(window)
        self.horizon = _check_horizon(horizon)
        self.offsets = np.ascontiguousarray(offsets, dtype=np.int64)
        self.times = np.ascontiguousarray(times, dtype=np.float64)
        self.uniforms = np.ascontiguousarray(uniforms, dtype=np.float64)
        self.rate = float(rate)
        self.seed = seed
        self.stream = stream
        n = self.window[1] - self.window[0] + 1
        if self.offsets.shape != (n + 1,) or self.offsets[-1] != len(self.times):
            raise ParameterError("offsets do not match the window")
        for arr in (self.offsets, self.times, self.uniforms):
            arr.setflags(write=False)

    @classmethod
    def from_lists(cls, arrivals: dict, window, horizon, rate=1.0, seed=None):
        """Build from ``{site: [(time, uniform), ...]}``; missing sites are empty."""
        x_min, x_max = _check_window(window)
        off = [0]
        ts, us = [], []
        for x in range(x_min, x_max + 1):
            pairs = sorted(arrivals.get(x, ()))
            for t, u in pairs:
                if not (0 <= t < horizon and 0 <= u < 1):
                    raise ParameterError(f"bad arrival ({t}, {u}) at site {x}")
            if any(b[0] <= a[0] for a, b in zip(pairs, pairs[1:])):
                raise ParameterError(f"repeated arrival time at site {x}")
            ts.extend(p[0] for p in pairs)
            us.extend(p[1] for p in pairs)
            off.append(len(ts))
        return cls((x_min, x_max), horizon, np.array(off), np.array(ts, dtype=float),
                   np.array(us, dtype=float), rate, seed)

    @property
    def n_sites(self):
        return self.window[1] - self.window[0] + 1

    def __contains__(self, x):
        return self.window[0] <= x <= self.window[1]

    def arrivals(self, x):
        """``(times, uniforms)`` of site ``x``."""
        if x not in self:
            raise QueryError(f"site {x} outside clock window {self.window}")
        i = x - self.window[0]
        lo, hi = self.offsets[i], self.offsets[i + 1]
        return self.times[lo:hi], self.uniforms[lo:hi]

    def next_arrival(self, x, t):
        return _csr_next(self.kernel()[1], int(x), float(t))

    def merged(self):
        """All arrivals as ``(times, sites)`` sorted by time, ties by site."""
        sites = np.repeat(np.arange(self.window[0], self.window[1] + 1), np.diff(self.offsets))
        order = np.lexsort((sites, self.times))
        return self.times[order], sites[order]

    def kernel(self):
        return _csr_next, (np.int64(self.window[0]), self.horizon, self.offsets,
                           self.times, self.uniforms)

    def __eq__(self, other):
        if not isinstance(other, ClockField):
            return NotImplemented
        return (self.window == other.window and self.horizon == other.horizon
                and np.array_equal(self.offsets, other.offsets)
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.uniforms, other.uniforms))

    __hash__ = None

    def save(self, path):
        """Binary cache: ``u64`` site count, then per site a ``u64`` length
        followed by little-endian ``(f64 time, f64 uniform)`` pairs.

        Window, horizon, rate and seed go to a ``.json`` sidecar.
        """
        path = Path(path)
        with path.open("wb") as fh:
            fh.write(struct.pack("<Q", self.n_sites))
            for i in range(self.n_sites):
                lo, hi = self.offsets[i], self.offsets[i + 1]
                fh.write(struct.pack("<Q", hi - lo))
                pairs = np.empty((hi - lo, 2), dtype="<f8")
                pairs[:, 0] = self.times[lo:hi]
                pairs[:, 1] = self.uniforms[lo:hi]
                fh.write(pairs.tobytes())
        meta = {"window": list(self.window), "horizon": self.horizon, "rate": self.rate,
                "seed": self.seed, "stream": self.stream}
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta))

    @classmethod
    def load(cls, path):
        path = Path(path)
        meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        data = path.read_bytes()
        (n,) = struct.unpack_from("<Q", data, 0)
        pos = 8
        off = [0]
        chunks = []
        for _ in range(n):
            (m,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            chunks.append(np.frombuffer(data, dtype="<f8", count=2 * m, offset=pos).reshape(m, 2))
            pos += 16 * m
            off.append(off[-1] + m)
        pairs = np.concatenate(chunks) if chunks else np.empty((0, 2))
        if n != meta["window"][1] - meta["window"][0] + 1:
            raise ParameterError("cache file and sidecar disagree on the site count")
        return cls(tuple(meta["window"]), meta["horizon"], np.array(off), pairs[:, 0].copy(),
                   pairs[:, 1].copy(), meta["rate"], meta["seed"], meta["stream"])


def sample_clock_field(rate, window, horizon, seed, stream=STREAM_WALKER) -> ClockField:
    """Independent rate-``rate`` Poisson clocks on ``window x [0, horizon)``.

    Each site's arrivals depend only on ``(seed, stream, site)``.
    """
    if not rate >= 0:
        raise ParameterError(f"rate must be nonnegative, got {rate}")
    return ClockSource(rate, seed, stream).materialize(window, horizon)
