"""Queryable environment trajectories."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from numba import njit

from ..core import _check_horizon, _check_window
from ..errors import ParameterError, QueryError

STATE_SPACES = ("binary", "spin", "count", "color")


@njit(cache=True)
def _csr_state(data, x, t):
    """Left-limit state at (x, t). Status 2 means outside the window."""
    x_min, horizon, init, off, times, states = data
    i = x - x_min
    if i < 0 or i >= init.shape[0] or t > horizon or t < 0.0:
        return 2, 0
    lo = off[i]
    hi = off[i + 1]
    k = np.searchsorted(times[lo:hi], t, side="left")
    if k == 0:
        return 0, init[i]
    return 0, states[lo + k - 1]


class EnvTrajectory:
    """A realization ``eta_t(x)`` on a finite site window and time horizon.

    Subclasses provide :meth:`site_events` and :meth:`kernel`. Queries are
    cadlag: :meth:`state` is right-continuous, :meth:`state_before` returns
    the left limit. Anything outside the window raises :class:`QueryError`.
    """

    state_space = "binary"

    def __init__(self, window, horizon, params=None):
        self.window = _check_window(window)
        self.horizon = _check_horizon(horizon)
        self.params = dict(params or {})

    @property
    def n_sites(self):
        return self.window[1] - self.window[0] + 1

    def _check(self, x, t):
        if not (self.window[0] <= x <= self.window[1]):
            raise QueryError(f"site {x} outside window {self.window}")
        if not (0.0 <= t <= self.horizon):
            raise QueryError(f"time {t} outside [0, {self.horizon}]")

    def site_events(self, x):
        """``(initial_state, times, new_states)`` for site ``x``."""
        raise NotImplementedError

    def state(self, x, t):
        self._check(x, t)
        init, times, states = self.site_events(x)
        k = np.searchsorted(times, t, side="right")
        return int(init if k == 0 else states[k - 1])

    def state_before(self, x, t):
        self._check(x, t)
        init, times, states = self.site_events(x)
        k = np.searchsorted(times, t, side="left")
        return int(init if k == 0 else states[k - 1])

    def configuration(self, t, sites=None):
        sites = range(self.window[0], self.window[1] + 1) if sites is None else sites
        return np.array([self.state(x, t) for x in sites], dtype=np.int64)

    def kernel(self):
        """``(query_fn, data)`` for the compiled walker loop."""
        return self.materialize().kernel()

    def materialize(self) -> EventLogTrajectory:
        init, off, ts, ss = [], [0], [], []
        for x in range(self.window[0], self.window[1] + 1):
            i0, t, s = self.site_events(x)
            init.append(i0)
            ts.append(np.asarray(t, dtype=np.float64))
            ss.append(np.asarray(s, dtype=np.int64))
            off.append(off[-1] + len(t))
        return EventLogTrajectory(
            self.window, self.horizon, np.array(init, dtype=np.int64), np.array(off),
            np.concatenate(ts) if ts else np.empty(0), np.concatenate(ss) if ss else np.empty(0, np.int64),
            state_space=self.state_space, params=self.params)

    def occupation_integral(self, x, t0, t1):
        """``int_{t0}^{t1} eta_t(x) dt`` computed exactly from the event log."""
        self._check(x, t0)
        self._check(x, t1)
        init, times, states = self.site_events(x)
        k = np.searchsorted(times, t0, side="right")
        cur = init if k == 0 else states[k - 1]
        total, last = 0.0, t0
        while k < len(times) and times[k] < t1:
            total += cur * (times[k] - last)
            last, cur = times[k], states[k]
            k += 1
        return total + cur * (t1 - last)

    def save(self, path):
        """Binary event log: ``u64`` site count, then per site a ``u64``
        length and little-endian ``(f64 time, i64 new_state)`` pairs.

        The first pair of every site is ``(0.0, initial_state)``. Window,
        horizon, state space and parameters go to a ``.json`` sidecar.
        """
        path = Path(path)
        rec = np.dtype([("t", "<f8"), ("s", "<i8")])
        with path.open("wb") as fh:
            fh.write(struct.pack("<Q", self.n_sites))
            for x in range(self.window[0], self.window[1] + 1):
                init, times, states = self.site_events(x)
                arr = np.empty(len(times) + 1, dtype=rec)
                arr["t"][0], arr["s"][0] = 0.0, init
                arr["t"][1:], arr["s"][1:] = times, states
                fh.write(struct.pack("<Q", len(arr)))
                fh.write(arr.tobytes())
        meta = {"window": list(self.window), "horizon": self.horizon,
                "state_space": self.state_space, "params": self.params}
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, default=str))


class EventLogTrajectory(EnvTrajectory):
    """Trajectory stored as per-site sorted event lists (CSR layout)."""

    def __init__(self, window, horizon, initial, offsets, times, states,
                 state_space="binary", params=None):
        super().__init__(window, horizon, params)
        if state_space not in STATE_SPACES:
            raise ParameterError(f"unknown state space {state_space!r}")
        self.state_space = state_space
        self.initial = np.ascontiguousarray(initial, dtype=np.int64)
        self.offsets = np.ascontiguousarray(offsets, dtype=np.int64)
        self.times = np.ascontiguousarray(times, dtype=np.float64)
        self.states = np.ascontiguousarray(states, dtype=np.int64)
        if self.initial.shape != (self.n_sites,) or self.offsets[-1] != len(self.times):
            raise ParameterError("event log does not match the window")
        for arr in (self.initial, self.offsets, self.times, self.states):
            arr.setflags(write=False)

    def site_events(self, x):
        if not (self.window[0] <= x <= self.window[1]):
            raise QueryError(f"site {x} outside window {self.window}")
        i = x - self.window[0]
        lo, hi = self.offsets[i], self.offsets[i + 1]
        return int(self.initial[i]), self.times[lo:hi], self.states[lo:hi]

    def materialize(self):
        return self

    def kernel(self):
        return _csr_state, (np.int64(self.window[0]), self.horizon, self.initial,
                            self.offsets, self.times, self.states)

    def restricted(self, window):
        """Sub-trajectory on a smaller site window (shares no mutable state)."""
        x_min, x_max = _check_window(window)
        if x_min < self.window[0] or x_max > self.window[1]:
            raise QueryError(f"{window} not inside {self.window}")
        i0, i1 = x_min - self.window[0], x_max - self.window[0] + 1
        lo, hi = self.offsets[i0], self.offsets[i1]
        return EventLogTrajectory((x_min, x_max), self.horizon, self.initial[i0:i1].copy(),
                                  self.offsets[i0:i1 + 1] - lo, self.times[lo:hi].copy(),
                                  self.states[lo:hi].copy(), self.state_space, self.params)

    @classmethod
    def load(cls, path):
        path = Path(path)
        meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        data = path.read_bytes()
        rec = np.dtype([("t", "<f8"), ("s", "<i8")])
        (n,) = struct.unpack_from("<Q", data, 0)
        pos = 8
        init, off, ts, ss = [], [0], [], []
        for _ in range(n):
            (m,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            arr = np.frombuffer(data, dtype=rec, count=m, offset=pos)
            pos += 16 * m
            init.append(arr["s"][0])
            ts.append(arr["t"][1:])
            ss.append(arr["s"][1:])
            off.append(off[-1] + m - 1)
        return cls(tuple(meta["window"]), meta["horizon"], np.array(init), np.array(off),
                   np.concatenate(ts), np.concatenate(ss), meta["state_space"], meta["params"])


@njit(cache=True)
def _const_state(data, x, t):
    value, x_min, x_max, horizon = data
    if x < x_min or x > x_max or t < 0.0 or t > horizon:
        return 2, 0
    return 0, value


class ConstantTrajectory(EnvTrajectory):
    """Environment frozen at a single value (walkers that ignore it)."""

    def __init__(self, window, horizon, value=0):
        super().__init__(window, horizon, {"value": int(value)})
        self.value = int(value)

    def site_events(self, x):
        self._check(x, 0.0)
        return self.value, np.empty(0), np.empty(0, dtype=np.int64)

    def kernel(self):
        return _const_state, (np.int64(self.value), np.int64(self.window[0]),
                              np.int64(self.window[1]), self.horizon)
