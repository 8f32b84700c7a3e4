"""Independent renewal chains on the nonnegative integers.

At every ring of its rate-1 clock a site in state ``n > 0`` moves to
``n - 1``; a site in state 0 draws a fresh state ``k >= 1`` with
probability ``p_k = a_k / sum(a)``.
"""

import numpy as np
from numba import njit

from .. import _rng
from ..errors import InvariantViolation, ParameterError
from .base import EventLogTrajectory

STREAM_RENEWAL = _rng.stream_id("renewal")
STREAM_RENEWAL_INIT = _rng.stream_id("renewal/init")


def _weights(a):
    a = np.asarray(a, dtype=np.float64).ravel()
    if a.size == 0 or not np.all(np.isfinite(a)) or np.any(a < 0) or not a.sum() > 0:
        raise ParameterError("weights must be finite, nonnegative and not all zero")
    return a


def renewal_generator(a):
    """Generator matrix on ``{0, ..., n_max}`` (rows sum to zero)."""
    a = _weights(a)
    p = a / a.sum()
    n = a.size + 1
    q = np.zeros((n, n))
    q[0, 1:] = p
    q[0, 0] = -p.sum()
    for k in range(1, n):
        q[k, k - 1] = 1.0
        q[k, k] = -1.0
    return q


def renewal_stationary(a, tol=1e-12):
    """Stationary law on ``{0, ..., n_max}`` for weights ``a_1 .. a_nmax``.

    The balance equations are solved directly, then compared against the
    tail-sum form ``pi(n) ~ sum_{j >= n} a_j`` (with ``pi(0) = pi(1)``).
    """
    a = _weights(a)
    q = renewal_generator(a)
    n = q.shape[0]
    lhs = np.vstack([q.T, np.ones(n)])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()

    tail = np.cumsum(a[::-1])[::-1] / a.sum()
    closed = np.concatenate(([tail[0]], tail))
    closed /= closed.sum()
    if np.max(np.abs(pi - closed)) > 1e-10:
        raise InvariantViolation("balance solve disagrees with the tail-sum law")
    if np.max(np.abs(pi @ q)) > tol:
        raise InvariantViolation("stationary law has a nonzero generator residual")
    return pi


@njit(cache=True)
def _inverse_cdf(cdf, u):
    k = 0
    while k < cdf.shape[0] - 1 and u >= cdf[k]:
        k += 1
    return k


@njit(cache=True)
def _renewal_sweep(seed, x_min, n_sites, horizon, pi_cdf, p_cdf, cap):
    init = np.empty(n_sites, dtype=np.int64)
    off = np.zeros(n_sites + 1, dtype=np.int64)
    times = np.empty(cap)
    states = np.empty(cap, dtype=np.int64)
    tb = np.empty(_rng.MAX_BLOCK)
    ub = np.empty(_rng.MAX_BLOCK)
    pos = 0
    for i in range(n_sites):
        x = x_min + i
        cur = _inverse_cdf(pi_cdf, _rng.init_uniform(seed, STREAM_RENEWAL_INIT, x))
        init[i] = cur
        b = 0
        while _rng.block_start(b, 1.0) < horizon:
            n = _rng.block_arrivals(seed, STREAM_RENEWAL, x, b, 1.0, tb, ub)
            for j in range(n):
                if tb[j] >= horizon:
                    break
                if cur > 0:
                    cur -= 1
                else:
                    # p_cdf indexes states 1..n_max
                    cur = 1 + _inverse_cdf(p_cdf, ub[j])
                if pos >= cap:
                    return False, init, off, times, states
                times[pos] = tb[j]
                states[pos] = cur
                pos += 1
            b += 1
        off[i + 1] = pos
    return True, init, off, times[:pos].copy(), states[:pos].copy()


def renewal_simulate(a, window, horizon, seed) -> EventLogTrajectory:
    """Independent stationary renewal chains on ``window x [0, horizon]``.

    Every ring is logged, including down-steps, so the trajectory records
    each transition of each site.
    """
    from ..core import _check_horizon, _check_window

    a = _weights(a)
    pi = renewal_stationary(a)
    x_min, x_max = _check_window(window)
    horizon = _check_horizon(horizon)
    n_sites = x_max - x_min + 1
    pi_cdf = np.cumsum(pi)
    pi_cdf[-1] = 1.0
    p_cdf = np.cumsum(a / a.sum())
    p_cdf[-1] = 1.0
    mean = horizon * n_sites
    cap = int(mean + 10 * np.sqrt(mean) + 64)
    while True:
        ok, init, off, times, states = _renewal_sweep(
            np.int64(seed), np.int64(x_min), n_sites, horizon, pi_cdf, p_cdf, cap)
        if ok:
            break
        cap *= 2
    return EventLogTrajectory((x_min, x_max), horizon, init, off, times, states,
                              state_space="count", params={"weights": a.tolist()})


def check_renewal_transitions(traj: EventLogTrajectory):
    """Assert every transition from a positive state is a down-step by one."""
    for x in range(traj.window[0], traj.window[1] + 1):
        init, _, states = traj.site_events(x)
        prev = np.concatenate(([init], states[:-1]))
        bad = (prev > 0) & (states != prev - 1)
        if np.any(bad) or np.any((prev == 0) & (states < 1)):
            raise InvariantViolation(f"illegal renewal transition at site {x}")
    return True
