"""Counter-based splittable randomness.

Every random number is a pure function of ``(seed, stream, site, block, j)``
so a site's Poisson clock can be regenerated in isolation and random access
in time costs O(1): clocks are cut into blocks of length ``1/rate`` and each
block draws a Poisson(1) number of arrivals from its own key.

The mixer is the SplitMix64 finaliser; keys chain it over the coordinates.
"""

import math

import numpy as np
from numba import njit

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_K_STREAM = np.uint64(0xD6E8FEB86659FD93)
_K_SITE = np.uint64(0xA0761D6478BD642F)
_K_BLOCK = np.uint64(0xE7037ED1A0B428DB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

# block index reserved for per-site initial values
INIT_BLOCK = -1

# Clocks are cut into blocks holding BLOCK_MEAN arrivals on average; the
# count is drawn by inversion with a guide table indexing the CDF.
BLOCK_MEAN = 4.0
_POIS_CDF = np.cumsum(
    np.array([math.exp(-BLOCK_MEAN) * BLOCK_MEAN**k / math.factorial(k) for k in range(40)])
)
_POIS_CDF[-1] = 1.0
_GUIDE_BITS = 12
_GUIDE = np.searchsorted(_POIS_CDF, np.arange(1 << _GUIDE_BITS) / (1 << _GUIDE_BITS),
                         side="right").astype(np.int64)
MAX_BLOCK = 40


@njit(inline="always", cache=True)
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(inline="always", cache=True)
def _as_u64(v):
    return np.uint64(np.int64(v))


@njit(cache=True)
def site_key(seed, stream, site, block):
    h = _mix(_as_u64(seed) ^ _GOLDEN)
    h = _mix(h ^ (_as_u64(stream) * _K_STREAM))
    h = _mix(h ^ (_as_u64(site) * _K_SITE))
    return _mix(h ^ (_as_u64(block) * _K_BLOCK))


@njit(inline="always", cache=True)
def uniform(key, j):
    """j-th uniform in [0, 1) of the stream identified by ``key``."""
    # the shifted value fits in 53 bits, so a signed conversion is exact and cheaper
    return np.float64(np.int64(_mix(key + _as_u64(j + 1) * _GOLDEN) >> _S11)) * _INV53


@njit(cache=True)
def init_uniform(seed, stream, site):
    return uniform(site_key(seed, stream, site, INIT_BLOCK), 0)


@njit(inline="always", cache=True)
def block_index(t, rate):
    return int(math.floor(t * rate / BLOCK_MEAN))


@njit(inline="always", cache=True)
def block_start(b, rate):
    return b * BLOCK_MEAN / rate


@njit(cache=True)
def block_arrivals(seed, stream, site, block, rate, times, unifs):
    """Fill ``times``/``unifs`` with the sorted arrivals of one block.

    Block ``b`` covers ``[b, b+1) * BLOCK_MEAN / rate``. Returns the count.
    """
    key = site_key(seed, stream, site, block)
    u0 = uniform(key, 0)
    n = _GUIDE[int(u0 * (1 << _GUIDE_BITS))]
    while u0 >= _POIS_CDF[n]:
        n += 1
    for i in range(n):
        # branchless insertion: the loop length does not depend on the data
        v = uniform(key, 1 + i)
        for k in range(i, 0, -1):
            a = times[k - 1]
            times[k] = max(a, v)
            v = min(a, v)
        times[0] = v
    scale = BLOCK_MEAN / rate
    for i in range(n):
        times[i] = (block + times[i]) * scale
        unifs[i] = uniform(key, 1 + n + i)
    return n


@njit(cache=True)
def next_arrival(seed, stream, rate, site, t, times, unifs):
    """First arrival strictly after ``t``; returns (time, uniform)."""
    b = block_index(t, rate)
    if b < 0:
        b = 0
    while True:
        n = block_arrivals(seed, stream, site, b, rate, times, unifs)
        for i in range(n):
            if times[i] > t:
                return times[i], unifs[i]
        b += 1


@njit(cache=True)
def last_arrival(seed, stream, rate, site, t, inclusive, times, unifs):
    """Last arrival before ``t`` (``<= t`` when inclusive).

    Returns (found, time, uniform).
    """
    b = block_index(t, rate)
    while b >= 0:
        n = block_arrivals(seed, stream, site, b, rate, times, unifs)
        for i in range(n - 1, -1, -1):
            s = times[i]
            if s < t or (inclusive and s == t):
                return True, s, unifs[i]
        b -= 1
    return False, 0.0, 0.0


@njit(cache=True)
def site_arrivals(seed, stream, rate, site, t0, t1, out_t, out_u, pos, times, unifs):
    """Append arrivals of one site in ``[t0, t1)`` to the output buffers.

    Returns the new write position, or -1 when the buffers are too small.
    """
    if rate <= 0.0 or t1 <= t0:
        return pos
    b = block_index(t0, rate)
    cap = out_t.shape[0]
    while block_start(b, rate) < t1:
        n = block_arrivals(seed, stream, site, b, rate, times, unifs)
        for i in range(n):
            s = times[i]
            if s >= t0 and s < t1:
                if pos >= cap:
                    return -1
                out_t[pos] = s
                out_u[pos] = unifs[i]
                pos += 1
        b += 1
    return pos


@njit(cache=True)
def materialize(seed, stream, rate, x_min, n_sites, t0, t1, cap):
    """CSR arrivals for sites ``x_min .. x_min+n_sites-1`` on ``[t0, t1)``.

    Returns (ok, offsets, times, uniforms); ok is False when ``cap`` was
    too small and the caller must retry with a larger buffer.
    """
    off = np.zeros(n_sites + 1, dtype=np.int64)
    out_t = np.empty(cap, dtype=np.float64)
    out_u = np.empty(cap, dtype=np.float64)
    times = np.empty(MAX_BLOCK, dtype=np.float64)
    unifs = np.empty(MAX_BLOCK, dtype=np.float64)
    pos = 0
    for i in range(n_sites):
        pos = site_arrivals(seed, stream, rate, x_min + i, t0, t1,
                            out_t, out_u, pos, times, unifs)
        if pos < 0:
            return False, off, out_t, out_u
        off[i + 1] = pos
    return True, off, out_t[:pos].copy(), out_u[:pos].copy()


def materialize_csr(seed, stream, rate, x_min, n_sites, t0, t1):
    mean = max(rate, 0.0) * max(t1 - t0, 0.0) * n_sites
    cap = int(mean + 10.0 * math.sqrt(mean) + 64 + n_sites)
    while True:
        ok, off, t, u = materialize(seed, stream, float(rate), x_min, n_sites,
                                    float(t0), float(t1), cap)
        if ok:
            return off, t, u
        cap *= 2


def stream_id(name):
    """Stable 63-bit stream identifier for a name."""
    h = 1469598103934665603
    for ch in name.encode():
        h = ((h ^ ch) * 1099511628211) & 0xFFFFFFFFFFFFFFFF
    return h & 0x7FFFFFFFFFFFFFFF


def derive_seed(seed, *path):
    """Child seed for replica ``path`` under ``seed`` (pure function)."""
    k = int(seed) & 0xFFFFFFFFFFFFFFFF
    for i, p in enumerate(path):
        k = int(site_key(np.int64(k - (1 << 64) if k >= 1 << 63 else k),
                         np.int64(i + 7), np.int64(p), np.int64(0)))
    return k & 0x7FFFFFFFFFFFFFFF
