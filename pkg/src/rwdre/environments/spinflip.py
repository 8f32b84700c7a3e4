"""Independent spin-flip dynamics.

Each site refreshes at rate ``nu``; a refresh sets the site to 1 with
probability ``rho``. The initial law is product Bernoulli(rho), which is
stationary, so the trajectory is stationary from time 0.

Nothing is precomputed: the state at ``(x, t)`` is read off the last
refresh before ``t``, regenerated from the splittable clock of site ``x``.
"""

import math

import numpy as np
from numba import njit

from .. import _rng
from ..errors import ParameterError
from .base import EnvTrajectory

STREAM_SPINFLIP = _rng.stream_id("spinflip")
STREAM_SPINFLIP_INIT = _rng.stream_id("spinflip/init")


@njit(cache=True)
def _spinflip_state(data, x, t):
    seed, nu, rho, x_min, x_max, horizon, tbuf, ubuf = data
    if x < x_min or x > x_max or t < 0.0 or t > horizon:
        return 2, 0
    if nu > 0.0:
        found, s, u = _rng.last_arrival(seed, STREAM_SPINFLIP, nu, x, t, False, tbuf, ubuf)
        if found:
            return 0, 1 if u < rho else 0
    return 0, 1 if _rng.init_uniform(seed, STREAM_SPINFLIP_INIT, x) < rho else 0


class SpinFlipTrajectory(EnvTrajectory):
    state_space = "binary"

    def __init__(self, nu, rho, window, horizon, seed):
        super().__init__(window, horizon, {"nu": float(nu), "rho": float(rho)})
        self.nu = float(nu)
        self.rho = float(rho)
        self.seed = int(seed)

    def initial_state(self, x):
        return int(_rng.init_uniform(self.seed, STREAM_SPINFLIP_INIT, x) < self.rho)

    def refreshes(self, x, t0=0.0, t1=None):
        """Refresh times and uniforms of site ``x`` on ``[t0, t1)``."""
        t1 = self.horizon if t1 is None else t1
        off, t, u = _rng.materialize_csr(self.seed, STREAM_SPINFLIP, self.nu, x, 1, t0, t1)
        return t, u

    def site_events(self, x):
        self._check(x, 0.0)
        cur = self.initial_state(x)
        times, unifs = self.refreshes(x)
        new = (unifs < self.rho).astype(np.int64)
        prev = np.concatenate(([cur], new[:-1]))
        keep = new != prev
        return cur, times[keep], new[keep]

    def state_before(self, x, t):
        self._check(x, t)
        return int(_spinflip_state(self.kernel()[1], int(x), float(t))[1])

    def kernel(self):
        return _spinflip_state, (np.int64(self.seed), self.nu, self.rho,
                                 np.int64(self.window[0]), np.int64(self.window[1]),
                                 self.horizon, np.empty(_rng.MAX_BLOCK),
                                 np.empty(_rng.MAX_BLOCK))


def spinflip_simulate(nu, rho, window, horizon, seed) -> SpinFlipTrajectory:
    """Stationary independent spin-flip trajectory on ``window x [0, horizon]``."""
    if not nu >= 0 or not math.isfinite(nu):
        raise ParameterError(f"flip rate must be nonnegative, got {nu}")
    if not 0.0 < rho < 1.0:
        raise ParameterError(f"density must lie in (0, 1), got {rho}")
    return SpinFlipTrajectory(nu, rho, window, horizon, seed)


def spinflip_autocovariance(nu, rho, lag):
    """Exact single-site autocovariance ``rho (1 - rho) exp(-nu lag)``."""
    return rho * (1.0 - rho) * math.exp(-nu * lag)
