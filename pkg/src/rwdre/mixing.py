"""Covariances of box observables and the fit of their decay.

An observable maps an environment trajectory to ``[0, 1]`` using only the
states inside its box: the state at a marked point, the box average of
``min(state, 1)``, or the indicator that this average reaches a
threshold. Averages are exact integrals of the piecewise-constant
trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _rng
from .core import Box, time_distance
from .errors import ParameterError, StatisticalValidityError

MIN_REPLICAS = 30
KINDS = ("point", "average", "threshold")
# time extent of the box attached to a point observable
POINT_HEIGHT = 1e-9


def _occupied(states):
    return np.minimum(np.asarray(states), 1)


@dataclass(frozen=True)
class BoxObservable:
    box: Box
    kind: str = "average"
    threshold: Optional[float] = None
    point: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"kind must be one of {KINDS}")
        if self.kind == "threshold" and self.threshold is None:
            raise ParameterError("threshold observables need a threshold")
        if self.kind != "point" and self.box.sites().size == 0:
            raise ParameterError("box holds no site")

    @classmethod
    def at(cls, x, t):
        """Occupation indicator at the single space-time point ``(x, t)``."""
        return cls(Box(x, x + 1, t, t + POINT_HEIGHT), "point", point=(int(x), float(t)))

    @property
    def marked(self):
        return self.point if self.point is not None else (int(self.box.sites()[0]),
                                                          float(self.box.t_lo))

    @property
    def is_constant(self):
        """Threshold observables that cannot depend on the trajectory."""
        return self.kind == "threshold" and (self.threshold <= 0 or self.threshold > 1)

    def sites(self):
        return self.box.sites() if self.kind != "point" else np.array([self.marked[0]])

    def average(self, env):
        b = self.box
        total = 0.0
        sites = b.sites()
        for x in sites:
            init, times, states = env.site_events(int(x))
            occ = _occupied(states)
            k = np.searchsorted(times, b.t_lo, side="right")
            cur = min(init, 1) if k == 0 else occ[k - 1]
            last = b.t_lo
            while k < len(times) and times[k] < b.t_hi:
                total += cur * (times[k] - last)
                last, cur = times[k], occ[k]
                k += 1
            total += cur * (b.t_hi - last)
        return total / (len(sites) * b.height)

    def __call__(self, env):
        if self.is_constant:
            return 1.0 if self.threshold <= 0 else 0.0
        if self.kind == "point":
            x, t = self.marked
            return float(min(env.state(x, t), 1))
        a = self.average(env)
        if self.kind == "average":
            return a
        return 1.0 if a >= self.threshold else 0.0


def _cov_jackknife(a, b):
    """Sample covariance (``1/(n-1)``) and its jackknife standard error."""
    n = a.size
    ma, mb = a.mean(), b.mean()
    da, db = a - ma, b - mb
    cov = float(np.sum(da * db) / (n - 1))
    # leave-one-out covariances in O(n)
    s_ab = np.sum(a * b)
    s_a, s_b = np.sum(a), np.sum(b)
    la = (s_a - a) / (n - 1)
    lb = (s_b - b) / (n - 1)
    loo = ((s_ab - a * b) - (n - 1) * la * lb) / (n - 2)
    se = math.sqrt(max(0.0, (n - 1) / n * float(np.sum((loo - loo.mean()) ** 2))))
    return cov, se


def _window_for(observables, pad=0):
    sites = np.concatenate([f.sites() for f in observables])
    horizon = max(f.box.t_hi for f in observables)
    return (int(sites.min()) - pad, int(sites.max()) + pad), horizon


def _observe_replica(model, observables, window, horizon, seed):
    env = model.environment(window, horizon, seed)
    return [f(env) for f in observables]


def sample_observables(model, observables, replicas, seed, pad=0, workers=None):
    """``(replicas, len(observables))`` values on independent stationary
    environments; replica ``r`` uses the child seed ``r`` of ``seed``."""
    from ._parallel import map_replicas
    from .models import make_model

    model = make_model(model)
    window, horizon = _window_for(observables, pad)
    rows = map_replicas(_observe_replica,
                        [(model, observables, window, horizon, _rng.derive_seed(seed, r))
                         for r in range(replicas)], workers)
    return np.array(rows, dtype=np.float64).reshape(replicas, len(observables))


def covariance_from_samples(a, b, level=0.95, seed=None):
    from .renormalization import EstimateWithCI, z_value

    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < MIN_REPLICAS:
        raise StatisticalValidityError(f"need at least {MIN_REPLICAS} replicas, got {a.size}")
    cov, se = _cov_jackknife(a, b)
    return EstimateWithCI(cov, int(a.size), z_value(level) * se, 0, seed, level)


def estimate_box_covariance(model, f1: BoxObservable, f2: BoxObservable, replicas, seed,
                            level=0.95, pad=0, workers=None):
    """Covariance of ``f1`` and ``f2`` over independent replicas, with a
    jackknife half-width. Returns ``(estimate, time_distance)``; the
    latter carries the overlap flag."""
    if replicas < MIN_REPLICAS:
        raise StatisticalValidityError(f"need at least {MIN_REPLICAS} replicas, got {replicas}")
    vals = sample_observables(model, [f1, f2], replicas, seed, pad, workers)
    return covariance_from_samples(vals[:, 0], vals[:, 1], level, seed), time_distance(f1.box,
                                                                                      f2.box)


@dataclass(frozen=True)
class PairTemplate:
    """Congruent box pairs at time-distance ``r``.

    ``point``: indicators at ``(x0, t0)`` and ``(x0 + dx, t0 + r)``.
    Otherwise boxes of ``sites`` sites and height ``min(side, 5 r)`` with
    the second box starting ``r`` after the first ends.
    """

    kind: str = "point"
    sites: int = 1
    side: float = 1.0
    dx: int = 0
    x0: int = 0
    t0: float = 0.0
    threshold: Optional[float] = None

    def __call__(self, r):
        if self.kind == "point":
            return (BoxObservable.at(self.x0, self.t0),
                    BoxObservable.at(self.x0 + self.dx, self.t0 + r))
        if self.sites > 5 * r:
            raise ParameterError("box width exceeds 5 r")
        h = min(self.side, 5.0 * r)
        b1 = Box(self.x0, self.x0 + self.sites, self.t0, self.t0 + h)
        b2 = b1.translated(self.dx, h + r)
        return (BoxObservable(b1, self.kind, self.threshold),
                BoxObservable(b2, self.kind, self.threshold))


@dataclass
class DecayFit:
    """Covariance profile and its least-squares fit.

    ``model`` is ``"power"`` (``c r^-alpha``) or ``"exponential"``
    (``c e^{-beta r}``); ``alpha_hat`` is the fitted exponent of that
    model. ``outcome`` is ``"fit"``, ``"below_noise_floor"`` or
    ``"insufficient"``.
    """

    pairs: list
    alpha_hat: float = math.nan
    model: Optional[str] = None
    residual: float = math.nan
    fits: dict = field(default_factory=dict)
    outcome: str = "fit"
    estimates_ci: list = field(default_factory=list, repr=False)

    @property
    def r(self):
        return np.array([p[0] for p in self.pairs])

    @property
    def estimates(self):
        return np.array([p[1] for p in self.pairs])


def _lstsq_line(x, y):
    A = np.vstack([np.ones_like(x), x]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = float(np.sum((A @ coef - y) ** 2))
    return coef, res


def fit_decay(r, estimates, half_widths=None, model="auto") -> DecayFit:
    """Fit ``log cov`` against ``log r`` (power) and against ``r``
    (exponential) on the positive estimates; ``model="auto"`` keeps the
    smaller residual."""
    r = np.asarray(r, dtype=np.float64)
    est = np.asarray(estimates, dtype=np.float64)
    hw = np.zeros_like(est) if half_widths is None else np.asarray(half_widths, dtype=np.float64)
    pairs = [(float(a), float(b), float(c)) for a, b, c in zip(r, est, hw)]
    if model not in ("auto", "power", "exponential"):
        raise ParameterError("model must be 'auto', 'power' or 'exponential'")
    if half_widths is not None and np.all(np.abs(est) <= hw):
        return DecayFit(pairs, outcome="below_noise_floor")
    pos = est > 0
    if pos.sum() < 3:
        return DecayFit(pairs, outcome="insufficient")
    y = np.log(est[pos])
    fits = {}
    (c, s), res = _lstsq_line(np.log(r[pos]), y)
    fits["power"] = {"exponent": -float(s), "prefactor": float(math.exp(c)), "residual": res}
    (c, s), res = _lstsq_line(r[pos], y)
    fits["exponential"] = {"exponent": -float(s), "prefactor": float(math.exp(c)),
                           "residual": res}
    if model == "auto":
        model = min(fits, key=lambda m: fits[m]["residual"])
    f = fits[model]
    return DecayFit(pairs, f["exponent"], model, f["residual"], fits)


def covariance_decay_profile(model, template, r_list, replicas, seed, level=0.95,
                             fit_model="auto", pad=0, workers=None) -> DecayFit:
    """Covariances of ``template(r)`` pairs for each ``r``, then
    :func:`fit_decay`. One environment per replica serves every ``r``
    (common random numbers)."""
    r_list = [float(r) for r in r_list]
    if len(r_list) < 3 or any(b <= a for a, b in zip(r_list, r_list[1:])):
        raise ParameterError("need at least three increasing r values")
    if replicas < MIN_REPLICAS:
        raise StatisticalValidityError(f"need at least {MIN_REPLICAS} replicas, got {replicas}")
    obs, idx = [], []
    for r in r_list:
        pair = []
        for f in template(r):
            if f not in obs:
                obs.append(f)
            pair.append(obs.index(f))
        idx.append(pair)
    vals = sample_observables(model, obs, replicas, seed, pad, workers)
    est = [covariance_from_samples(vals[:, i], vals[:, j], level, seed) for i, j in idx]
    fit = fit_decay(r_list, [e.point for e in est], [e.half_width for e in est], fit_model)
    fit.estimates_ci = est
    return fit


__all__ = ["BoxObservable", "PairTemplate", "DecayFit", "estimate_box_covariance",
           "covariance_decay_profile", "covariance_from_samples", "sample_observables",
           "fit_decay", "MIN_REPLICAS"]
