"""Estimators for deviation probabilities, speed brackets, the scale ladder,
trapped and threatened points.

For a window start ``w`` the event ``A_{H,w}(v)`` asks whether some lattice
start ``y`` in ``w + [0, H)`` walks at least ``vH`` to the right within time
``H``; ``A~`` is the mirror event (at most ``vH``). The probabilities are
maximised over ``w in [0, 1)``; only two start sets occur, ``{0 .. ceil(H)-1}``
(``w = 0``) and ``{1 .. ceil(H + 1/2) - 1}`` (``w = 1/2``), and both are
evaluated on every replica.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Callable, Optional, Sequence

import numpy as np

from . import _rng
from .core import SpaceTimePoint
from .errors import (InvariantViolation, ParameterError, StatisticalValidityError,
                     TruncationError)
from .models import make_model, walk_window
from .walker import CoupledEnsemble, JumpRule, WalkerPath, final_positions

MAX_DISCARD_FRACTION = 0.01
_INT64_MAX = 2**63 - 1


def z_value(level):
    if not 0 < level < 1:
        raise ParameterError(f"confidence level must lie in (0, 1), got {level}")
    return NormalDist().inv_cdf(0.5 + level / 2)


@dataclass(frozen=True)
class EstimateWithCI:
    """Point estimate with a symmetric confidence half-width."""

    point: float
    replicas: int
    half_width: float
    discards: int = 0
    seed: Optional[int] = None
    level: float = 0.95

    @classmethod
    def proportion(cls, successes, n, level=0.95, seed=None, discards=0):
        """Normal-approximation interval ``z sqrt(p(1-p)/n)``."""
        if n < 1:
            raise StatisticalValidityError("no replicas to estimate from")
        p = successes / n
        return cls(p, int(n), z_value(level) * math.sqrt(p * (1 - p) / n), int(discards),
                   seed, level)

    @classmethod
    def mean(cls, values, level=0.95, seed=None, discards=0):
        """Sample mean with ``z s / sqrt(n)``."""
        v = np.asarray(values, dtype=np.float64)
        if v.size < 2:
            raise StatisticalValidityError("need at least two replicas for a mean interval")
        hw = z_value(level) * float(np.std(v, ddof=1)) / math.sqrt(v.size)
        return cls(float(v.mean()), int(v.size), hw, int(discards), seed, level)

    @property
    def sigma(self):
        return self.half_width / z_value(self.level)

    @property
    def lo(self):
        return self.point - self.half_width

    @property
    def hi(self):
        return self.point + self.half_width


# scale ladder


def iroot(n, k):
    """``floor(n ** (1/k))`` in exact integer arithmetic."""
    if n < 0:
        raise ParameterError("root of a negative number")
    r = int(round(n ** (1.0 / k)))
    while r ** k > n:
        r -= 1
    while (r + 1) ** k <= n:
        r += 1
    return r


LADDER_ROOT = {"main": 4, "counterexample": 5}
# lower sandwich constant for the main variant: l >= L^{1/4}/2 once L >= 16
SCALE_ROUND = 0.5


@dataclass
class ScaleLadder:
    """Scales ``L_{k+1} = l_k L_k`` with ``l_k = floor(L_k^{1/m})``, where
    ``m = 4`` (main) or ``5`` (counterexample)."""

    variant: str
    L0: int
    L: list
    l: list

    @property
    def k_max(self):
        return len(self.L) - 1

    @property
    def entries(self):
        return list(zip(self.L, self.l))

    def check(self):
        """Assert the recursion and the sandwich bounds exactly."""
        m = LADDER_ROOT[self.variant]
        for k in range(self.k_max):
            L, l, L1 = self.L[k], self.l[k], self.L[k + 1]
            if l != iroot(L, m) or L1 != l * L:
                raise InvariantViolation(f"recursion fails at k={k}")
            # L_{k+1} <= L_k^{(m+1)/m}
            if L1 ** m > L ** (m + 1):
                raise InvariantViolation(f"upper sandwich fails at k={k}")
            if self.variant == "main" and L >= 16:
                # SCALE_ROUND * L^{5/4} <= L_{k+1}, raised to the fourth power
                if 16 * L1 ** 4 < L ** 5:
                    raise InvariantViolation(f"lower sandwich fails at k={k}")
        return True

    def speeds(self, v_start, k_start=0):
        """``v_{k+1} = v_k + 8 / l_k`` from ``v_{k_start} = v_start``."""
        v = [float(v_start)]
        for k in range(k_start, self.k_max):
            v.append(v[-1] + 8.0 / self.l[k])
        return v

    def densities(self, k_start=0):
        """``rho_{k+1} = rho_k - 2 / l_k`` from ``rho_{k_start} = 1``; every
        value must stay at least 1/2."""
        rho = [1.0]
        for k in range(k_start, self.k_max):
            rho.append(rho[-1] - 2.0 / self.l[k])
        if min(rho) < 0.5:
            raise ParameterError(f"density sequence drops below 1/2 (min {min(rho):.4g}); "
                                 "start the ladder at a larger scale")
        return rho


def build_ladder(variant, L0, k_max) -> ScaleLadder:
    """Ladder with ``k_max + 1`` scales. Scales beyond the int64 range raise
    :class:`ParameterError`."""
    if variant not in LADDER_ROOT:
        raise ParameterError(f"variant must be one of {sorted(LADDER_ROOT)}")
    if int(L0) != L0 or L0 < 2:
        raise ParameterError(f"L0 must be an integer >= 2, got {L0}")
    if int(k_max) != k_max or k_max < 0:
        raise ParameterError(f"k_max must be a nonnegative integer, got {k_max}")
    m = LADDER_ROOT[variant]
    L, l = [int(L0)], []
    for _ in range(int(k_max)):
        l.append(iroot(L[-1], m))
        nxt = l[-1] * L[-1]
        if nxt > _INT64_MAX:
            raise ParameterError(f"scale overflow after {len(L)} scales")
        L.append(nxt)
    l.append(iroot(L[-1], m))
    ladder = ScaleLadder(variant, int(L0), L, l)
    ladder.check()
    return ladder


# events


def _displacements(ensemble, horizon=None):
    if isinstance(ensemble, CoupledEnsemble):
        if any(p.truncated for p in ensemble.paths):
            raise TruncationError("ensemble holds truncated paths")
        if horizon is not None and ensemble.horizon - ensemble.start_time < horizon:
            raise ParameterError("ensemble is shorter than H")
        if horizon is not None:
            t = ensemble.start_time + horizon
            return np.array([p.position(t) - p.start.x for p in ensemble.paths])
        return ensemble.displacements
    return np.asarray(ensemble)


def event_A(ensemble, v, H):
    """Some start moves at least ``vH`` within time ``H``. ``ensemble`` is a
    :class:`CoupledEnsemble` or an array of displacements."""
    d = _displacements(ensemble, H)
    return bool(np.any(d >= v * H))


def event_A_tilde(ensemble, v, H):
    """Some start moves at most ``vH`` within time ``H``."""
    d = _displacements(ensemble, H)
    return bool(np.any(d <= v * H))


def window_starts(H, offset):
    """Lattice points of ``offset + [0, H)``."""
    return np.arange(math.ceil(offset), math.ceil(offset + H), dtype=np.int64)


REPRESENTATIVES = (0.0, 0.5)


def _extremes_replica(model, rule, H, seed):
    starts = np.arange(0, math.ceil(H + 0.5), dtype=np.int64)
    env, clocks = model.simulate(walk_window(starts[0], starts[-1], H, rule.ell), H, seed)
    finals, trunc = final_positions(env, clocks, rule, starts, 0.0, H)
    if trunc.any():
        return None
    d = finals - starts
    out = []
    for w in REPRESENTATIVES:
        sel = window_starts(H, w)
        out.extend((d[sel].max(), d[sel].min()))
    return out


@dataclass
class DisplacementTable:
    """Per replica and representative, the largest and smallest
    displacement ``X_H^y - y`` over the window starts."""

    H: float
    seed: int
    highs: np.ndarray  # (replicas, 2)
    lows: np.ndarray
    discards: int

    @property
    def replicas(self):
        return self.highs.shape[0]

    def p_hat(self, v, level=0.95):
        k = (self.highs >= v * self.H).sum(axis=0)
        return EstimateWithCI.proportion(int(k.max()), self.replicas, level, self.seed,
                                         self.discards)

    def p_tilde_hat(self, v, level=0.95):
        k = (self.lows <= v * self.H).sum(axis=0)
        return EstimateWithCI.proportion(int(k.max()), self.replicas, level, self.seed,
                                         self.discards)


def displacement_table(model, rule: JumpRule, H, replicas, seed, workers=None):
    """Simulate ``replicas`` fresh environments and clocks and record the
    extreme displacements over both window representatives.

    Replicas with a truncated walker are discarded; more than 1% discards
    raise :class:`StatisticalValidityError`.
    """
    from ._parallel import map_replicas

    if replicas < 1:
        raise ParameterError("need at least one replica")
    if not H > 0:
        raise ParameterError("H must be positive")
    model = make_model(model)
    rows = map_replicas(_extremes_replica, [(model, rule, float(H), _rng.derive_seed(seed, r))
                                            for r in range(replicas)], workers)
    kept = [r for r in rows if r is not None]
    discards = replicas - len(kept)
    if discards > MAX_DISCARD_FRACTION * replicas:
        raise StatisticalValidityError(f"{discards} of {replicas} replicas truncated")
    arr = np.array(kept, dtype=np.float64).reshape(-1, 4)
    return DisplacementTable(float(H), int(seed), arr[:, [0, 2]], arr[:, [1, 3]], discards)


def estimate_pH(model, rule, H, v, replicas, seed, level=0.95, workers=None) -> EstimateWithCI:
    """Frequency of ``A_{H,w}(v)``, maximised over the two representatives."""
    return displacement_table(model, rule, H, replicas, seed, workers).p_hat(v, level)


def estimate_pH_tilde(model, rule, H, v, replicas, seed, level=0.95,
                      workers=None) -> EstimateWithCI:
    """Frequency of ``A~_{H,w}(v)``, maximised over the two representatives."""
    return displacement_table(model, rule, H, replicas, seed, workers).p_tilde_hat(v, level)


@dataclass
class SpeedBracket:
    """Per ``H``: ``v_plus`` is the smallest grid speed with ``p_H <= theta``,
    ``v_minus`` the largest with ``p~_H <= theta``; None when the grid never
    crosses ``theta`` (open bracket)."""

    H: list
    v_grid: np.ndarray
    theta: float
    v_plus: list
    v_minus: list
    p_curves: list = field(repr=False, default_factory=list)
    p_tilde_curves: list = field(repr=False, default_factory=list)
    replicas: int = 0
    discards: list = field(default_factory=list)
    seed: Optional[int] = None

    @property
    def step(self):
        return float(np.max(np.diff(self.v_grid))) if len(self.v_grid) > 1 else 0.0

    @property
    def open_ended(self):
        return [vp is None or vm is None for vp, vm in zip(self.v_plus, self.v_minus)]

    def width(self, i):
        if self.v_plus[i] is None or self.v_minus[i] is None:
            return math.inf
        return self.v_plus[i] - self.v_minus[i]

    @property
    def widths(self):
        return [self.width(i) for i in range(len(self.H))]


def bracket_speeds(model, rule, H_grid, v_grid, theta, replicas, seed, workers=None,
                   level=0.95) -> SpeedBracket:
    """Scan ``p_H`` and ``p~_H`` over a speed grid for each ``H``; all grid
    points of one ``H`` share the same replicas, so the curves are exactly
    monotone."""
    v_grid = np.asarray(v_grid, dtype=np.float64)
    if np.any(np.diff(v_grid) <= 0) or np.any(np.diff(H_grid) <= 0):
        raise ParameterError("grids must be strictly increasing")
    out = SpeedBracket(list(H_grid), v_grid, float(theta), [], [], replicas=replicas, seed=seed)
    for i, H in enumerate(H_grid):
        tab = displacement_table(model, rule, H, replicas, _rng.derive_seed(seed, i), workers)
        p = [tab.p_hat(v, level) for v in v_grid]
        pt = [tab.p_tilde_hat(v, level) for v in v_grid]
        up = [v for v, e in zip(v_grid, p) if e.point <= theta]
        down = [v for v, e in zip(v_grid, pt) if e.point <= theta]
        out.v_plus.append(float(up[0]) if up else None)
        out.v_minus.append(float(down[-1]) if down else None)
        out.p_curves.append(p)
        out.p_tilde_curves.append(pt)
        out.discards.append(tab.discards)
    return out


def _positions_replica(model, rule, times, seed):
    T = float(times[-1])
    env, clocks = model.simulate(walk_window(0, 0, T, rule.ell), T, seed)
    from .walker import run_walker

    try:
        path = run_walker(env, clocks, rule, SpaceTimePoint(0, 0.0), T)
    except TruncationError:
        return None
    return [float(path.position(t)) for t in times]


def _final_replica(model, rule, T, seed):
    pos = _positions_replica(model, rule, [T], seed)
    return None if pos is None else pos[0] / T


def estimate_speed(model, rule, T, replicas, seed, level=0.95, workers=None) -> EstimateWithCI:
    """Mean of ``X_T / T`` for a walker from the origin, one environment per
    replica; truncated replicas are discarded up to the usual cap."""
    from ._parallel import map_replicas

    model = make_model(model)
    vals = map_replicas(_final_replica, [(model, rule, float(T), _rng.derive_seed(seed, r))
                                         for r in range(replicas)], workers)
    kept = [v for v in vals if v is not None]
    discards = replicas - len(kept)
    if discards > MAX_DISCARD_FRACTION * replicas:
        raise StatisticalValidityError(f"{discards} of {replicas} replicas truncated")
    return EstimateWithCI.mean(kept, level, seed, discards)


def concentration_diagnostic(model, rule, t_grid, eps, replicas, seed, v_hat=None,
                             level=0.95, workers=None):
    """Frequencies of ``|X_t / t - v| >= eps`` along one walk per replica.

    ``v`` defaults to the mean of ``X_t / t`` at the largest ``t``. Returns
    ``(rows, v_hat)`` with rows ``(t, EstimateWithCI)``; ``decreasing`` in
    the result flags whether the frequencies strictly decrease in ``t``.
    """
    from ._parallel import map_replicas

    t_grid = [float(t) for t in t_grid]
    if any(b <= a for a, b in zip(t_grid, t_grid[1:])):
        raise ParameterError("t grid must be strictly increasing")
    model = make_model(model)
    rows = map_replicas(_positions_replica, [(model, rule, t_grid, _rng.derive_seed(seed, r))
                                             for r in range(replicas)], workers)
    kept = np.array([r for r in rows if r is not None], dtype=np.float64).reshape(-1, len(t_grid))
    discards = replicas - kept.shape[0]
    if discards > MAX_DISCARD_FRACTION * replicas:
        raise StatisticalValidityError(f"{discards} of {replicas} replicas truncated")
    if v_hat is None:
        v_hat = float(kept[:, -1].mean() / t_grid[-1])
    t = np.array(t_grid)
    # |X - v t| >= eps t avoids rounding in X / t
    hits = np.abs(kept - v_hat * t) >= eps * t
    table = [(tt, EstimateWithCI.proportion(int(h), kept.shape[0], level, seed, discards))
             for tt, h in zip(t_grid, hits.sum(axis=0))]
    return ConcentrationTable(table, float(v_hat), float(eps))


@dataclass
class ConcentrationTable:
    rows: list
    v_hat: float
    eps: float

    @property
    def frequencies(self):
        return [e.point for _, e in self.rows]

    @property
    def decreasing(self):
        f = self.frequencies
        return all(b < a for a, b in zip(f, f[1:]))


# trapped and threatened points


def _tilde_H(H, delta):
    if not delta > 0 or not delta * H / 4 >= 1:
        raise ParameterError(f"need delta * H / 4 >= 1, got delta={delta}, H={H}")
    return math.floor(delta * H / 4)


def round_point(y, H, delta):
    """Floor the site to the grid of mesh ``floor(delta H / 4)``; time kept."""
    Ht = _tilde_H(H, delta)
    x, t = (y.x, y.t) if isinstance(y, SpaceTimePoint) else y
    xr = math.floor(x / Ht) * Ht
    xr = int(xr) if float(xr).is_integer() else xr
    return SpaceTimePoint(xr, float(t)) if isinstance(y, SpaceTimePoint) else (xr, float(t))


def trap_starts(w, H, delta):
    """Lattice sites of ``w + [delta H, 2 delta H]`` (closed)."""
    x = w.x if isinstance(w, SpaceTimePoint) else w[0]
    return np.arange(math.ceil(x + delta * H), math.floor(x + 2 * delta * H) + 1, dtype=np.int64)


def is_trapped(w, H, delta, v_minus, ensemble):
    """Some start in ``w + [delta H, 2 delta H]`` moves at most
    ``(v_minus + delta) H`` in time ``H``. ``ensemble`` holds exactly those
    starts (a :class:`CoupledEnsemble`) or their displacements."""
    if isinstance(ensemble, CoupledEnsemble):
        want = trap_starts(w, H, delta)
        if not np.array_equal(np.sort(ensemble.starts), want):
            raise ParameterError("ensemble starts do not match the trap window")
    d = _displacements(ensemble, H)
    return bool(np.any(d <= (v_minus + delta) * H))


class TrapOracle:
    """Decides trapping on one environment and clock realization.

    ``oracle(x, t, H)`` runs coupled walkers from the trap window of
    ``(x, t)`` for time ``H``; results are cached per query.
    """

    def __init__(self, env, clocks, rule: JumpRule, delta, v_minus):
        self.env, self.clocks, self.rule = env, clocks, rule
        self.delta, self.v_minus = float(delta), float(v_minus)
        self._cache = {}

    def __call__(self, x, t, H):
        key = (float(x), float(t), float(H))
        if key not in self._cache:
            starts = trap_starts((x, t), H, self.delta)
            if starts.size == 0:
                raise ParameterError("trap window holds no lattice site")
            finals, trunc = final_positions(self.env, self.clocks, self.rule, starts, t, H)
            if trunc.any():
                raise TruncationError(f"trap walkers from ({x}, {t}) left the window", time=t)
            self._cache[key] = is_trapped((x, t), H, self.delta, self.v_minus, finals - starts)
        return self._cache[key]


def threat_anchors(w, H, r, v_plus):
    x, t = (w.x, w.t) if isinstance(w, SpaceTimePoint) else w
    return [(x + j * H * v_plus, t + j * H) for j in range(int(r))]


def is_threatened(w, H, r, delta, v_plus, v_minus, oracle: Callable) -> bool:
    """Some anchor ``w + jH(v_plus, 1)``, ``j < r``, is ``H``-trapped.

    ``oracle(x, t, H)`` decides trapping at a planar point (``delta`` and
    ``v_minus`` are the oracle's own).
    """
    if int(r) != r or r < 1:
        raise ParameterError("r must be a positive integer")
    return any(oracle(x, t, H) for x, t in threat_anchors(w, H, r, v_plus))


def threatened_density(path: WalkerPath, h, ladder: ScaleLadder, k_bar, oracle, delta,
                       v_plus, v_minus=None):
    """Fraction of checkpoints ``j h L_{k+1}`` (``k = k_bar``) whose rounded
    position is ``(h L_k, l_k)``-threatened. The path must last ``h L_m``
    for some ``m > k_bar``."""
    duration = path.horizon - path.start.t
    L = ladder.L
    m = next((m for m in range(k_bar + 1, ladder.k_max + 1)
              if math.isclose(duration, h * L[m], rel_tol=1e-12)), None)
    if m is None:
        raise ParameterError("path length is not h L_m for a ladder scale above k_bar")
    n = L[m] // L[k_bar + 1]
    H = h * L[k_bar]
    step = h * L[k_bar + 1]
    flags = []
    for j in range(n):
        t = path.start.t + j * step
        w = round_point((path.position(t), t), H, delta)
        flags.append(is_threatened(w, H, ladder.l[k_bar], delta, v_plus, v_minus, oracle))
    return float(np.mean(flags))


def _trap_replica(model, rule, H, delta, v_minus, v_plus, r, seed):
    T = r * H
    lo = min(0.0, (r - 1) * H * v_plus) + delta * H
    hi = max(0.0, (r - 1) * H * v_plus) + 2 * delta * H
    env, clocks = model.simulate(walk_window(math.floor(lo), math.ceil(hi), H, rule.ell), T, seed)
    oracle = TrapOracle(env, clocks, rule, delta, v_minus)
    try:
        return is_threatened((0.0, 0.0), H, r, delta, v_plus, v_minus, oracle)
    except TruncationError:
        return None


def threatened_probability(model, rule, H, delta, v_minus, v_plus=0.0, r=1, replicas=100,
                           seed=0, level=0.95, workers=None) -> EstimateWithCI:
    """Frequency with which the origin is ``(H, r)``-threatened; ``r = 1``
    is plain trapping."""
    from ._parallel import map_replicas

    _tilde_H(H, delta)
    model = make_model(model)
    res = map_replicas(_trap_replica, [(model, rule, float(H), delta, v_minus, v_plus, int(r),
                                        _rng.derive_seed(seed, i)) for i in range(replicas)],
                       workers)
    kept = [x for x in res if x is not None]
    discards = replicas - len(kept)
    if discards > MAX_DISCARD_FRACTION * replicas:
        raise StatisticalValidityError(f"{discards} of {replicas} replicas truncated")
    return EstimateWithCI.proportion(int(sum(kept)), len(kept), level, seed, discards)


def trapped_probability(model, rule, H, delta, v_minus, replicas=100, seed=0, level=0.95,
                        workers=None) -> EstimateWithCI:
    return threatened_probability(model, rule, H, delta, v_minus, 0.0, 1, replicas, seed, level,
                                  workers)


__all__ = ["EstimateWithCI", "ScaleLadder", "build_ladder", "iroot", "SpeedBracket",
           "DisplacementTable", "event_A", "event_A_tilde", "window_starts",
           "displacement_table", "estimate_speed", "estimate_pH", "estimate_pH_tilde",
           "bracket_speeds",
           "concentration_diagnostic", "ConcentrationTable", "round_point", "trap_starts",
           "is_trapped", "TrapOracle", "threat_anchors", "is_threatened", "threatened_density",
           "threatened_probability", "trapped_probability", "z_value"]
