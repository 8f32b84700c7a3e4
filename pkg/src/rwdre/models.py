"""Model configurations: named parameter records that build one replica's
environment and walker clocks from a seed.

Every model answers ``simulate(window, horizon, seed) -> (env, clocks)``.
The environment and the clocks use child seeds of ``seed``, so a replica
is a pure function of ``(model, window, horizon, seed)``.
"""

from __future__ import annotations

import math

from . import _rng
from .core import STREAM_WALKER, Box, ClockSource
from .errors import ParameterError


def walk_margin(duration, ell=0):
    """Room left and right of the starts for a walk of ``duration``.

    A walker moves at most once per ring, and the ring count exceeds
    ``T + 6 sqrt(T) + 10`` with probability far below ``1e-6``; walkers
    that still get out are reported as truncated, never extrapolated.
    """
    return int(math.ceil(duration + 6.0 * math.sqrt(duration) + 10.0)) + int(ell)


def walk_window(lo, hi, duration, ell=0):
    m = walk_margin(duration, ell)
    return (int(lo) - m, int(hi) + m)


class Model:
    name = "model"
    alphabet = 2
    defaults: dict = {}

    def __init__(self, **params):
        unknown = set(params) - set(self.defaults)
        if unknown:
            raise ParameterError(f"unknown parameters for {self.name}: {sorted(unknown)}")
        self.params = {**self.defaults, **params}
        self._validate()

    def _validate(self):
        pass

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"{type(self).__name__}({args})"

    def __eq__(self, other):
        return type(self) is type(other) and self.params == other.params

    def to_dict(self):
        return {"name": self.name, **self.params}

    def environment(self, window, horizon, seed):
        raise NotImplementedError

    def clocks(self, env, seed):
        """Walker clocks, independent of the environment."""
        return ClockSource(1.0, seed, STREAM_WALKER, window=env.window, horizon=env.horizon)

    def simulate(self, window, horizon, seed):
        env = self.environment(window, horizon, _rng.derive_seed(seed, 0))
        return env, self.clocks(env, _rng.derive_seed(seed, 1))


class BlindModel(Model):
    """Environment frozen at a constant, for rules that ignore it."""

    name = "blind"
    defaults = {"value": 0}

    def environment(self, window, horizon, seed):
        from .environments.base import ConstantTrajectory

        return ConstantTrajectory(window, horizon, self.params["value"])


class SpinFlipModel(Model):
    name = "spinflip"
    defaults = {"nu": 1.0, "rho": 0.5}

    def _validate(self):
        if not self.params["nu"] > 0:
            raise ParameterError("spin-flip rate must be positive")
        if not 0 < self.params["rho"] < 1:
            raise ParameterError("density must lie in (0, 1)")

    def environment(self, window, horizon, seed):
        from .environments.spinflip import spinflip_simulate

        return spinflip_simulate(self.params["nu"], self.params["rho"], window, horizon, seed)


class ContactModel(Model):
    """Contact process from (approximately) its upper invariant law."""

    name = "contact"
    defaults = {"lam": 2.0, "boundary": "frozen0", "depth": None, "init": "upper_invariant"}

    def _validate(self):
        if not self.params["lam"] >= 0:
            raise ParameterError("infection rate must be nonnegative")

    def environment(self, window, horizon, seed):
        from .environments.contact import contact_simulate

        p = self.params
        return contact_simulate(p["lam"], p["init"], window, horizon, seed,
                                boundary=p["boundary"], depth=p["depth"])


class EastModel(Model):
    """Stationary East model, simulated exactly on the window (the causal
    extension removes the right boundary).

    ``clock_coupling="shared"`` lets walkers ring with the East clocks
    themselves; ``"independent"`` gives them their own clocks.
    """

    name = "east"
    defaults = {"rho": 0.5, "clock_coupling": "independent"}

    def _validate(self):
        if not 0 < self.params["rho"] < 1:
            raise ParameterError("density must lie in (0, 1)")
        if self.params["clock_coupling"] not in ("shared", "independent"):
            raise ParameterError("clock_coupling must be 'shared' or 'independent'")

    def environment(self, window, horizon, seed):
        from .environments.east import east_simulate

        return east_simulate(self.params["rho"], "stationary", window, horizon, seed,
                             causal=True).trajectory

    def simulate(self, window, horizon, seed):
        from .environments.east import east_simulate

        real = east_simulate(self.params["rho"], "stationary", window, horizon,
                             _rng.derive_seed(seed, 0), causal=True)
        env = real.trajectory
        if self.params["clock_coupling"] == "shared":
            return env, real.clock_source()
        return env, self.clocks(env, _rng.derive_seed(seed, 1))


class RenewalModel(Model):
    """Independent stationary renewal chains; walkers see ``min(state, 1)``
    through two-letter rules."""

    name = "renewal"
    defaults = {"weights": (1.0, 1.0)}

    def _validate(self):
        from .environments.renewal import _weights

        self.params["weights"] = tuple(float(a) for a in _weights(self.params["weights"]))

    def environment(self, window, horizon, seed):
        from .environments.renewal import renewal_simulate

        return renewal_simulate(self.params["weights"], window, horizon, seed)


class SoupModel(Model):
    """Color field of the rectangle soup (0 gray, 1 black, 2 white)."""

    name = "counterexample"
    alphabet = 3
    defaults = {"L0": 1000, "k_max": 2, "force": None}

    def environment(self, window, horizon, seed):
        from .counterexample import ColorField, generate_soup

        p = self.params
        box = Box(window[0], window[1] + 1.0, 0.0, float(horizon))
        soup = generate_soup(p["L0"], p["k_max"], box, seed, empty=p["force"] is not None)
        return ColorField(soup, force=p["force"])


MODELS = {cls.name: cls for cls in (BlindModel, SpinFlipModel, ContactModel, EastModel,
                                    RenewalModel, SoupModel)}


def make_model(spec, **params) -> Model:
    """Model from a name plus parameters, a dict with a ``name`` key, or a
    model instance (returned as is)."""
    if isinstance(spec, Model):
        return spec
    if isinstance(spec, dict):
        spec = dict(spec)
        name = spec.pop("name")
        params = {**spec, **params}
    else:
        name = spec
    if name not in MODELS:
        raise ParameterError(f"unknown model {name!r}; known: {sorted(MODELS)}")
    return MODELS[name](**params)


__all__ = ["Model", "BlindModel", "SpinFlipModel", "ContactModel", "EastModel",
           "RenewalModel", "SoupModel", "MODELS", "make_model", "walk_margin", "walk_window"]
