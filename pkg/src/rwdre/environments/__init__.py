"""Dynamical random environments sharing the :class:`EnvTrajectory` contract."""

from .base import ConstantTrajectory, EnvTrajectory, EventLogTrajectory
from .contact import GraphicalConstruction, contact_dual_survival, contact_simulate
from .east import (EastRealization, EastTrajectory, east_distinguished_zero, east_front,
                   east_front_path, east_simulate, east_speed, east_zero_path,
                   leftmost_zero)
from .renewal import renewal_simulate, renewal_stationary
from .spinflip import SpinFlipTrajectory, spinflip_simulate

__all__ = [
    "ConstantTrajectory", "EnvTrajectory", "EventLogTrajectory", "GraphicalConstruction",
    "contact_dual_survival", "contact_simulate", "EastRealization", "EastTrajectory",
    "east_distinguished_zero", "east_front", "east_front_path", "east_simulate", "east_speed",
    "east_zero_path",
    "leftmost_zero", "renewal_simulate", "renewal_stationary", "SpinFlipTrajectory",
    "spinflip_simulate",
]
