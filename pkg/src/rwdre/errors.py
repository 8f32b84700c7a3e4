"""Exception hierarchy shared by every module."""


class RwdreError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(RwdreError, ValueError):
    """Invalid model, rule, or experiment parameter."""


class QueryError(RwdreError, ValueError):
    """A query fell outside the simulated space-time window."""


class TruncationError(RwdreError, RuntimeError):
    """A simulation needed data outside its finite window.

    ``time`` is the first offending time and ``partial`` carries whatever
    was computed before the window was left (a path, a set, ...).
    """

    def __init__(self, message, time=None, partial=None):
        super().__init__(message)
        self.time = time
        self.partial = partial


class InvariantViolation(RwdreError, AssertionError):
    """An internal invariant failed. Always a bug."""


class StatisticalValidityError(RwdreError, RuntimeError):
    """Too many discarded replicas, or too few replicas for a meaningful CI."""
