"""Exception hierarchy.

Every domain failure derives from :class:`LuminescenceError`; the CLI maps
these to exit code 1 and reports the class name.
"""


class LuminescenceError(Exception):
    """Base class for all domain errors raised by the package."""


class ModelFileError(LuminescenceError):
    """A model document could not be parsed; ``path`` names the bad field."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class TripletOrderViolation(LuminescenceError):
    pass


class DuplicateTriplet(LuminescenceError):
    pass


class NonPositiveRate(LuminescenceError):
    pass


class StateOutOfRange(LuminescenceError):
    pass


class GridOutOfRange(LuminescenceError):
    pass


class EventBudgetExceeded(LuminescenceError):
    """Expected event count of a run is above the configured memory cap."""


class InfeasiblePath(LuminescenceError):
    """Some segment of a path has infinite Lagrangian cost."""


class BlowUp(LuminescenceError):
    pass


class NoConvergence(LuminescenceError):
    pass


class NonPhysicalRoot(LuminescenceError):
    pass


class AmbiguousDominantChannel(LuminescenceError):
    pass


class AllCensored(LuminescenceError):
    pass


class InsufficientHits(LuminescenceError):
    pass
