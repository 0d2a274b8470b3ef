"""Exception hierarchy shared by all uwloc modules."""


class UwlocError(Exception):
    """Base class for every error raised by this package."""


class DomainError(UwlocError, ValueError):
    """An input lies outside the domain where a formula is defined."""


class InvalidRegionError(UwlocError, ValueError):
    pass


class FlatCurveError(UwlocError, ValueError):
    """A clarity curve has no peak (all values equal)."""


class FitError(UwlocError):
    """Nonlinear fit did not converge.

    ``best`` holds the best parameter vector reached, ``cost`` its sum of
    squared residuals.
    """

    def __init__(self, message, best=None, cost=None):
        super().__init__(message)
        self.best = best
        self.cost = cost


class BehindCameraError(UwlocError, ValueError):
    pass


class GimbalLockError(UwlocError):
    """Pitch reached +-pi/2 where the Euler parameterisation is singular."""


class ContractViolation(UwlocError):
    """Caller-supplied data contradicts a documented precondition."""


class ScenarioError(UwlocError):
    """Invalid scenario file. ``path`` is the JSON path of the offending node."""

    def __init__(self, message, path="$"):
        super().__init__(f"{path}: {message}")
        self.path = path


class SimulationError(UwlocError):
    """Wraps any failure inside a scenario run with the round index."""

    def __init__(self, round_index, cause):
        super().__init__(f"round {round_index}: {cause}")
        self.round_index = round_index
        self.cause = cause
