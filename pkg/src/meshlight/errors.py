"""Exception and warning types raised across the package."""


class MeshError(Exception):
    """Base class for all meshlight errors."""


class SingularBarState(MeshError, ValueError):
    """A vertical TBU sits (numerically) in the bar state, so its V block is undefined.

    ``location`` is ``(row, col)`` of the offending vertical TBU when known.
    """

    def __init__(self, message, location=None, f12=None):
        super().__init__(message)
        self.location = location
        self.f12 = f12


class SolveFailure(MeshError, RuntimeError):
    """A linear solve or factorization failed."""


class DomainError(MeshError, ValueError):
    """A cost was evaluated outside its domain (e.g. log of a zero target)."""


class DegenerateRow(MeshError, ValueError):
    """A relaxed row has a vertical TBU with vanishing cross coefficient q_m."""


class NegativePower(MeshError, ValueError):
    """Heater power vectors must be elementwise nonnegative."""


class InvalidRange(MeshError, ValueError):
    """A frequency range or grid size is invalid."""


class ScenarioError(MeshError, ValueError):
    """Scenario validation failure; ``field`` names the offending entry."""

    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class NoProgress(MeshError, RuntimeError):
    """The optimizer never improved on its starting cost within its patience."""


class IllConditionedWarning(UserWarning):
    """T22* (or a V block) is badly conditioned; responses may be inaccurate."""
