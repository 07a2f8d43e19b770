"""Exception hierarchy shared across the package.

Every error raised on purpose derives from :class:`MrfError` so the CLI can
map failures onto its exit-code contract (validation/format -> 2,
numerics -> 3).
"""


class MrfError(Exception):
    """Base class for all package errors."""


class ValidationError(MrfError, ValueError):
    """Invalid user-supplied values (parameters, schedules, grids, configs)."""


class ParameterError(ValidationError):
    """Tissue parameters outside their physical domain."""


class ScheduleError(ValidationError):
    """Acquisition schedule violates its invariants."""


class GridError(ValidationError):
    """Malformed grid segment or grid specification."""


class FormatError(MrfError, RuntimeError):
    """Persisted file is unreadable: bad magic, version, or payload size."""


class NumericsError(MrfError, ArithmeticError):
    """Non-finite values encountered where finite ones are required."""
