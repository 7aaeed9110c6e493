"""Exception types shared across the package."""


class TeamFormError(Exception):
    """Base class for all package errors."""


class DimensionError(TeamFormError, ValueError):
    """A vector or matrix has the wrong shape for the problem it is used with."""

    def __init__(self, what, expected, got):
        self.what = what
        self.expected = expected
        self.got = got
        super().__init__(f"{what}: expected length/shape {expected}, got {got}")


class VariantError(TeamFormError, ValueError):
    """An operation was called on an instance of the wrong problem variant."""


class EmptyTaskError(TeamFormError, ValueError):
    pass


class SolverCapError(TeamFormError, ValueError):
    """Exhaustive enumeration was requested for a problem above the size cap."""


class DivergenceError(TeamFormError, FloatingPointError):
    """Gradient-based optimisation produced a non-finite loss."""


class DatasetParseError(TeamFormError, ValueError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class InfeasibleSpecError(TeamFormError, ValueError):
    pass
