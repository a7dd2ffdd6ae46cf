"""Exception hierarchy shared by every module."""


class JointMetricError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(JointMetricError, ValueError):
    """Array dimensions are inconsistent with each other."""


class NumericError(JointMetricError, ArithmeticError):
    """Non-finite input, or a matrix that violates PSD beyond tolerance."""


class DegenerateScaleError(NumericError):
    """Rescaling is undefined because L or every M_t is zero."""


class InfeasibleDimensionError(JointMetricError, ValueError):
    """The embedding dimension is too small for the requested kernels."""


class DegenerateShapeError(JointMetricError, ValueError):
    """A landmark configuration collapses to a single point."""


class DivergedError(NumericError):
    """Training objective became non-finite or blew up."""

    def __init__(self, iteration, value):
        self.iteration = iteration
        self.value = value
        super().__init__(f"objective diverged at outer iteration {iteration} (value={value!r})")


class DataError(JointMetricError, ValueError):
    """Malformed or inconsistent dataset content."""


class DataFormatError(DataError):
    """A file could not be parsed; carries the offending line number."""

    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")
