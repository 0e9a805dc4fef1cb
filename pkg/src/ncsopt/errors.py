"""Exception types raised across the package."""


class NCSError(Exception):
    """Base class for all package errors."""


class ValidationError(NCSError):
    """Input failed a load-time invariant check."""


class ShapeError(ValidationError):
    pass


class RowSumError(ValidationError):
    def __init__(self, row, total, message=None):
        self.row = row
        self.total = total
        super().__init__(message or f"row {row} sums to {total!r}, expected 1")


class SupportError(ValidationError):
    def __init__(self, row, col, value, message=None):
        self.row = row
        self.col = col
        self.value = value
        super().__init__(message or f"support rule violated at ({row}, {col}): {value!r}")


class OutOfRange(ValidationError):
    pass


class BoundsError(ValidationError):
    pass


class WidthError(ValidationError):
    pass


class CostMatrixError(ValidationError):
    """A weight matrix is not symmetric or violates its definiteness floor."""

    def __init__(self, name, message, eigenvalue=None):
        self.name = name
        self.eigenvalue = eigenvalue
        super().__init__(f"{name}: {message}")


class ModeError(NCSError):
    pass


class WindowError(NCSError):
    pass


class TimeOrderError(NCSError):
    pass


class IncompleteTable(NCSError):
    pass


class SolveError(NCSError):
    def __init__(self, k, r, d, cond):
        self.k, self.r, self.d, self.cond = k, r, d, cond
        super().__init__(
            f"O_hat + R_hat is numerically singular at k={k}, r={r}, d={d} (cond={cond:.3e})")


class ScheduleGap(NCSError):
    pass


class ChainViolation(NCSError):
    pass


class HashMismatch(NCSError):
    pass


class Blowup(NCSError):
    pass


class LogGap(NCSError):
    pass


class FormatError(NCSError):
    """A serialized file could not be parsed."""
