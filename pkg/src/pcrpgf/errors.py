"""Exception types shared across the package."""


class PcrPgfError(Exception):
    """Base class for all package errors."""


class ValidationError(PcrPgfError, ValueError):
    """An input violated a documented invariant."""


class ParseError(ValidationError):
    """A data file could not be parsed."""

    def __init__(self, message, path=None, line=None, column=None):
        self.path = path
        self.line = line
        self.column = column
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class MemoryBudgetExceeded(PcrPgfError, MemoryError):
    """A dense computation would exceed the configured memory budget."""


class ImaginaryResidue(PcrPgfError, ArithmeticError):
    """An inverse transform left a non-negligible imaginary part."""


class NotConverged(PcrPgfError, ArithmeticError):
    """A truncated series did not settle within the allowed number of doublings."""


class NegativeProbability(PcrPgfError, ArithmeticError):
    """A truncated series produced a clearly negative probability."""


class NonPositiveMoments(ValidationError):
    """A moment-matched family needs a positive mean and variance."""


class OutOfRange(ValidationError):
    """A requested inversion has no solution in the admissible range."""


class MissingNoiseModel(ValidationError):
    """No baseline noise distribution is available for a dye lane."""


class UnknownAllele(ValidationError):
    """An allele is absent from the frequency table."""
