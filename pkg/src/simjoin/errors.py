"""Exception types shared across the package."""


class SimJoinError(Exception):
    """Base class for all package errors."""


class DataError(SimJoinError):
    """Malformed input data: bad file formats, dimension mismatches, degenerate vectors."""


class NumericError(SimJoinError):
    """Numeric failure: diverging training, non-finite values."""
