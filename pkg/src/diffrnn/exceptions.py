"""Exception hierarchy shared by every module of the package."""


class DiffRNNError(Exception):
    """Base class for all errors raised by diffrnn."""


class DomainError(DiffRNNError, ValueError):
    """An argument lies outside the domain of a function (negative bandwidth, NaN input...)."""


class UnsupportedOperationError(DiffRNNError, NotImplementedError):
    """The requested closed form is not available for this activation kind."""


class ShapeError(DiffRNNError, ValueError):
    """Array shapes are inconsistent with the declared dimensions."""


class NumericError(DiffRNNError, ArithmeticError):
    """A non-finite value was produced.

    ``location`` carries whatever index information is available, e.g.
    ``{"sequence": 3, "step": 7}``.
    """

    def __init__(self, message, location=None):
        self.location = dict(location or {})
        if self.location:
            where = ", ".join(f"{k}={v}" for k, v in self.location.items())
            message = f"{message} ({where})"
        super().__init__(message)


class DivergenceError(NumericError):
    """Training produced a non-finite cost or gradient."""


class DataFormatError(DiffRNNError, ValueError):
    """A dataset or checkpoint file is malformed or truncated."""


class VersionMismatchError(DataFormatError):
    """A file was written by an incompatible format version."""


class ConfigError(DiffRNNError, ValueError):
    """An experiment configuration is invalid."""
