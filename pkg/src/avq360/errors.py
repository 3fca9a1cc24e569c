"""Exception hierarchy shared across the toolkit."""


class Avq360Error(Exception):
    """Base class for all toolkit errors."""


class ValidationError(Avq360Error):
    """A precondition or configuration constraint was violated."""


class DataError(Avq360Error):
    """Input data could not be parsed or failed an integrity check."""


class NumericError(Avq360Error):
    """A computation produced NaN/Inf or an otherwise unusable result."""
