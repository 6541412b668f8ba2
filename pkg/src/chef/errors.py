"""Exception types shared across the package."""


class ChefError(Exception):
    """Base class for all package-specific errors."""


class FormatError(ChefError):
    """A file does not match the expected binary/CSV layout."""


class ConsistencyError(ChefError):
    """Files that must agree (feature rows vs. label rows) do not."""


class ValidationError(ChefError):
    """A value violates a domain invariant (e.g. probability vector sum)."""


class ArgumentError(ChefError, ValueError):
    """An argument is outside its documented range."""


class ConfigError(ChefError):
    """A configuration file or object is invalid."""


class DivergenceError(ChefError):
    """Training produced a non-finite loss or parameter."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class NumericalError(ChefError):
    """An iterative solver produced a non-finite iterate."""


class HistoryError(ChefError):
    """A quasi-Newton product was requested from an empty history."""


class CacheMissError(ChefError):
    """A sample id is missing from the provenance cache."""


class IncompleteAnnotationError(ChefError):
    """Required annotator labels are missing for some selected samples."""

    def __init__(self, missing_ids):
        super().__init__(f"missing annotator labels for ids: {sorted(missing_ids)}")
        self.missing_ids = sorted(missing_ids)
