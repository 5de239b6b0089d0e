class ExtractError(Exception):
    """Base class for failures raised by this package."""


class ValidationError(ExtractError):
    """Bad user input: missing paths, malformed arguments, empty datasets."""
