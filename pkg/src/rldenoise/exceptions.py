"""Error types shared across the package."""


class NumericError(RuntimeError):
    """A loss or gradient turned non-finite; the offending update was aborted."""


class FormatError(ValueError):
    """A serialized file is corrupt, truncated, or of an unknown version."""


class InsufficientDataError(ValueError):
    """A statistical test was asked to run on too few usable samples."""
