"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An input violates a documented invariant (bad matrix, bad parameter,
    mismatched grids, malformed config)."""


class NumericError(RuntimeError):
    """A numerical procedure failed to reach its documented tolerance."""
