"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A scalar parameter is out of its admissible range."""


class DimensionError(ValueError):
    """Array shapes do not agree."""


class DegenerateInputError(ValueError):
    """Input is well-shaped but mathematically degenerate (e.g. a zero column)."""


class InfeasibleError(ParameterError):
    """Pilot groups cannot be packed into the available subcarriers."""
