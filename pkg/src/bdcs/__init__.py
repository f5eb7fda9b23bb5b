"""Doubly-selective channel estimation for large-scale MIMO-OFDM.

Block-distributed compressive sensing over CE-BEM coefficients, with
superimposed guard-pilot patterns and stochastic pilot-position design.
"""

from bdcs.errors import DegenerateInputError, DimensionError, InfeasibleError, ParameterError

__version__ = "0.1.0"

__all__ = ["DegenerateInputError", "DimensionError", "InfeasibleError", "ParameterError", "__version__"]
