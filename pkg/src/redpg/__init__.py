"""Reachability-aware distributed potential-game planning for multi-agent systems."""
from .errors import (ConfigError, GenerationError, InputError, NumericalError, RedpgError,
                     SolverError)

__version__ = "0.1.0"

__all__ = ["ConfigError", "GenerationError", "InputError", "NumericalError", "RedpgError",
           "SolverError", "__version__"]
