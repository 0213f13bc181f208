"""Pure differentially private sums and uniformity tests over secure intermediaries."""
from .errors import ParameterError, ResourceError, StructuralError
from .rng import Rng

__version__ = "0.1.0"

__all__ = ["ParameterError", "ResourceError", "StructuralError", "Rng", "__version__"]
