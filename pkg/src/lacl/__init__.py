"""Layer-agnostic contrastive learning for out-of-distribution intent detection, in numpy."""
from .errors import LaclError

__version__ = "0.1.0"

__all__ = ["LaclError", "__version__"]
