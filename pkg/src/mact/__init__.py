"""Memory-augmented action-chunking policies for simulated probe scanning."""

from .errors import MactError

__version__ = "0.1.0"

__all__ = ["MactError", "__version__"]
