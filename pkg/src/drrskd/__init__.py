"""Double-reverse self-knowledge distillation on a small numpy network core."""
from .errors import (ConfigError, DataError, DomainError, DrrError, FormatError, FrozenModelError, NumericError,
                     ReportError, ShapeError, StateError)

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "DomainError", "DrrError", "FormatError", "FrozenModelError",
           "NumericError", "ReportError", "ShapeError", "StateError", "__version__"]
