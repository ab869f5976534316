"""Semi-supervised adversarial data augmentation for text classification
over precomputed sentence embeddings.
"""
from .errors import (
    ConfigError,
    CssdaError,
    DataError,
    FormatError,
    NumericError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CssdaError",
    "DataError",
    "FormatError",
    "NumericError",
    "__version__",
]
