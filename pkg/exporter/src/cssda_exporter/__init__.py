from .encoders import HASH_ENCODER, HashEncoder, TransformerEncoder, make_encoder
from .errors import DataError, EncoderError, ExporterError, FormatError
from .export import ExportManifest, ExportResult, export, read_texts, verify

__version__ = "0.1.0"

__all__ = [
    "HASH_ENCODER",
    "HashEncoder",
    "TransformerEncoder",
    "make_encoder",
    "DataError",
    "EncoderError",
    "ExporterError",
    "FormatError",
    "ExportManifest",
    "ExportResult",
    "export",
    "read_texts",
    "verify",
    "__version__",
]
