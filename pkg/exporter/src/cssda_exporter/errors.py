class ExporterError(Exception):
    """Base for everything this package raises on purpose."""


class FormatError(ExporterError):
    """Malformed input CSV, manifest, or embedding file."""


class DataError(ExporterError):
    """Well-formed input with impossible content (duplicate ids, ...)."""


class EncoderError(ExporterError):
    """The requested encoder backend cannot be loaded or run."""
