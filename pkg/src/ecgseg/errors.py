"""Exception hierarchy shared across the toolkit."""


class EcgSegError(Exception):
    """Base class for all toolkit errors."""


class DataError(EcgSegError):
    """A data file or stream could not be interpreted."""


class MalformedHeader(DataError):
    pass


class UnsupportedFormat(DataError):
    pass


class TruncatedStream(DataError):
    pass


class OutOfRangeAnnotation(DataError):
    pass


class OrphanBoundary(DataError):
    pass


class UnpairedFiducial(DataError):
    pass


class SchemaError(DataError):
    """An interchange document violates the documented schema."""


class MissingParameter(EcgSegError):
    """A noise generator was invoked without a required parameter."""


class ConfigError(EcgSegError):
    """Invalid configuration or command usage."""


class DivergenceError(EcgSegError):
    """Training produced non-finite losses, gradients or parameters."""
