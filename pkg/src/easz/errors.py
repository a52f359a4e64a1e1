"""Exception hierarchy shared across the package."""


class EaszError(Exception):
    """Base for all package-specific errors."""


class ParseError(EaszError):
    """Malformed raster stream (bad magic, truncated payload, bad maxval)."""


class ParameterError(EaszError):
    """Infeasible or out-of-range configuration values."""


class GeometryError(EaszError):
    """Mask/raster shapes that cannot be squeezed or unsqueezed consistently."""


class DimensionError(EaszError):
    """Shape mismatch between tensors or images."""


class FormatError(EaszError):
    """Corrupt or incompatible serialized container / checkpoint."""


class TrainingError(EaszError):
    """Non-finite loss or gradients during optimization."""


class TransportError(EaszError):
    """Framing or connection failures on the TCP path."""
