"""Exception types shared across the package."""


class JdrnError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatch(JdrnError):
    """Tensor extents disagree where they are required to match."""


class RankError(JdrnError):
    """An axis index is out of range or repeated."""


class GeometryError(JdrnError):
    """Image or plane dimensions violate the 8x8 block structure."""


class QuantMismatch(JdrnError):
    """Two objects built against different quantization tables were combined."""


class StrideUnsupported(JdrnError):
    """Convolution stride outside the supported set {1, 2}."""


class UnsupportedFormat(JdrnError):
    """Input file uses a feature outside the supported subset."""


class CorruptStream(JdrnError):
    """JPEG bitstream violates the format (bad marker, Huffman over-run, ...)."""


class TruncatedFile(JdrnError):
    """Input ended before the structure it promised was complete."""


class SubsamplingUnsupported(JdrnError):
    """Chroma-subsampled input cannot feed the network path."""


class CorruptFile(JdrnError):
    """Weight file is structurally damaged."""


class VersionMismatch(JdrnError):
    """Weight file magic or format version is not recognized."""


class ConfigError(JdrnError):
    """Bad command-line or run configuration."""
