"""Exception hierarchy shared across the package."""


class RetagError(Exception):
    """Base class for all package errors."""


class ZeroVectorError(RetagError):
    """Normalization requested for a vector with (near-)zero norm."""


class DimensionMismatchError(RetagError):
    """Two vectors or maps with incompatible dimensions were combined."""


class EmptyListError(RetagError):
    """An aggregate over an empty collection was requested."""


class FormatError(RetagError):
    """A file failed structural validation (magic, version, dtype, layout)."""


class VersionError(FormatError):
    """An on-disk artifact declares a format version newer than supported."""


class CountMismatchError(RetagError):
    """Caption line count and embedding row count disagree."""


class IoError(RetagError):
    """A required file or directory is missing or unreadable."""


class EmptyStoreError(RetagError):
    """An index build was requested over a store with no records."""


class InvalidParamsError(RetagError):
    """Index parameters are inconsistent (e.g. probing more lists than exist)."""


class LexiconMissingError(RetagError):
    """The part-of-speech lexicon file could not be read."""


class EmptyCandidatesError(RetagError):
    """Scoring was requested with no candidates."""


class NoCandidatesError(RetagError):
    """The extraction pipeline produced no usable candidate names."""


class EmptyRegionsError(RetagError):
    """Region labeling was requested with no regions."""


class ImageTooSmallError(RetagError):
    """Image is smaller than the dense output grid."""


class LengthMismatchError(RetagError):
    """A list of patch embeddings does not align with the patch plan."""


class ParseError(RetagError):
    """A prediction or ground-truth file could not be parsed."""


class ProviderError(RetagError):
    """The embedding provider returned an error response."""

    def __init__(self, code: str, message: str):
        super().__init__(f"[{code}] {message}")
        self.code = code
        self.message = message


class ProviderTimeoutError(ProviderError):
    """The provider did not answer within the configured timeout."""

    def __init__(self, message: str):
        super().__init__("timeout", message)


class DimDriftError(ProviderError):
    """A provider response dimension differs from the handshake dimension."""

    def __init__(self, message: str):
        super().__init__("dim_drift", message)


class DecodeError(ProviderError):
    """An image payload could not be decoded."""

    def __init__(self, message: str):
        super().__init__("decode", message)
