"""Exception types shared across the package."""


class ApflError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(ApflError):
    """Operands have incompatible or invalid dimensions."""


class NotPositiveDefiniteError(ApflError):
    """Cholesky factorization failed: the matrix is not positive definite."""

    def __init__(self, leading_minor: int):
        super().__init__(
            f"matrix is not positive definite: leading minor of order "
            f"{leading_minor} is not positive"
        )
        self.leading_minor = leading_minor


class DataError(ApflError):
    """Invalid dataset contents (empty inputs, labels out of range, ...)."""


class PartitionError(ApflError):
    """No client partition satisfying the constraints could be drawn."""


class FileFormatError(ApflError):
    """A binary feature or label file is malformed."""


class ProtocolError(ApflError):
    """A wire message violates the protocol (unknown tag, failed validation)."""


class FramingError(ProtocolError):
    """A frame is truncated or its declared length is inconsistent."""


class DuplicateClientError(ApflError):
    """A client's knowledge was offered to the fusion state twice."""


class IncompleteFusionError(ApflError):
    """Finalization was requested before all expected clients were fused."""


class RoundError(ApflError):
    """A federated round failed to complete."""


class ConfigError(ApflError):
    """A run configuration is invalid."""
