"""Exception types shared across the package."""


class ShapeMismatchError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(ValueError):
    """A configuration value is out of its documented range or inconsistent."""


class TapeReleasedError(RuntimeError):
    """backward() was called on a graph whose tape has already been consumed."""


class CheckpointError(IOError):
    """Base class for checkpoint serialization failures."""


class CheckpointMagicError(CheckpointError):
    """File does not start with the expected magic bytes."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported by this reader."""


class CheckpointTruncatedError(CheckpointError):
    """File ended before the declared payload was read."""


class CheckpointParamMismatchError(CheckpointError):
    """Stored parameter names/shapes do not match the target model."""


class ImageFormatError(IOError):
    """An image file is malformed; message carries the byte offset when known."""


class ManifestError(ValueError):
    """A dataset manifest is missing fields or references absent files."""


class NanLossError(ArithmeticError):
    """Training loss became non-finite; names the failing step and loss term."""

    def __init__(self, step: int, term: str = "total", message: str = ""):
        self.step = step
        self.term = term
        super().__init__(
            message or f"non-finite {term} loss at step {step}"
        )


class MissingProxyError(FileNotFoundError):
    """A contrastive loss was requested but no perceptual proxy checkpoint exists."""
