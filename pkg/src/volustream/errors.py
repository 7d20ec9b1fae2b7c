"""Exception types shared across the volustream package."""


class VoluStreamError(Exception):
    """Base class for all package errors."""


class ConfigurationError(VoluStreamError):
    """Invalid configuration value, unknown codec id, or bad flag combination."""


class FormatError(VoluStreamError):
    """Malformed bytes: bad file, truncated payload, out-of-range field."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (at byte offset {offset})")
        self.offset = offset


class HandshakeError(VoluStreamError):
    """Bad magic/version or incompatible peer during session setup."""


class CodecError(VoluStreamError):
    """Encoder/decoder misuse, e.g. frame dimensions not matching the reference."""


class DesyncError(CodecError):
    """Delta received without a reference from its keyframe epoch."""


class AnnotationProtocolError(VoluStreamError):
    """Annotation op referencing an unknown or already-closed stroke."""


class DuplicateOpError(AnnotationProtocolError):
    """Annotation op replayed with a stale per-author sequence number."""


class InvalidPixelError(VoluStreamError):
    """Geometric operation on a pixel with no valid depth return."""


class LinkClosedError(VoluStreamError):
    """Send attempted on a closed link or transport."""
