"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or unknown configuration value."""


class RegimeError(ValueError):
    """Attention regime incompatible with the requested operation."""


class FormatError(ValueError):
    """Malformed, truncated, or wrong-version file."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, segment: str):
        super().__init__(f"non-finite gradient in parameter segment {segment!r}")
        self.segment = segment
