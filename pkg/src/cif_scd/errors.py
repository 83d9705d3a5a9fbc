"""Exception types shared across the package."""


class ShapeMismatch(ValueError):
    """Array shapes disagree with the operation contract."""


class EmptyInput(ValueError):
    """An operation received an empty frame sequence."""


class NonFiniteWeight(ValueError):
    """A weight, score, or loss value is NaN or infinite."""


class ZeroWeightMass(ValueError):
    """Total information-weight mass is too small to scale."""


class InvalidLabel(ValueError):
    """A class label lies outside the configured class count."""


class ConfigError(ValueError):
    """Inconsistent model or head configuration."""


class EmptySpan(ValueError):
    """An audio span has non-positive duration."""


class EmptySegmentation(ValueError):
    """A segmentation holds no segments where at least one is required."""


class EmptyCurve(ValueError):
    """A sweep curve holds no points."""


class ParseError(ValueError):
    """Malformed annotation line."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class UncoveredToken(ValueError):
    """A token time span overlaps no reference segment."""
