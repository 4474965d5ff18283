"""Exception hierarchy shared by every catpan module."""


class CatpanError(Exception):
    """Base class for all catpan errors."""


class ValidationError(CatpanError, ValueError):
    """Input violates a documented precondition (shape, range, finiteness)."""


class ShapeError(ValidationError):
    """Tensor shapes are inconsistent with each other or with the config."""


class FormatError(CatpanError, ValueError):
    """A file does not follow the expected binary or text layout.

    ``field`` names the offending part of the layout (``"magic"``,
    ``"version"``, ``"dtype"``, ``"payload length"`` ...).
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class DegenerateInputError(ValidationError):
    """A metric has nothing meaningful left to evaluate (e.g. all tiles flat)."""
