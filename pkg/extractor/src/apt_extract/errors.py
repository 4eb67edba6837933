class ExtractError(Exception):
    """Base class for extraction failures."""


class InvalidConfig(ExtractError):
    """Configuration violates an invariant (template, ratios, views)."""


class EmptyDataset(ExtractError):
    """No class folders, or no readable image in any of them."""


class ModelLoadFailure(ExtractError):
    """The requested encoder could not be obtained."""


class UnreadableImage(ExtractError):
    """A file could not be decoded as an image (skipped with a warning)."""
