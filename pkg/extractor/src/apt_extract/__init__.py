"""Export frozen image/text encoder embeddings into APTB bank files."""

from .config import ExtractorConfig
from .errors import (
    EmptyDataset,
    ExtractError,
    InvalidConfig,
    ModelLoadFailure,
    UnreadableImage,
)
from .extract import extract

__all__ = [
    "EmptyDataset",
    "ExtractError",
    "ExtractorConfig",
    "InvalidConfig",
    "ModelLoadFailure",
    "UnreadableImage",
    "extract",
]
