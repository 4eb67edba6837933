"""Pixel-space preparation: canonical center crop plus seeded augmented views."""

from __future__ import annotations

import numpy as np
from PIL import Image

from .errors import UnreadableImage

CROP_SIZE = 224


def load_rgb(path: str) -> Image.Image:
    """Open and fully decode an image, normalized to RGB."""
    try:
        img = Image.open(path)
        img.load()
        return img.convert("RGB")
    except Exception as exc:  # any decode failure means the file is unusable
        raise UnreadableImage(f"{path}: {exc}") from exc


def center_crop(img: Image.Image, size: int = CROP_SIZE) -> np.ndarray:
    """Deterministic view: shorter side scaled to `size`, center square kept."""
    w, h = img.size
    scale = size / min(w, h)
    nw, nh = max(size, round(w * scale)), max(size, round(h * scale))
    img = img.resize((nw, nh), Image.BICUBIC)
    left = (nw - size) // 2
    top = (nh - size) // 2
    return np.asarray(img.crop((left, top, left + size, top + size)), dtype=np.uint8)


def augmented_view(img: Image.Image, rng: np.random.Generator, size: int = CROP_SIZE) -> np.ndarray:
    """Random resized crop (60-100% of the area) with a coin-flip mirror."""
    w, h = img.size
    area = w * h
    target = area * rng.uniform(0.6, 1.0)
    side = int(np.sqrt(target))
    side = max(1, min(side, w, h))
    left = int(rng.integers(0, w - side + 1))
    top = int(rng.integers(0, h - side + 1))
    patch = img.crop((left, top, left + side, top + side)).resize((size, size), Image.BICUBIC)
    if rng.random() < 0.5:
        patch = patch.transpose(Image.FLIP_LEFT_RIGHT)
    return np.asarray(patch, dtype=np.uint8)
