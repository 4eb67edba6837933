"""Frozen vision/text encoders that turn crops and prompts into embeddings.

An encoder exposes `dim`, `tokens_per_image`, `encode_images` (batch of
uint8 HWC crops -> (B, tokens, dim) float32, row 0 the global feature) and
`encode_texts` (prompts -> (k, dim) float32). The default is CLIP with a
ViT-B/16 image tower; `debug-color-stub` is a deterministic pixel-statistics
encoder with the same geometry for exercising the pipeline without weights.
"""

from __future__ import annotations

import hashlib
from typing import Protocol

import numpy as np

from .errors import ModelLoadFailure
from .preprocess import CROP_SIZE

STUB_MODEL = "debug-color-stub"

# aliases for the common checkpoint names
_HF_IDS = {
    "ViT-B/16": "openai/clip-vit-base-patch16",
    "ViT-B/32": "openai/clip-vit-base-patch32",
}


class Encoder(Protocol):
    dim: int
    tokens_per_image: int

    def encode_images(self, batch: np.ndarray) -> np.ndarray: ...

    def encode_texts(self, prompts: list[str]) -> np.ndarray: ...


def load_encoder(model: str) -> Encoder:
    if model == STUB_MODEL:
        return ColorStubEncoder()
    return ClipEncoder(model)


class ColorStubEncoder:
    """Geometry-faithful stand-in encoder built from mean colors.

    Each 16x16 cell of the crop embeds its mean RGB (plus a bias term)
    through one fixed random projection; row 0 embeds the whole crop the
    same way. Prompts that mention a known color word embed that pure color,
    so color-named classes genuinely align with images of that color. Fully
    deterministic, no model download.
    """

    dim = 512
    grid = CROP_SIZE // 16  # 14x14 cells mirrors a patch-16 tower at 224px
    tokens_per_image = grid * grid + 1

    _COLOR_WORDS = (
        ("red", (1.0, 0.0, 0.0)),
        ("green", (0.0, 1.0, 0.0)),
        ("blue", (0.0, 0.0, 1.0)),
        ("yellow", (1.0, 1.0, 0.0)),
        ("cyan", (0.0, 1.0, 1.0)),
        ("magenta", (1.0, 0.0, 1.0)),
        ("orange", (1.0, 0.5, 0.0)),
        ("white", (1.0, 1.0, 1.0)),
    )

    def __init__(self):
        self._proj = np.random.default_rng(7).normal(size=(4, self.dim))

    def _embed(self, rgb: np.ndarray) -> np.ndarray:
        # rgb: (..., 3) in [0, 1]; the appended 1 keeps black off the origin
        stats = np.concatenate([rgb, np.ones(rgb.shape[:-1] + (1,))], axis=-1)
        return (stats @ self._proj).astype(np.float32)

    def encode_images(self, batch: np.ndarray) -> np.ndarray:
        pix = batch.astype(np.float64) / 255.0  # (B, H, W, 3)
        b, g = pix.shape[0], self.grid
        cell = pix.reshape(b, g, 16, g, 16, 3).mean(axis=(2, 4))  # (B, g, g, 3)
        tokens = np.empty((b, self.tokens_per_image, self.dim), dtype=np.float32)
        tokens[:, 0] = self._embed(pix.mean(axis=(1, 2)))
        tokens[:, 1:] = self._embed(cell.reshape(b, g * g, 3))
        return tokens

    def encode_texts(self, prompts: list[str]) -> np.ndarray:
        rows = np.empty((len(prompts), self.dim), dtype=np.float32)
        for i, prompt in enumerate(prompts):
            low = prompt.lower()
            for word, rgb in self._COLOR_WORDS:
                if word in low:
                    rows[i] = self._embed(np.asarray(rgb))
                    break
            else:
                digest = hashlib.sha256(prompt.encode("utf-8")).digest()
                seed = int.from_bytes(digest[:8], "little")
                rows[i] = np.random.default_rng(seed).normal(size=self.dim)
        return rows


class ClipEncoder:
    """CLIP image/text towers, weights frozen, all tokens projected to the joint space.

    Patch tokens are taken after the image tower's final block, passed
    through the final layer norm and the visual projection, so every row of
    the token matrix lives in the same space as the text embeddings. Row 0
    is the class token, i.e. the standard CLIP image feature.
    """

    def __init__(self, model: str):
        name = _HF_IDS.get(model, model)
        try:
            import torch
            from transformers import CLIPModel, CLIPTokenizer

            self._torch = torch
            self._model = CLIPModel.from_pretrained(name)
            self._model.eval()
            self._tokenizer = CLIPTokenizer.from_pretrained(name)
        except Exception as exc:
            raise ModelLoadFailure(f"cannot load encoder {model!r} ({name}): {exc}") from exc

        vc = self._model.config.vision_config
        self.dim = int(self._model.config.projection_dim)
        self.tokens_per_image = (vc.image_size // vc.patch_size) ** 2 + 1
        mean = (0.48145466, 0.4578275, 0.40821073)
        std = (0.26862954, 0.26130258, 0.27577711)
        self._mean = np.asarray(mean, dtype=np.float32)
        self._std = np.asarray(std, dtype=np.float32)

    def encode_images(self, batch: np.ndarray) -> np.ndarray:
        torch = self._torch
        pix = (batch.astype(np.float32) / 255.0 - self._mean) / self._std
        tensor = torch.from_numpy(pix.transpose(0, 3, 1, 2))
        with torch.no_grad():
            out = self._model.vision_model(pixel_values=tensor)
            hidden = self._model.vision_model.post_layernorm(out.last_hidden_state)
            tokens = self._model.visual_projection(hidden)
        return tokens.numpy().astype(np.float32)

    def encode_texts(self, prompts: list[str]) -> np.ndarray:
        torch = self._torch
        enc = self._tokenizer(prompts, padding=True, return_tensors="pt")
        with torch.no_grad():
            text = self._model.get_text_features(**enc)
        return text.numpy().astype(np.float32)
