"""Writer for the APTB embedding-bank interchange format.

Layout (little-endian), extension ``.aptb``::

    magic "APTB" | version u32 = 1 | dim u32 | num_classes u32
    | tokens_per_image u32 | num_images u64
    | per class:  name_len u16, UTF-8 name bytes
    | text_embeddings: num_classes * dim float32
    | per image:  label u32, split_tag u8 (0=train_pool, 1=val, 2=test),
                  views u8 (>= 1), views * tokens_per_image * dim float32

Free-form string metadata goes to a ``<path>.manifest.json`` sidecar. This
module implements the format from its public contract; consumers validate
on load.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import ExtractError

MAGIC = b"APTB"
VERSION = 1

SPLIT_CODES = {"train_pool": 0, "val": 1, "test": 2}


def write_bank(
    path: str,
    class_names: list[str],
    text_embeddings: np.ndarray,
    records: list[tuple[np.ndarray, int, str]],  # (views (v, T, d) float32, label, tag)
    tokens_per_image: int,
    manifest: dict[str, str] | None = None,
) -> None:
    k = len(class_names)
    if k == 0:
        raise ExtractError("bank needs at least one class")
    dim = int(text_embeddings.shape[1])
    if text_embeddings.shape != (k, dim):
        raise ExtractError(f"text embedding shape {text_embeddings.shape} != ({k}, {dim})")
    if not np.all(np.isfinite(text_embeddings)):
        raise ExtractError("non-finite text embeddings")

    parts = [MAGIC, struct.pack("<IIIIQ", VERSION, dim, k, tokens_per_image, len(records))]
    for name in class_names:
        raw = name.encode("utf-8")
        if not raw or len(raw) > 0xFFFF:
            raise ExtractError(f"class name length {len(raw)} out of range")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    parts.append(np.ascontiguousarray(text_embeddings, dtype="<f4").tobytes())

    for views, label, tag in records:
        if views.ndim != 3 or views.shape[1:] != (tokens_per_image, dim) or views.shape[0] < 1:
            raise ExtractError(
                f"record token shape {views.shape} != (views, {tokens_per_image}, {dim})"
            )
        if not 0 <= label < k:
            raise ExtractError(f"label {label} out of range [0, {k})")
        if not np.all(np.isfinite(views)):
            raise ExtractError("non-finite token values")
        parts.append(struct.pack("<IBB", label, SPLIT_CODES[tag], views.shape[0]))
        parts.append(np.ascontiguousarray(views, dtype="<f4").tobytes())

    tmp = path + ".tmp"
    try:
        with open(tmp, "wb") as f:
            f.write(b"".join(parts))
        os.replace(tmp, path)
        if manifest:
            side_tmp = path + ".manifest.json.tmp"
            with open(side_tmp, "w", encoding="utf-8") as f:
                json.dump({str(a): str(b) for a, b in manifest.items()}, f,
                          indent=2, sort_keys=True)
                f.write("\n")
            os.replace(side_tmp, path + ".manifest.json")
    except OSError as exc:
        raise ExtractError(f"cannot write bank to {path}: {exc}") from exc
