"""The export pipeline: scan a class-per-folder dataset, encode, write a bank."""

from __future__ import annotations

import json
import logging
import os

import numpy as np

from .bankio import write_bank
from .config import ExtractorConfig
from .encoders import Encoder, load_encoder
from .errors import EmptyDataset, UnreadableImage
from .preprocess import augmented_view, center_crop, load_rgb

log = logging.getLogger(__name__)

SPLIT_ORDER = ("train_pool", "val", "test")


def scan_dataset(root: str) -> list[tuple[str, list[str]]]:
    """Sorted (class_name, [image paths]) pairs, one per subfolder."""
    if not os.path.isdir(root):
        raise EmptyDataset(f"{root} is not a directory")
    classes = []
    for entry in sorted(os.listdir(root)):
        folder = os.path.join(root, entry)
        if not os.path.isdir(folder):
            continue
        files = [
            os.path.join(folder, name)
            for name in sorted(os.listdir(folder))
            if os.path.isfile(os.path.join(folder, name))
        ]
        classes.append((entry, files))
    if not classes:
        raise EmptyDataset(f"{root} contains no class folders")
    return classes


def split_tags(n: int, ratios, rng: np.random.Generator) -> list[str]:
    """Seeded per-class assignment: floor the first two ratios, rest is test."""
    n_train = int(n * ratios[0])
    n_val = int(n * ratios[1])
    tags = (
        ["train_pool"] * n_train
        + ["val"] * n_val
        + ["test"] * (n - n_train - n_val)
    )
    order = rng.permutation(n)
    return [tags[order[i]] for i in range(n)]


def extract(config: ExtractorConfig, encoder: Encoder | None = None) -> str:
    """Encode every readable image and write the bank; returns the bank path.

    Unreadable files are skipped with a warning and listed in the manifest.
    The split assignment depends only on the sorted file listing and
    `split_seed`, so re-running an identical config reproduces it.
    """
    classes = scan_dataset(config.data_dir)
    if encoder is None:
        encoder = load_encoder(config.model)

    class_names = [name for name, _ in classes]
    prompts = [config.prompt_for(name) for name in class_names]
    text = np.asarray(encoder.encode_texts(prompts), dtype=np.float32)

    split_rng = np.random.default_rng(config.split_seed)
    records: list[tuple[np.ndarray, int, str]] = []
    skipped: list[dict[str, str]] = []
    for label, (name, files) in enumerate(classes):
        crops, paths = [], []
        for path in files:
            try:
                img = load_rgb(path)
            except UnreadableImage as exc:
                log.warning("skipping %s", exc)
                skipped.append({"path": os.path.relpath(path, config.data_dir),
                                "reason": str(exc)})
                continue
            stack = [center_crop(img)]
            # extra views are augmented re-crops of the same image, seeded
            # by position so a re-run reproduces them
            view_rng = np.random.default_rng([config.split_seed, label, len(paths)])
            stack.extend(augmented_view(img, view_rng) for _ in range(config.views - 1))
            crops.append(np.stack(stack))
            paths.append(path)
        if not crops:
            continue
        tags = split_tags(len(crops), config.split_ratios, split_rng)
        for stack, tag in zip(crops, tags):
            views = np.asarray(encoder.encode_images(stack), dtype=np.float32)
            records.append((views, label, tag))

    if not records:
        raise EmptyDataset(f"{config.data_dir} has no readable images")

    manifest = {
        "source": os.path.abspath(config.data_dir),
        "model": config.model,
        "template": config.template,
        "domain": config.resolved_domain,
        "split_ratios": "/".join(repr(r) for r in config.split_ratios),
        "split_seed": str(config.split_seed),
        "views": str(config.views),
        "skipped": json.dumps(skipped, sort_keys=True),
    }
    write_bank(
        config.out_path,
        class_names,
        text,
        records,
        tokens_per_image=encoder.tokens_per_image,
        manifest=manifest,
    )
    return config.out_path
