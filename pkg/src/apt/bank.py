"""Embedding banks: frozen-encoder outputs stored as data.

A bank holds one text embedding row per class plus, per image, a token
matrix whose row 0 is the encoder's global image feature and whose
remaining rows are patch tokens. Banks are immutable after load and are
the only thing the rest of the package ever sees in place of an encoder.

File format (little-endian), extension ``.aptb``::

    magic "APTB" | version u32 = 1 | dim u32 | num_classes u32
    | tokens_per_image u32 | num_images u64
    | per class:  name_len u16, UTF-8 name bytes
    | text_embeddings: num_classes * dim float32
    | per image:  label u32, split_tag u8 (0=train_pool, 1=val, 2=test),
                  views u8 (>= 1), views * tokens_per_image * dim float32

Free-form metadata lives in an optional JSON sidecar ``<path>.manifest.json``.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InsufficientSamples,
    InvalidSpec,
    InvariantViolation,
    IoFailure,
    MalformedHeader,
    TooFewClasses,
    TruncatedFile,
)
from .seeds import rng_for

MAGIC = b"APTB"
VERSION = 1

SPLIT_TAGS = ("train_pool", "val", "test")

# extraction-time defaults: per-class fractions for train_pool / val / test
DEFAULT_SPLIT_RATIOS = (0.5, 0.2, 0.3)

# synthetic text rows sit near the true class means but not on them: their
# noise scales with the image noise (visually diverse classes also have the
# weakest prompt proxies). Patch rows scatter around the image feature at
# half the image noise. 1.3 calibrated so that at intra 0.8 the zero-shot
# rule is clearly imperfect while few-shot training has room to beat it.
TEXT_NOISE_FRACTION = 1.3
PATCH_NOISE_FRACTION = 0.5


@dataclass(eq=False)
class ImageRecord:
    """One image's exported token matrices.

    `views` has shape (n_views, tokens_per_image, dim), float32. View 0 is
    the canonical deterministic export; extra views, when present, are
    alternative augmented exports of the same image.
    """

    views: np.ndarray
    label: int
    split_tag: str

    @property
    def tokens(self) -> np.ndarray:
        """Canonical (tokens_per_image, dim) matrix; row 0 is the image feature."""
        return self.views[0]

    @property
    def feature(self) -> np.ndarray:
        """Global image feature (row 0 of the canonical view)."""
        return self.views[0, 0]

    @property
    def n_views(self) -> int:
        return self.views.shape[0]


@dataclass(eq=False)
class EmbeddingBank:
    dim: int
    class_names: list[str]
    text_embeddings: np.ndarray  # (k, dim) float32
    images: list[ImageRecord]
    tokens_per_image: int
    metadata: dict[str, str] = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


@dataclass(frozen=True)
class Episode:
    """A seeded few-shot sample over one bank."""

    shots: int
    seed: int
    train_indices: list[int]
    val_indices: list[int]
    test_indices: list[int]
    class_subset: list[int]


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a synthetic bank standing in for real encoder exports.

    `intra_class_sigma` is a per-dimension noise scale on image features;
    `inter_class_sigma` is the per-dimension dispersion of the class-mean
    vectors themselves.
    """

    num_classes: int
    dim: int
    tokens_per_image: int
    samples_per_class: int
    intra_class_sigma: float
    inter_class_sigma: float
    seed: int


def validate_bank(bank: EmbeddingBank) -> None:
    """Raise InvariantViolation unless all structural invariants hold."""
    k = bank.num_classes
    if k == 0:
        raise InvariantViolation("bank has no classes")
    if bank.dim < 1:
        raise InvariantViolation(f"dim must be positive, got {bank.dim}")
    if bank.tokens_per_image < 1:
        raise InvariantViolation(
            f"tokens_per_image must be >= 1, got {bank.tokens_per_image}"
        )
    if len(set(bank.class_names)) != k:
        raise InvariantViolation("class names are not unique")
    for i, name in enumerate(bank.class_names):
        if not name:
            raise InvariantViolation(f"class {i} has an empty name")
    if bank.text_embeddings.shape != (k, bank.dim):
        raise InvariantViolation(
            f"text embeddings shape {bank.text_embeddings.shape} != ({k}, {bank.dim})"
        )
    if not np.all(np.isfinite(bank.text_embeddings)):
        raise InvariantViolation("text embeddings contain non-finite values")
    for i, rec in enumerate(bank.images):
        if rec.views.ndim != 3 or rec.views.shape[1:] != (
            bank.tokens_per_image,
            bank.dim,
        ):
            raise InvariantViolation(
                f"record {i}: token shape {rec.views.shape} does not match "
                f"(views, {bank.tokens_per_image}, {bank.dim})"
            )
        if rec.n_views < 1:
            raise InvariantViolation(f"record {i}: needs at least one view")
        if not 0 <= rec.label < k:
            raise InvariantViolation(f"record {i}: label {rec.label} out of range [0, {k})")
        if rec.split_tag not in SPLIT_TAGS:
            raise InvariantViolation(f"record {i}: unknown split tag {rec.split_tag!r}")
        if not np.all(np.isfinite(rec.views)):
            raise InvariantViolation(f"record {i}: non-finite token values")


def save_bank(bank: EmbeddingBank, path: str) -> None:
    """Write `bank` to `path` (atomically) in the APTB format."""
    validate_bank(bank)
    parts = [
        MAGIC,
        struct.pack(
            "<IIIIQ",
            VERSION,
            bank.dim,
            bank.num_classes,
            bank.tokens_per_image,
            len(bank.images),
        ),
    ]
    for name in bank.class_names:
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise InvariantViolation(f"class name too long ({len(raw)} bytes)")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    parts.append(np.ascontiguousarray(bank.text_embeddings, dtype="<f4").tobytes())
    for rec in bank.images:
        parts.append(struct.pack("<IBB", rec.label, SPLIT_TAGS.index(rec.split_tag), rec.n_views))
        parts.append(np.ascontiguousarray(rec.views, dtype="<f4").tobytes())
    blob = b"".join(parts)

    tmp = path + ".tmp"
    try:
        with open(tmp, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
        if bank.metadata:
            side_tmp = path + ".manifest.json.tmp"
            with open(side_tmp, "w", encoding="utf-8") as f:
                json.dump(bank.metadata, f, indent=2, sort_keys=True)
                f.write("\n")
            os.replace(side_tmp, path + ".manifest.json")
    except OSError as exc:
        raise IoFailure(f"cannot write bank to {path}: {exc}") from exc


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.path = path
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFile(
                f"{self.path}: needed {n} bytes for {what} at offset {self.pos}, "
                f"file has {len(self.data) - self.pos} left"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out


def load_bank(path: str) -> EmbeddingBank:
    """Read a bank file, verifying format and invariants."""
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc

    r = _Reader(data, path)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise MalformedHeader(f"{path}: bad magic {magic!r} at offset 0")
    version, dim, num_classes, tokens_per_image, num_images = struct.unpack(
        "<IIIIQ", r.take(24, "header")
    )
    if version != VERSION:
        raise MalformedHeader(f"{path}: unsupported version {version}")
    if dim < 1 or num_classes < 1 or tokens_per_image < 1:
        raise MalformedHeader(
            f"{path}: non-positive dim/classes/tokens "
            f"({dim}/{num_classes}/{tokens_per_image})"
        )

    class_names = []
    for i in range(num_classes):
        (name_len,) = struct.unpack("<H", r.take(2, f"name length of class {i}"))
        raw = r.take(name_len, f"name of class {i}")
        try:
            class_names.append(raw.decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise InvariantViolation(f"{path}: class {i} name is not UTF-8") from exc

    text_bytes = r.take(4 * num_classes * dim, "text embeddings")
    text = np.frombuffer(text_bytes, dtype="<f4").reshape(num_classes, dim).copy()

    images = []
    for i in range(num_images):
        offset = r.pos
        label, tag_code, n_views = struct.unpack("<IBB", r.take(6, f"record {i} header"))
        if label >= num_classes:
            raise InvariantViolation(
                f"{path}: record {i} at offset {offset}: label {label} "
                f"out of range [0, {num_classes})"
            )
        if tag_code >= len(SPLIT_TAGS):
            raise InvariantViolation(
                f"{path}: record {i} at offset {offset}: bad split tag {tag_code}"
            )
        if n_views < 1:
            raise InvariantViolation(
                f"{path}: record {i} at offset {offset}: views must be >= 1"
            )
        tok_bytes = r.take(4 * n_views * tokens_per_image * dim, f"record {i} tokens")
        views = (
            np.frombuffer(tok_bytes, dtype="<f4")
            .reshape(n_views, tokens_per_image, dim)
            .copy()
        )
        if not np.all(np.isfinite(views)):
            raise InvariantViolation(
                f"{path}: record {i} at offset {offset}: non-finite token values"
            )
        images.append(ImageRecord(views=views, label=int(label), split_tag=SPLIT_TAGS[tag_code]))

    if r.pos != len(data):
        raise InvariantViolation(
            f"{path}: {len(data) - r.pos} trailing bytes after offset {r.pos}"
        )

    metadata: dict[str, str] = {}
    sidecar = path + ".manifest.json"
    if os.path.exists(sidecar):
        try:
            with open(sidecar, "r", encoding="utf-8") as f:
                metadata = {str(k): str(v) for k, v in json.load(f).items()}
        except (OSError, json.JSONDecodeError) as exc:
            raise IoFailure(f"cannot read manifest {sidecar}: {exc}") from exc

    bank = EmbeddingBank(
        dim=int(dim),
        class_names=class_names,
        text_embeddings=text,
        images=images,
        tokens_per_image=int(tokens_per_image),
        metadata=metadata,
    )
    validate_bank(bank)
    return bank


def split_counts(n: int, ratios: tuple[float, float, float] = DEFAULT_SPLIT_RATIOS):
    """Per-class (train_pool, val, test) counts: floor the first two, rest test."""
    n_train = int(n * ratios[0])
    n_val = int(n * ratios[1])
    return n_train, n_val, n - n_train - n_val


def generate_synthetic_bank(spec: SynthSpec) -> EmbeddingBank:
    """Build a deterministic synthetic bank.

    Class means are drawn i.i.d. Gaussian with per-dimension scale
    `inter_class_sigma`; each image's feature is its class mean plus
    per-dimension Gaussian noise of scale `intra_class_sigma`; patch rows
    perturb the feature at half that scale; text rows are the class means
    plus independent noise proportional to the image noise (prompts are
    imperfect proxies, and noisier domains have weaker prompts).
    """
    if (
        spec.num_classes < 1
        or spec.dim < 1
        or spec.tokens_per_image < 1
        or spec.samples_per_class < 1
    ):
        raise InvalidSpec(f"all counts must be positive: {spec}")
    if spec.intra_class_sigma < 0 or spec.inter_class_sigma < 0:
        raise InvalidSpec(f"sigmas must be >= 0: {spec}")

    k, d, t = spec.num_classes, spec.dim, spec.tokens_per_image
    rng = rng_for(spec.seed)
    intra_scale = spec.intra_class_sigma
    means = rng.normal(0.0, spec.inter_class_sigma, size=(k, d))
    text = means + rng.normal(0.0, 1.0, size=(k, d)) * (TEXT_NOISE_FRACTION * intra_scale)

    n_train, n_val, n_test = split_counts(spec.samples_per_class)
    tags = (
        ["train_pool"] * n_train + ["val"] * n_val + ["test"] * n_test
    )

    images = []
    for c in range(k):
        feats = means[c] + rng.normal(0.0, intra_scale, size=(spec.samples_per_class, d))
        order = rng.permutation(spec.samples_per_class)
        for j in range(spec.samples_per_class):
            views = np.empty((1, t, d), dtype=np.float32)
            views[0, 0] = feats[j]
            if t > 1:
                views[0, 1:] = feats[j] + rng.normal(
                    0.0, PATCH_NOISE_FRACTION * intra_scale, size=(t - 1, d)
                )
            images.append(
                ImageRecord(views=views, label=c, split_tag=tags[order[j]])
            )

    bank = EmbeddingBank(
        dim=d,
        class_names=[f"class_{c:03d}" for c in range(k)],
        text_embeddings=text.astype(np.float32),
        images=images,
        tokens_per_image=t,
        metadata={
            "source": "synthetic",
            "intra_class_sigma": repr(spec.intra_class_sigma),
            "inter_class_sigma": repr(spec.inter_class_sigma),
            "seed": str(spec.seed),
        },
    )
    validate_bank(bank)
    return bank


def indices_with_tag(bank: EmbeddingBank, tag: str) -> list[int]:
    return [i for i, rec in enumerate(bank.images) if rec.split_tag == tag]


def sample_episode(bank: EmbeddingBank, shots: int, seed: int) -> Episode:
    """Draw `shots` train-pool records per class, without replacement, seeded."""
    if shots < 1:
        raise InvalidSpec(f"shots must be >= 1, got {shots}")
    rng = rng_for(seed)
    per_class: dict[int, list[int]] = {c: [] for c in range(bank.num_classes)}
    for i, rec in enumerate(bank.images):
        if rec.split_tag == "train_pool":
            per_class[rec.label].append(i)

    train_indices: list[int] = []
    for c in range(bank.num_classes):
        pool = per_class[c]
        if len(pool) < shots:
            raise InsufficientSamples(c, len(pool), shots)
        chosen = rng.choice(len(pool), size=shots, replace=False)
        train_indices.extend(sorted(pool[j] for j in chosen))

    return Episode(
        shots=shots,
        seed=seed,
        train_indices=train_indices,
        val_indices=indices_with_tag(bank, "val"),
        test_indices=indices_with_tag(bank, "test"),
        class_subset=list(range(bank.num_classes)),
    )


def split_base_new(bank: EmbeddingBank) -> tuple[EmbeddingBank, EmbeddingBank]:
    """Partition into base classes [0, ceil(k/2)) and the remaining new classes.

    Images follow their class; labels in the new half are re-indexed to be
    dense starting at 0.
    """
    k = bank.num_classes
    if k < 2:
        raise TooFewClasses(f"need at least 2 classes to split, got {k}")
    cut = math.ceil(k / 2)

    def subset(lo: int, hi: int) -> EmbeddingBank:
        images = [
            ImageRecord(views=rec.views, label=rec.label - lo, split_tag=rec.split_tag)
            for rec in bank.images
            if lo <= rec.label < hi
        ]
        return EmbeddingBank(
            dim=bank.dim,
            class_names=bank.class_names[lo:hi],
            text_embeddings=bank.text_embeddings[lo:hi].copy(),
            images=images,
            tokens_per_image=bank.tokens_per_image,
            metadata=dict(bank.metadata),
        )

    return subset(0, cut), subset(cut, k)
