"""Few-shot training loop: plain SGD with a cosine-decay learning rate.

Examples are visited one at a time (batch size 1) with optional gradient
accumulation. History row 0 is the untrained baseline, so a model's
epoch-0 validation accuracy equals the zero-shot accuracy exactly (the
block starts as the identity).

Checkpoint format (little-endian), extension ``.aptc``::

    magic "APTC" | version u32 = 1 | dim u32 | heads u32 | ff_dim u32
    | dropout_rate f32
    | parameters: float64 blob, fixed field order
    | history: (epoch u32, train_loss f64, val_acc f64) repeated to EOF
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import block as blk
from .bank import EmbeddingBank, Episode
from .block import BlockConfig, BlockParams
from .classifier import DEFAULT_TAU, accuracy, loss_and_param_grads
from .errors import (
    DimMismatch,
    DivergenceDetected,
    InvalidSpec,
    IoFailure,
    MalformedCheckpoint,
    NonFiniteInput,
    StepOutOfRange,
    TruncatedFile,
    UnsupportedShots,
)
from .seeds import rng_for

CKPT_MAGIC = b"APTC"
CKPT_VERSION = 1

# rng stream indices within the training seed (keep distinct per purpose)
_INIT_STREAM = 10
_EPOCH_STREAM_BASE = 100


SHOT_GRID = (1, 2, 4, 8, 16)
_EPOCH_BUDGET = {1: 50, 2: 100, 4: 100, 8: 150, 16: 150}


def epochs_for_shots(shots: int) -> int:
    """Default epoch budget on the supported shot grid 1/2/4/8/16."""
    try:
        return _EPOCH_BUDGET[shots]
    except KeyError:
        raise UnsupportedShots(f"shots must be one of {SHOT_GRID}, got {shots}") from None


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """Half-cosine decay from base_lr at step 0 toward 0 at step == total_steps."""
    if total_steps < 1:
        raise InvalidSpec(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise StepOutOfRange(f"step {step} outside [0, {total_steps}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    tau: float = DEFAULT_TAU
    epochs: int | None = None  # None means epochs_for_shots(episode.shots)
    accum_steps: int = 1
    schedule_per_step: bool = False  # default: decay once per epoch
    eval_every: int = 1  # validation cadence in epochs; the last epoch always evaluates
    seed: int = 0

    def __post_init__(self):
        # lr of exactly 0 is a valid no-op run; epochs=0 returns the init
        if self.lr < 0:
            raise InvalidSpec(f"lr must be >= 0, got {self.lr}")
        if self.epochs is not None and self.epochs < 0:
            raise InvalidSpec(f"epochs must be >= 0, got {self.epochs}")
        if self.accum_steps < 1:
            raise InvalidSpec(f"accum_steps must be >= 1, got {self.accum_steps}")
        if self.eval_every < 1:
            raise InvalidSpec(f"eval_every must be >= 1, got {self.eval_every}")


@dataclass(eq=False)
class TrainedModel:
    params: BlockParams
    block_config: BlockConfig
    history: list[tuple[int, float, float]] = field(default_factory=list)
    class_names: list[str] | None = None

    @property
    def final_val_acc(self) -> float:
        return self.history[-1][2] if self.history else float("nan")


def _mean_train_loss(params, block_config, bank, indices, tau):
    total = 0.0
    for i in indices:
        rec = bank.images[i]
        loss, _, _ = loss_and_param_grads(
            params, block_config, bank.text_embeddings, rec.tokens, rec.label, tau
        )
        total += loss
    return total / len(indices)


def _epoch_tokens(rec, view_rng):
    # one stored view per image is the common case; otherwise sample per epoch
    if rec.n_views == 1:
        return rec.tokens
    return rec.views[int(view_rng.integers(rec.n_views))]


def train(
    bank: EmbeddingBank,
    episode: Episode,
    block_config: BlockConfig,
    config: TrainConfig = TrainConfig(),
) -> TrainedModel:
    """Fit the block on the episode's shots; returns the model with history."""
    epochs = config.epochs if config.epochs is not None else epochs_for_shots(episode.shots)
    if not episode.train_indices:
        raise InvalidSpec("episode has no training examples")

    params = blk.init_params(block_config, seed=rng_for(config.seed, _INIT_STREAM).integers(2**32))
    tau = config.tau

    history = [
        (
            0,
            _mean_train_loss(params, block_config, bank, episode.train_indices, tau),
            accuracy(params, block_config, bank, episode.val_indices, tau),
        )
    ]

    steps_per_epoch = math.ceil(len(episode.train_indices) / config.accum_steps)
    total_steps = epochs * steps_per_epoch
    step = 0

    for epoch in range(1, epochs + 1):
        shuffle_rng = rng_for(config.seed, _EPOCH_STREAM_BASE + 3 * epoch)
        dropout_rng = rng_for(config.seed, _EPOCH_STREAM_BASE + 3 * epoch + 1)
        view_rng = rng_for(config.seed, _EPOCH_STREAM_BASE + 3 * epoch + 2)
        order = shuffle_rng.permutation(len(episode.train_indices))

        epoch_loss = 0.0
        accum = np.zeros_like(blk.params_to_vector(params))
        in_accum = 0
        for pos, j in enumerate(order):
            rec = bank.images[episode.train_indices[j]]
            try:
                loss, _, grads = loss_and_param_grads(
                    params,
                    block_config,
                    bank.text_embeddings,
                    _epoch_tokens(rec, view_rng),
                    rec.label,
                    tau,
                    dropout_rng=dropout_rng,
                )
            except NonFiniteInput:
                # finite inputs only turn non-finite when the params blew up
                raise DivergenceDetected(epoch) from None
            if not math.isfinite(loss):
                raise DivergenceDetected(epoch)
            epoch_loss += loss
            accum += blk.params_to_vector(grads)
            in_accum += 1

            if in_accum == config.accum_steps or pos == len(order) - 1:
                lr = (
                    cosine_lr(step, total_steps, config.lr)
                    if config.schedule_per_step
                    else cosine_lr(epoch - 1, epochs, config.lr)
                )
                new_vec = blk.params_to_vector(params) - (lr / in_accum) * accum
                if not np.all(np.isfinite(new_vec)):
                    raise DivergenceDetected(epoch)
                params = blk.vector_to_params(new_vec, block_config)
                accum[:] = 0.0
                in_accum = 0
                step += 1

        if epoch % config.eval_every == 0 or epoch == epochs:
            val_acc = accuracy(params, block_config, bank, episode.val_indices, tau)
        else:
            val_acc = float("nan")  # off-cadence epochs skip the validation pass
        history.append((epoch, epoch_loss / len(order), val_acc))

    return TrainedModel(
        params=params,
        block_config=block_config,
        history=history,
        class_names=list(bank.class_names),
    )


def save_checkpoint(model: TrainedModel, path: str) -> None:
    cfg = model.block_config
    parts = [
        CKPT_MAGIC,
        struct.pack("<IIIIf", CKPT_VERSION, cfg.dim, cfg.heads, cfg.ff_width, cfg.dropout_rate),
        np.ascontiguousarray(blk.params_to_vector(model.params), dtype="<f8").tobytes(),
    ]
    for epoch, loss, val_acc in model.history:
        parts.append(struct.pack("<Idd", epoch, loss, val_acc))
    tmp = path + ".tmp"
    try:
        with open(tmp, "wb") as f:
            f.write(b"".join(parts))
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint to {path}: {exc}") from exc


def load_checkpoint(path: str, kv_policy: str = "all") -> TrainedModel:
    """Read a checkpoint back. kv_policy is runtime behaviour, not stored state,
    so the caller picks it here."""
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc

    if len(data) < 4 or data[:4] != CKPT_MAGIC:
        raise MalformedCheckpoint(f"{path}: bad magic at offset 0")
    if len(data) < 24:
        raise TruncatedFile(f"{path}: header needs 24 bytes, file has {len(data)}")
    version, dim, heads, ff_dim, dropout_rate = struct.unpack("<IIIIf", data[4:24])
    if version != CKPT_VERSION:
        raise MalformedCheckpoint(f"{path}: unsupported version {version}")
    try:
        cfg = BlockConfig(
            dim=dim,
            heads=heads,
            ff_dim=ff_dim,
            dropout_rate=round(dropout_rate, 6),
            kv_policy=kv_policy,
        )
    except (DimMismatch, InvalidSpec) as exc:
        raise MalformedCheckpoint(f"{path}: invalid block shape in header: {exc}") from exc

    n_params = sum(
        int(np.prod(shape)) for shape in blk.param_shapes(cfg).values()
    )
    body = 24 + 8 * n_params
    if len(data) < body:
        raise TruncatedFile(
            f"{path}: parameter blob needs {8 * n_params} bytes at offset 24, "
            f"file has {len(data) - 24}"
        )
    vec = np.frombuffer(data[24:body], dtype="<f8").copy()
    params = blk.vector_to_params(vec, cfg)

    tail = data[body:]
    if len(tail) % 20 != 0:
        raise MalformedCheckpoint(
            f"{path}: history region at offset {body} has {len(tail)} bytes, "
            "not a multiple of 20"
        )
    history = []
    for off in range(0, len(tail), 20):
        epoch, loss, val_acc = struct.unpack("<Idd", tail[off : off + 20])
        history.append((epoch, loss, val_acc))

    return TrainedModel(params=params, block_config=cfg, history=history, class_names=None)
