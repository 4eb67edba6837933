"""Cosine-similarity softmax classifier over refined class rows.

Scores are cosine(class_row, image_feature) / temperature, normalised with
a softmax. The max cosine is subtracted before dividing by the temperature,
which keeps the exponent arguments bounded and makes the probabilities
exactly invariant to a common shift of all cosines.
"""

from __future__ import annotations

import numpy as np

from . import block as blk
from .bank import EmbeddingBank
from .block import BlockConfig, BlockParams
from .errors import (
    LabelOutOfRange,
    NonFiniteInput,
    NonPositiveTemperature,
    ZeroNormVector,
)

DEFAULT_TAU = 0.01


def cosine_rows(rows: np.ndarray, z: np.ndarray) -> np.ndarray:
    """cosine(rows[i], z) for each row; rejects zero vectors and non-finite input."""
    rows = np.asarray(rows, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(rows)) or not np.all(np.isfinite(z)):
        raise NonFiniteInput("non-finite values in cosine input")
    z_norm = np.linalg.norm(z)
    if z_norm == 0.0:
        raise ZeroNormVector("image feature has zero norm")
    row_norms = np.linalg.norm(rows, axis=1)
    bad = np.nonzero(row_norms == 0.0)[0]
    if bad.size:
        raise ZeroNormVector(f"class row {bad[0]} has zero norm")
    return (rows @ z) / (row_norms * z_norm)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """cosine(a, b) for two vectors."""
    return float(cosine_rows(np.asarray(a, dtype=np.float64)[None, :], b)[0])


def probs_from_cosines(cosines: np.ndarray, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Softmax over precomputed cosine scores at temperature tau.

    The max cosine is subtracted before the division by tau, so a common
    shift of all cosines leaves the result bit-for-bit unchanged.
    """
    if tau <= 0.0:
        raise NonPositiveTemperature(f"temperature must be > 0, got {tau}")
    cos = np.asarray(cosines, dtype=np.float64)
    if not np.all(np.isfinite(cos)):
        raise NonFiniteInput("non-finite cosine scores")
    e = np.exp((cos - cos.max()) / tau)
    return e / e.sum()


def class_probabilities(rows: np.ndarray, z: np.ndarray, tau: float = DEFAULT_TAU) -> np.ndarray:
    return probs_from_cosines(cosine_rows(rows, z), tau)


def zero_shot_predict(
    text_rows: np.ndarray, z: np.ndarray, tau: float = DEFAULT_TAU
) -> tuple[int, np.ndarray]:
    """Argmax label and probabilities from the unrefined text rows."""
    probs = class_probabilities(text_rows, z, tau)
    return int(np.argmax(probs)), probs


def loss_and_grad(probs: np.ndarray, label: int, tau: float = DEFAULT_TAU) -> tuple[float, np.ndarray]:
    """Cross-entropy and its gradient with respect to the cosine scores.

    d loss / d cos_i = (p_i - [i == label]) / tau.
    """
    if tau <= 0.0:
        raise NonPositiveTemperature(f"temperature must be > 0, got {tau}")
    probs = np.asarray(probs, dtype=np.float64)
    loss = cross_entropy(probs, label)
    d_cos = probs.copy()
    d_cos[label] -= 1.0
    return loss, d_cos / tau


def cross_entropy(probs: np.ndarray, label: int) -> float:
    if not 0 <= label < probs.shape[0]:
        raise LabelOutOfRange(f"label {label} out of range [0, {probs.shape[0]})")
    return float(-np.log(probs[label]))


def _cosine_and_row_grad(rows, z, tau, label):
    """Loss, probs, and dLoss/d(rows) for one example."""
    rows = np.asarray(rows, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    probs = class_probabilities(rows, z, tau)
    loss = cross_entropy(probs, label)

    d_cos = probs.copy()
    d_cos[label] -= 1.0
    d_cos /= tau

    row_norms = np.linalg.norm(rows, axis=1, keepdims=True)
    z_hat = z / np.linalg.norm(z)
    rows_hat = rows / row_norms
    cos = (rows_hat @ z_hat)[:, None]
    d_rows = d_cos[:, None] * (z_hat[None, :] - cos * rows_hat) / row_norms
    return loss, probs, d_rows


def refined_probs(
    params: BlockParams,
    config: BlockConfig,
    text_rows: np.ndarray,
    tokens: np.ndarray,
    tau: float = DEFAULT_TAU,
    dropout_rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Class probabilities for one image after refining the text rows on it."""
    refined, _ = blk.forward(params, text_rows, tokens, config, dropout_rng=dropout_rng)
    return class_probabilities(refined, np.asarray(tokens, dtype=np.float64)[0], tau)


def loss_and_param_grads(
    params: BlockParams,
    config: BlockConfig,
    text_rows: np.ndarray,
    tokens: np.ndarray,
    label: int,
    tau: float = DEFAULT_TAU,
    dropout_rng: np.random.Generator | None = None,
):
    """One example's cross-entropy, probabilities, and block parameter grads."""
    refined, cache = blk.forward(params, text_rows, tokens, config, dropout_rng=dropout_rng)
    z = np.asarray(tokens, dtype=np.float64)[0]
    loss, probs, d_rows = _cosine_and_row_grad(refined, z, tau, label)
    grads = blk.backward(params, cache, d_rows, config)
    return loss, probs, grads


def predict_indices(
    params: BlockParams,
    config: BlockConfig,
    bank: EmbeddingBank,
    indices,
    tau: float = DEFAULT_TAU,
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic argmax predictions (and true labels) for bank records."""
    preds = np.empty(len(indices), dtype=np.int64)
    truth = np.empty(len(indices), dtype=np.int64)
    for j, i in enumerate(indices):
        rec = bank.images[i]
        probs = refined_probs(params, config, bank.text_embeddings, rec.tokens, tau)
        preds[j] = int(np.argmax(probs))
        truth[j] = rec.label
    return preds, truth


def accuracy(
    params: BlockParams,
    config: BlockConfig,
    bank: EmbeddingBank,
    indices,
    tau: float = DEFAULT_TAU,
) -> float:
    if len(indices) == 0:
        return float("nan")
    preds, truth = predict_indices(params, config, bank, indices, tau)
    return float(np.mean(preds == truth))


def zero_shot_probs(text_rows: np.ndarray, z: np.ndarray, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Probabilities straight from the unrefined text rows."""
    return class_probabilities(text_rows, z, tau)


def zero_shot_accuracy(bank: EmbeddingBank, indices, tau: float = DEFAULT_TAU) -> float:
    if len(indices) == 0:
        return float("nan")
    correct = 0
    for i in indices:
        rec = bank.images[i]
        probs = zero_shot_probs(bank.text_embeddings, rec.feature, tau)
        correct += int(np.argmax(probs)) == rec.label
    return correct / len(indices)
