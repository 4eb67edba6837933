"""Uncertainty quantification via Monte-Carlo dropout.

Each evaluation image gets M stochastic forward passes (dropout active at
inference); the per-pass class probabilities are averaged into a
predictive distribution. Predictive entropy is mapped to a confidence in
[0, 1], calibration is summarised with an expected calibration error over
equal-width confidence bins, and out-of-distribution sets are compared by
their confidence distributions.

Pass m of sample i draws from a generator seeded by (seed, i, m) alone, so
results do not depend on evaluation order or thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .bank import EmbeddingBank, ImageRecord
from .block import BlockConfig, BlockParams
from .classifier import DEFAULT_TAU, refined_probs
from .errors import (
    DegenerateMax,
    EmptyInput,
    EmptySet,
    InvalidSampleCount,
    InvalidSpec,
    InvariantViolation,
)
from .seeds import derive_seed, rng_for
from .trainer import TrainedModel

DEFAULT_MC_SAMPLES = 100
DEFAULT_BINS = 10


def mc_probs(
    params: BlockParams,
    config: BlockConfig,
    text_rows: np.ndarray,
    tokens: np.ndarray,
    tau: float = DEFAULT_TAU,
    samples: int = DEFAULT_MC_SAMPLES,
    seed: int = 0,
) -> np.ndarray:
    """(samples, k) class probabilities from independent dropout passes."""
    if samples < 1:
        raise InvalidSampleCount(f"need at least 1 stochastic pass, got {samples}")
    out = np.empty((samples, text_rows.shape[0]))
    for m in range(samples):
        out[m] = refined_probs(
            params, config, text_rows, tokens, tau, dropout_rng=rng_for(seed, m)
        )
    return out


def entropy(probs: np.ndarray) -> float:
    """Shannon entropy in nats; 0 * ln 0 counts as 0."""
    p = np.asarray(probs, dtype=np.float64)
    nz = p[p > 0.0]
    return float(-(nz * np.log(nz)).sum())


@dataclass(eq=False)
class PredictiveSummary:
    """Averaged Monte-Carlo prediction for one image."""

    mean_probs: np.ndarray
    predicted: int
    entropy: float
    num_samples: int
    confidence: float | None = None  # filled once a normaliser is known
    correct: bool | None = None  # None when the true label is unknown


def mc_predict(
    model: TrainedModel,
    record: ImageRecord,
    text_rows: np.ndarray,
    samples: int = DEFAULT_MC_SAMPLES,
    seed: int = 0,
    tau: float = DEFAULT_TAU,
) -> PredictiveSummary:
    """Average `samples` stochastic passes on one record into a summary."""
    passes = mc_probs(
        model.params, model.block_config, text_rows, record.tokens, tau,
        samples=samples, seed=seed,
    )
    mean = passes.mean(axis=0)
    pred = int(np.argmax(mean))
    return PredictiveSummary(
        mean_probs=mean,
        predicted=pred,
        entropy=entropy(mean),
        num_samples=samples,
        correct=bool(pred == record.label) if record.label >= 0 else None,
    )


def confidence(entropy_value: float, max_entropy: float) -> float:
    """1 - S / S_max for a single prediction; strictly needs S_max > 0."""
    if max_entropy <= 0.0:
        raise DegenerateMax(f"entropy normaliser must be > 0, got {max_entropy}")
    if entropy_value < 0.0:
        raise InvariantViolation("negative entropy")
    return max(0.0, 1.0 - entropy_value / max_entropy)


def normalize_confidences(
    entropies: np.ndarray, max_entropy: float | None = None
) -> tuple[np.ndarray, float, bool]:
    """conf = 1 - S / S_max over a set; S_max defaults to the empirical max.

    When the normaliser is 0 (every prediction one-hot) all confidences are
    reported as 1 and the degenerate flag is set, rather than failing the run.
    Passing ln(k) as `max_entropy` gives the scale-absolute variant.
    """
    s = np.asarray(entropies, dtype=np.float64)
    if s.size == 0:
        raise EmptyInput("no entropies to normalise")
    if np.any(s < 0):
        raise InvariantViolation("negative entropy")
    norm = float(s.max()) if max_entropy is None else float(max_entropy)
    if norm <= 0.0:
        return np.ones_like(s), 0.0, True
    return np.clip(1.0 - s / norm, 0.0, 1.0), norm, False


@dataclass(frozen=True)
class CalibrationBin:
    lo: float
    hi: float
    count: int
    mean_confidence: float
    mean_accuracy: float


def ece(
    confidences: np.ndarray, correct: np.ndarray, bins: int = DEFAULT_BINS
) -> tuple[float, list[CalibrationBin]]:
    """Expected calibration error over equal-width bins of [0, 1].

    Bins are right-closed except the first, so a confidence c lands in bin
    ceil(c / width) - 1 (clipped). Empty bins contribute nothing. Each
    occupied bin is weighted by its share of all samples.
    """
    conf = np.asarray(confidences, dtype=np.float64)
    ok = np.asarray(correct, dtype=np.float64)
    if conf.size == 0:
        raise EmptyInput("no samples for calibration")
    if conf.shape != ok.shape:
        raise InvalidSpec(f"shape mismatch: {conf.shape} vs {ok.shape}")
    if bins < 1:
        raise InvalidSpec(f"bins must be >= 1, got {bins}")
    if np.any(conf < 0.0) or np.any(conf > 1.0):
        raise InvariantViolation("confidence outside [0, 1]")

    idx = np.clip(np.ceil(conf * bins).astype(int) - 1, 0, bins - 1)
    total = 0.0
    table = []
    n = conf.size
    for b in range(bins):
        member = idx == b
        count = int(member.sum())
        if count == 0:
            table.append(CalibrationBin(b / bins, (b + 1) / bins, 0, float("nan"), float("nan")))
            continue
        mean_conf = float(conf[member].mean())
        mean_acc = float(ok[member].mean())
        total += (count / n) * abs(mean_acc - mean_conf)
        table.append(CalibrationBin(b / bins, (b + 1) / bins, count, mean_conf, mean_acc))
    return float(total), table


def reliability_data(bins: list[CalibrationBin]) -> list[tuple]:
    """One (bin_lo, bin_hi, count, mean_conf, mean_acc) row per bin.

    Empty bins keep their row with count 0 and None statistics, so a P-bin
    report always yields exactly P rows.
    """
    rows = []
    for b in bins:
        empty = b.count == 0
        rows.append((
            b.lo,
            b.hi,
            b.count,
            None if empty else b.mean_confidence,
            None if empty else b.mean_accuracy,
        ))
    return rows


@dataclass(eq=False)
class UqResult:
    indices: list[int]
    labels: np.ndarray
    preds: np.ndarray
    mean_probs: np.ndarray
    entropies: np.ndarray
    confidences: np.ndarray
    accuracy: float
    mean_confidence: float
    mean_entropy: float
    ece_value: float
    bins: list[CalibrationBin]
    mc_samples: int
    seed: int
    max_entropy_used: float = float("nan")
    degenerate_max: bool = False


def evaluate_uq(
    params: BlockParams,
    config: BlockConfig,
    bank: EmbeddingBank,
    indices,
    tau: float = DEFAULT_TAU,
    samples: int = DEFAULT_MC_SAMPLES,
    seed: int = 0,
    bins: int = DEFAULT_BINS,
    max_entropy: float | None = None,
    jobs: int = 1,
) -> UqResult:
    """MC-dropout evaluation over bank records: predictions plus calibration."""
    indices = list(indices)
    if not indices:
        raise EmptyInput("no records to evaluate")
    if jobs < 1:
        raise InvalidSpec(f"jobs must be >= 1, got {jobs}")

    def one(item):
        pos, i = item
        rec = bank.images[i]
        passes = mc_probs(
            params,
            config,
            bank.text_embeddings,
            rec.tokens,
            tau,
            samples=samples,
            seed=derive_seed(seed, pos),
        )
        return passes.mean(axis=0)

    if jobs == 1:
        mean_probs = np.stack([one(item) for item in enumerate(indices)])
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            mean_probs = np.stack(list(pool.map(one, enumerate(indices))))

    labels = np.array([bank.images[i].label for i in indices], dtype=np.int64)
    preds = mean_probs.argmax(axis=1)
    entropies = np.array([entropy(p) for p in mean_probs])
    confidences, norm_used, degenerate = normalize_confidences(entropies, max_entropy=max_entropy)
    correct = (preds == labels).astype(np.float64)
    ece_value, table = ece(confidences, correct, bins=bins)

    return UqResult(
        indices=indices,
        labels=labels,
        preds=preds,
        mean_probs=mean_probs,
        entropies=entropies,
        confidences=confidences,
        accuracy=float(correct.mean()),
        mean_confidence=float(confidences.mean()),
        mean_entropy=float(entropies.mean()),
        ece_value=ece_value,
        bins=table,
        mc_samples=samples,
        seed=seed,
        max_entropy_used=norm_used,
        degenerate_max=degenerate,
    )


def auroc(pos_scores: np.ndarray, neg_scores: np.ndarray) -> float:
    """P(pos > neg) + 0.5 P(pos == neg), the rank-based AUROC."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise EmptyInput("both score sets must be non-empty")
    ranks = rankdata(np.concatenate([pos, neg]))
    r_pos = ranks[: pos.size].sum()
    u = r_pos - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def ood_comparison(id_result: UqResult, ood_result: UqResult) -> dict:
    """Confidence separation between in-distribution and OOD evaluations."""
    return {
        "id_mean_confidence": id_result.mean_confidence,
        "ood_mean_confidence": ood_result.mean_confidence,
        "confidence_gap": id_result.mean_confidence - ood_result.mean_confidence,
        "id_mean_entropy": id_result.mean_entropy,
        "ood_mean_entropy": ood_result.mean_entropy,
        "auroc_id_vs_ood": auroc(id_result.confidences, ood_result.confidences),
    }


@dataclass(eq=False)
class OODReport:
    id_result: UqResult
    ood_result: UqResult
    summary: dict
    # OOD records have no usable label; their accuracy fields are conventions
    ood_labels_unusable: bool = True


def ood_evaluate(
    params: BlockParams,
    config: BlockConfig,
    id_bank: EmbeddingBank,
    id_indices,
    ood_bank: EmbeddingBank,
    ood_indices,
    tau: float = DEFAULT_TAU,
    samples: int = DEFAULT_MC_SAMPLES,
    seed: int = 0,
    bins: int = DEFAULT_BINS,
    max_entropy: float | None = None,
    jobs: int = 1,
) -> OODReport:
    """Run the MC-dropout suite on both sets with one seed and compare them.

    Confidence normalisation is per set (each set's own empirical max) unless
    an explicit `max_entropy` is given, and the same seed drives both sets, so
    feeding the same set twice yields identical statistics.
    """
    if not list(id_indices) or not list(ood_indices):
        raise EmptySet("both the ID and OOD sets must be non-empty")
    kwargs = dict(tau=tau, samples=samples, seed=seed, bins=bins,
                  max_entropy=max_entropy, jobs=jobs)
    id_result = evaluate_uq(params, config, id_bank, id_indices, **kwargs)
    ood_result = evaluate_uq(params, config, ood_bank, ood_indices, **kwargs)
    return OODReport(
        id_result=id_result,
        ood_result=ood_result,
        summary=ood_comparison(id_result, ood_result),
    )
