"""Small metric helpers shared by the evaluation commands and scripts."""

from __future__ import annotations

import numpy as np

from .errors import (
    BothZero,
    EmptyClass,
    EmptyInput,
    InvalidSpec,
    LengthMismatch,
    TooFewClasses,
)


def accuracy_score(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.size == 0:
        raise EmptyInput("no predictions")
    if preds.shape != labels.shape:
        raise LengthMismatch(f"{preds.shape} predictions vs {labels.shape} labels")
    return float(np.mean(preds == labels))


def harmonic_mean(a: float, b: float) -> float:
    """2ab / (a + b); the scale of the inputs (fraction or percent) carries through."""
    if a < 0 or b < 0:
        raise InvalidSpec(f"harmonic mean needs non-negative inputs, got {a}, {b}")
    if a == 0 and b == 0:
        raise BothZero("harmonic mean of (0, 0) is undefined")
    return 2.0 * a * b / (a + b)


def _validated(features, labels):
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyInput(f"features must be a non-empty (n, d) array, got {x.shape}")
    if y.shape != (x.shape[0],):
        raise LengthMismatch(f"{x.shape[0]} features vs {y.shape} labels")
    return x, y


def _class_means(features: np.ndarray, labels: np.ndarray):
    classes = np.unique(labels)
    means = {}
    for c in classes:
        member = features[labels == c]
        if member.shape[0] == 0:
            raise EmptyClass(f"class {c} has no samples")
        means[int(c)] = member.mean(axis=0)
    return means


def intra_class_variance(features, labels) -> float:
    """Within-class spread, averaged first inside each class and then across
    classes, with the squared distances divided by the feature dimension.
    Every class counts equally regardless of its sample count."""
    x, y = _validated(features, labels)
    d = x.shape[1]
    means = _class_means(x, y)
    per_class = []
    for c, mu in means.items():
        member = x[y == c]
        per_class.append(float(np.mean(np.sum((member - mu) ** 2, axis=1))) / d)
    return float(np.mean(per_class))


def inter_class_variance(features, labels) -> float:
    """Spread of the class means around their unweighted grand mean, with the
    squared distances divided by the feature dimension."""
    x, y = _validated(features, labels)
    d = x.shape[1]
    means = _class_means(x, y)
    if len(means) < 2:
        raise TooFewClasses(f"need at least 2 classes, got {len(means)}")
    stack = np.stack(list(means.values()))
    grand = stack.mean(axis=0)
    return float(np.mean(np.sum((stack - grand) ** 2, axis=1))) / d


def per_class_variance(features, labels) -> dict[int, float]:
    """Dimension-normalised within-class spread, one entry per class."""
    x, y = _validated(features, labels)
    d = x.shape[1]
    means = _class_means(x, y)
    return {
        c: float(np.mean(np.sum((x[y == c] - mu) ** 2, axis=1))) / d
        for c, mu in means.items()
    }


def variance_report(features, labels) -> dict:
    """Both dispersion numbers plus their ratio and per-class breakdown.

    Squared distances are divided by the feature dimension, so values are
    comparable across embedding widths; the report names the convention.
    """
    intra = intra_class_variance(features, labels)
    inter = inter_class_variance(features, labels)
    return {
        "intra_class_variance": intra,
        "inter_class_variance": inter,
        "intra_over_inter": intra / inter if inter > 0 else float("inf"),
        "per_class": per_class_variance(features, labels),
        "normalisation": "mean squared distance divided by feature dim",
    }
