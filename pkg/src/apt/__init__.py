"""Adaptive per-image refinement of class text embeddings, on frozen encoders.

The package works entirely on embedding banks (precomputed text and image
token embeddings); no encoder weights are ever loaded here. A single
residual cross-attention block is trained few-shot to refine the class
rows per image, classified with a cosine softmax, and evaluated with a
Monte-Carlo-dropout uncertainty suite.
"""

from .bank import (
    EmbeddingBank,
    Episode,
    ImageRecord,
    SynthSpec,
    generate_synthetic_bank,
    indices_with_tag,
    load_bank,
    sample_episode,
    save_bank,
    split_base_new,
    validate_bank,
)
from .block import (
    KV_POLICIES,
    BlockConfig,
    BlockParams,
    backward,
    finite_diff_check,
    forward,
    init_params,
)
from .classifier import (
    DEFAULT_TAU,
    accuracy,
    class_probabilities,
    cosine_rows,
    cosine_similarity,
    cross_entropy,
    loss_and_grad,
    probs_from_cosines,
    refined_probs,
    zero_shot_accuracy,
    zero_shot_predict,
)
from .errors import AptError
from .seeds import derive_seed, rng_for
from .trainer import (
    SHOT_GRID,
    TrainConfig,
    TrainedModel,
    cosine_lr,
    epochs_for_shots,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .uq import (
    OODReport,
    PredictiveSummary,
    UqResult,
    confidence,
    ece,
    entropy,
    evaluate_uq,
    mc_predict,
    mc_probs,
    normalize_confidences,
    ood_comparison,
    ood_evaluate,
    reliability_data,
)
from .analysis import (
    harmonic_mean,
    inter_class_variance,
    intra_class_variance,
    variance_report,
)
from .cli import run_report

__version__ = "0.1.0"

__all__ = [
    "AptError",
    "BlockConfig",
    "BlockParams",
    "DEFAULT_TAU",
    "EmbeddingBank",
    "Episode",
    "ImageRecord",
    "KV_POLICIES",
    "OODReport",
    "PredictiveSummary",
    "SHOT_GRID",
    "SynthSpec",
    "TrainConfig",
    "TrainedModel",
    "UqResult",
    "accuracy",
    "backward",
    "class_probabilities",
    "confidence",
    "cosine_lr",
    "cosine_rows",
    "cosine_similarity",
    "cross_entropy",
    "derive_seed",
    "ece",
    "entropy",
    "epochs_for_shots",
    "evaluate_uq",
    "finite_diff_check",
    "forward",
    "generate_synthetic_bank",
    "harmonic_mean",
    "indices_with_tag",
    "init_params",
    "inter_class_variance",
    "intra_class_variance",
    "load_bank",
    "load_checkpoint",
    "loss_and_grad",
    "mc_predict",
    "mc_probs",
    "normalize_confidences",
    "ood_comparison",
    "ood_evaluate",
    "probs_from_cosines",
    "refined_probs",
    "reliability_data",
    "rng_for",
    "run_report",
    "sample_episode",
    "save_bank",
    "save_checkpoint",
    "split_base_new",
    "train",
    "validate_bank",
    "variance_report",
    "zero_shot_accuracy",
    "zero_shot_predict",
]
