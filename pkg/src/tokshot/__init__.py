"""Few-shot classification over patch-token embeddings.

Queries are classified by their token-level cosine similarity to the support
set, pooled per class with a temperature-scaled LogSumExp, after an optional
inference-time inner loop that learns one additive importance weight per
support token from the support set alone.
"""

from .episode import (ClassifierConfig, Episode, TokenGrid, default_tau,
                      flatten_queries, flatten_support)
from .classifier import (ClassPrediction, SimilarityTensor, apply_reweighting,
                         build_similarity, class_logits, cosine, cosine_matrix,
                         episode_similarity, predict, zero_importance)
from .reweighting import (InnerLoopTrace, Mask, build_mask, optimize_importance,
                          support_loss, support_loss_gradient, support_self_logits)
from .evaluate import (EvalConfig, EvalReport, TokenDataset, evaluate,
                       evaluate_sweep, sample_episode)
from .encoder import PatchProjector, RawImage, encode, extract_patches, read_pnm
from .formats import load_dataset, read_tokens, write_manifest, write_tokens
from .heatmap import HeatmapImage, render_importance, write_pgm
from .errors import DataError, NonFiniteLossError, NumericalError, TokshotError

__version__ = "0.1.0"

__all__ = [
    "ClassifierConfig", "Episode", "TokenGrid", "default_tau",
    "flatten_queries", "flatten_support",
    "ClassPrediction", "SimilarityTensor", "apply_reweighting",
    "build_similarity", "class_logits", "cosine", "cosine_matrix",
    "episode_similarity", "predict", "zero_importance",
    "InnerLoopTrace", "Mask", "build_mask", "optimize_importance",
    "support_loss", "support_loss_gradient", "support_self_logits",
    "EvalConfig", "EvalReport", "TokenDataset", "evaluate", "evaluate_sweep",
    "sample_episode",
    "PatchProjector", "RawImage", "encode", "extract_patches", "read_pnm",
    "load_dataset", "read_tokens", "write_manifest", "write_tokens",
    "HeatmapImage", "render_importance", "write_pgm",
    "DataError", "NonFiniteLossError", "NumericalError", "TokshotError",
    "__version__",
]
