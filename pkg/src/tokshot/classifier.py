"""Reweighted token-similarity classification.

Every support token is compared against every query token with cosine
similarity, one shared additive importance weight per support token shifts
the similarities of its whole row, and the shifted values are pooled per
class with a temperature-scaled LogSumExp over all K*L*L (shot, support
patch, query patch) combinations.  A softmax over the per-class pools gives
the query's class probabilities.

Excluded pairs (used by the self-classification inner loop) carry the
sentinel ``-inf``: exp(-inf) = 0, so they simply drop out of the pooling
without any index bookkeeping in the hot path.  All arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .episode import ClassifierConfig, Episode, flatten_queries, flatten_support

__all__ = [
    "NORM_EPS",
    "SimilarityTensor",
    "ClassPrediction",
    "cosine",
    "cosine_matrix",
    "build_similarity",
    "episode_similarity",
    "apply_reweighting",
    "class_logits",
    "predict",
    "zero_importance",
]

# Tokens with norm below this are treated as the zero vector: their cosine
# similarity is defined as 0 (neutral) instead of raising on division.
NORM_EPS = 1e-12


def cosine(u, v) -> float:
    """Cosine similarity of two vectors; 0.0 if either norm is below NORM_EPS."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu < NORM_EPS or nv < NORM_EPS:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def _unit_rows(x: np.ndarray) -> np.ndarray:
    """Row-normalize; rows with norm below NORM_EPS become zero rows."""
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    ok = norms >= NORM_EPS
    return np.divide(x, norms, out=np.zeros_like(x), where=ok)


def cosine_matrix(a, b) -> np.ndarray:
    """Pairwise cosine similarities, shape (rows of a, rows of b)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return np.clip(_unit_rows(a) @ _unit_rows(b).T, -1.0, 1.0)


@dataclass(frozen=True, eq=False)
class SimilarityTensor:
    """Support-vs-query token similarities with row/column structure.

    Rows follow :func:`flatten_support` order (class-major, so each class
    occupies a contiguous block of ``k_shot * L`` rows); column ``q*L + l``
    is patch ``l`` of query ``q``.  ``-inf`` entries mark excluded pairs.
    """

    values: np.ndarray
    token_class: np.ndarray
    token_image: np.ndarray
    tokens_per_query: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        token_class = np.asarray(self.token_class, dtype=np.int64)
        token_image = np.asarray(self.token_image, dtype=np.int64)
        if values.ndim != 2:
            raise ValueError(f"values must be 2-D, got shape {values.shape}")
        if token_class.shape != (values.shape[0],) or token_image.shape != (values.shape[0],):
            raise ValueError("row metadata length must match the similarity row count")
        if self.tokens_per_query < 1 or values.shape[1] % self.tokens_per_query != 0:
            raise ValueError(
                f"{values.shape[1]} columns not divisible into queries of "
                f"{self.tokens_per_query} tokens"
            )
        for name, arr in (("values", values), ("token_class", token_class),
                          ("token_image", token_image)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_queries(self) -> int:
        return self.values.shape[1] // self.tokens_per_query

    @property
    def n_way(self) -> int:
        return int(self.token_class[-1]) + 1


def build_similarity(support_tokens, query_tokens, *, token_class=None,
                     token_image=None, tokens_per_query=None) -> SimilarityTensor:
    """Build the unmasked similarity tensor for raw token matrices.

    Row metadata defaults to a single class / single image when not given
    (enough for inspecting raw similarities; classification requires the
    episode metadata, see :func:`episode_similarity`).
    """
    values = cosine_matrix(support_tokens, query_tokens)
    n_rows, n_cols = values.shape
    if token_class is None:
        token_class = np.zeros(n_rows, dtype=np.int64)
    if token_image is None:
        token_image = np.zeros(n_rows, dtype=np.int64)
    if tokens_per_query is None:
        tokens_per_query = n_cols if n_cols else 1
    return SimilarityTensor(values, token_class, token_image, tokens_per_query)


def episode_similarity(episode: Episode) -> SimilarityTensor:
    """Similarity tensor between an episode's support and query tokens."""
    support, token_class, token_image = flatten_support(episode)
    queries, _ = flatten_queries(episode)
    return SimilarityTensor(
        cosine_matrix(support, queries), token_class, token_image, episode.num_tokens
    )


def apply_reweighting(s: SimilarityTensor, v) -> SimilarityTensor:
    """Add importance weight ``v[j]`` to every column of row ``j``.

    ``-inf`` sentinel entries stay ``-inf`` (adding a finite weight does not
    resurrect an excluded pair).
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (s.n_rows,):
        raise ValueError(f"importance weights have length {v.shape}, expected ({s.n_rows},)")
    if not np.all(np.isfinite(v)):
        raise ValueError("importance weights must be finite")
    return SimilarityTensor(
        s.values + v[:, None], s.token_class, s.token_image, s.tokens_per_query
    )


def grouped_logsumexp(x4: np.ndarray) -> np.ndarray:
    """Stabilized LogSumExp over axes (1, 3) of a (N, R, Q, L) array.

    ``-inf`` entries contribute zero weight; a (class, query) block that is
    entirely ``-inf`` yields ``-inf``.  Returns a (Q, N) matrix.
    """
    m = x4.max(axis=(1, 3))  # (N, Q)
    finite = np.isfinite(m)
    shift = np.where(finite, m, 0.0)
    e = np.exp(x4 - shift[:, None, :, None])
    tot = e.sum(axis=(1, 3))
    with np.errstate(divide="ignore"):
        out = shift + np.log(tot)
    return np.where(finite, out, -np.inf).T


def class_logits(s: SimilarityTensor, tau: float, query_index: int) -> np.ndarray:
    """Per-class LogSumExp of ``exp(values/tau)`` for one query's columns.

    Aggregates the ``k_shot * L * L`` entries whose row class is ``n`` and
    whose column belongs to ``query_index``; returns a length-N vector.
    A class whose entries are all ``-inf`` gets logit ``-inf``.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    q = int(query_index)
    if not 0 <= q < s.n_queries:
        raise IndexError(f"query index {q} outside [0, {s.n_queries})")
    l = s.tokens_per_query
    n_way = s.n_way
    rows_per_class = s.n_rows // n_way
    x = s.values[:, q * l:(q + 1) * l] / tau
    return grouped_logsumexp(x.reshape(n_way, rows_per_class, 1, l))[0]


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stabilized softmax; ``-inf`` logits get probability 0."""
    logits = np.atleast_2d(logits)
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class ClassPrediction:
    """Class probabilities for one query; ties break to the lowest index."""

    probs: np.ndarray
    logits: np.ndarray
    predicted: int


def predict(episode: Episode, v, cfg: ClassifierConfig):
    """Classify every query of the episode in one pass.

    ``v`` is the per-support-token importance vector (all zeros for the
    unadapted classifier).  The temperature division happens inside the
    LogSumExp exponent; the outer softmax runs at temperature 1.
    """
    s = apply_reweighting(episode_similarity(episode), v)
    if episode.num_queries == 0:
        return []
    l = episode.num_tokens
    x4 = (s.values / cfg.tau).reshape(
        episode.n_way, episode.k_shot * l, episode.num_queries, l
    )
    logits = grouped_logsumexp(x4)  # (Q, N)
    probs = softmax(logits)
    return [
        ClassPrediction(probs=p, logits=lg, predicted=int(np.argmax(p)))
        for p, lg in zip(probs, logits)
    ]


def zero_importance(episode: Episode) -> np.ndarray:
    """The all-zeros importance vector (the optimizer's starting point)."""
    return np.zeros(episode.num_support_tokens)
