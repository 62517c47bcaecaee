"""Episode and token data model shared by every other module.

An image is represented by its L patch tokens laid out on a spatial grid;
an episode is one N-way K-shot task built from such token grids.  All types
are immutable after construction and safe for concurrent shared reads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TokenGrid",
    "Episode",
    "ClassifierConfig",
    "default_tau",
    "flatten_support",
    "flatten_queries",
    "ordered_support",
    "support_row_index",
    "decode_support_row",
]


def default_tau(dim: int) -> float:
    """Default similarity temperature for token dimension ``dim``."""
    return 1.0 / math.sqrt(dim)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = a.copy()
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class TokenGrid:
    """The L patch tokens of one image on a ``grid_h x grid_w`` grid.

    Row ``l`` of ``tokens`` is the embedding of patch ``l``; patches are in
    row-major grid order, so patch ``l`` sits at cell
    ``(l // grid_w, l % grid_w)``.  Tokens are stored float32 (the on-disk
    precision); all arithmetic elsewhere promotes to float64.
    """

    tokens: np.ndarray
    grid_h: int
    grid_w: int
    image_id: str = ""

    def __post_init__(self):
        tokens = np.asarray(self.tokens, dtype=np.float32)
        if tokens.ndim != 2 or tokens.shape[0] < 1 or tokens.shape[1] < 1:
            raise ValueError(f"tokens must be a non-empty LxD matrix, got shape {tokens.shape}")
        if not np.all(np.isfinite(tokens)):
            raise ValueError("token embeddings must be finite")
        if self.grid_h < 1 or self.grid_w < 1:
            raise ValueError(f"grid shape must be positive, got {self.grid_h}x{self.grid_w}")
        if self.grid_h * self.grid_w != tokens.shape[0]:
            raise ValueError(
                f"grid {self.grid_h}x{self.grid_w} does not cover {tokens.shape[0]} tokens"
            )
        object.__setattr__(self, "tokens", _frozen(tokens))

    @property
    def num_tokens(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]


@dataclass(frozen=True, eq=False)
class Episode:
    """One N-way K-shot task: labelled support grids plus held-out queries.

    ``support`` holds exactly ``k_shot`` grids for each class index
    ``0..n_way-1``; ``queries`` holds any number of (grid, true class) pairs.
    Every grid in the episode must share the same token count, dimension and
    grid shape.
    """

    n_way: int
    k_shot: int
    support: tuple
    queries: tuple

    def __post_init__(self):
        if self.n_way < 2:
            raise ValueError(f"n_way must be >= 2, got {self.n_way}")
        if self.k_shot < 1:
            raise ValueError(f"k_shot must be >= 1, got {self.k_shot}")
        support = tuple((grid, int(label)) for grid, label in self.support)
        queries = tuple((grid, int(label)) for grid, label in self.queries)
        if len(support) != self.n_way * self.k_shot:
            raise ValueError(
                f"expected {self.n_way * self.k_shot} support grids, got {len(support)}"
            )
        counts = [0] * self.n_way
        for _, label in support:
            if not 0 <= label < self.n_way:
                raise ValueError(f"support class index {label} outside [0, {self.n_way})")
            counts[label] += 1
        for c, count in enumerate(counts):
            if count != self.k_shot:
                raise ValueError(f"class {c} has {count} support grids, expected {self.k_shot}")
        for _, label in queries:
            if not 0 <= label < self.n_way:
                raise ValueError(f"query class index {label} outside [0, {self.n_way})")
        ref = support[0][0]
        shape = (ref.num_tokens, ref.dim, ref.grid_h, ref.grid_w)
        for grid, _ in support + queries:
            got = (grid.num_tokens, grid.dim, grid.grid_h, grid.grid_w)
            if got != shape:
                raise ValueError(
                    f"all grids in an episode must share (L, D, grid) = {shape}, got {got}"
                )
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "queries", queries)

    @property
    def num_tokens(self) -> int:
        return self.support[0][0].num_tokens

    @property
    def dim(self) -> int:
        return self.support[0][0].dim

    @property
    def grid_h(self) -> int:
        return self.support[0][0].grid_h

    @property
    def grid_w(self) -> int:
        return self.support[0][0].grid_w

    @property
    def num_queries(self) -> int:
        return len(self.queries)

    @property
    def num_support_tokens(self) -> int:
        return self.n_way * self.k_shot * self.num_tokens


@dataclass(frozen=True)
class ClassifierConfig:
    """Hyperparameters of the similarity classifier and its inner loop.

    ``tau`` scales the similarity logits inside the per-class LogSumExp;
    ``lr`` and ``steps`` drive the plain-SGD importance-weight optimization;
    ``mask_window`` is the odd side length of the spatial self-masking window
    used in 1-shot mode.
    """

    tau: float
    lr: float = 0.1
    steps: int = 15
    mask_window: int = 5
    similarity: str = "cosine"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.steps < 0 or int(self.steps) != self.steps:
            raise ValueError(f"steps must be a non-negative integer, got {self.steps}")
        if self.mask_window < 1 or self.mask_window % 2 == 0:
            raise ValueError(f"mask_window must be odd and >= 1, got {self.mask_window}")
        if self.similarity != "cosine":
            raise ValueError(f"unsupported similarity metric {self.similarity!r}")

    @classmethod
    def for_dim(cls, dim: int, **overrides) -> "ClassifierConfig":
        """Config with the default temperature ``1/sqrt(dim)``."""
        return cls(tau=default_tau(dim), **overrides)


def ordered_support(episode: Episode) -> tuple:
    """Support pairs in canonical class-major order (stable within a class)."""
    return tuple(sorted(episode.support, key=lambda pair: pair[1]))


def flatten_support(episode: Episode):
    """Stack support tokens into one matrix with canonical row order.

    Row ``j`` holds patch ``j % L`` of flattened image ``j // L``; images are
    ordered class-major, then by shot.  Returns the (N*K*L, D) float64 token
    matrix plus per-row class and image indices.
    """
    pairs = ordered_support(episode)
    L = episode.num_tokens
    tokens = np.concatenate([grid.tokens for grid, _ in pairs]).astype(np.float64)
    token_class = np.repeat(np.array([label for _, label in pairs], dtype=np.int64), L)
    token_image = np.repeat(np.arange(len(pairs), dtype=np.int64), L)
    return tokens, token_class, token_image


def flatten_queries(episode: Episode):
    """Stack query tokens (column ``q*L + l`` = patch ``l`` of query ``q``)."""
    if episode.num_queries == 0:
        return np.zeros((0, episode.dim)), np.zeros(0, dtype=np.int64)
    tokens = np.concatenate([grid.tokens for grid, _ in episode.queries]).astype(np.float64)
    labels = np.array([label for _, label in episode.queries], dtype=np.int64)
    return tokens, labels


def support_row_index(n: int, k: int, l: int, k_shot: int, num_tokens: int) -> int:
    """Flattened row index of patch ``l`` of shot ``k`` of class ``n``."""
    return (n * k_shot + k) * num_tokens + l


def decode_support_row(j: int, k_shot: int, num_tokens: int):
    """Inverse of :func:`support_row_index`: row index back to (n, k, l)."""
    return j // (k_shot * num_tokens), (j // num_tokens) % k_shot, j % num_tokens
