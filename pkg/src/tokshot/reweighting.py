"""Inference-time learning of support-token importance weights.

The support set is classified against itself: each support image doubles as
an unlabelled pseudo-query, pairs that would let tokens vote for themselves
(or for their spatial neighbourhood in the 1-shot case) are excluded, and
the additive importance weights are fit by plain gradient descent on the
summed cross-entropy of the pseudo-query predictions.

The gradient is computed in closed form rather than by differentiating
through the forward pass; the derivation lives in
``docs/gradient_derivation.md``.  In short, with row weights
``w[j, i]`` = share of row ``j`` inside the (class-of-j, pseudo-query-i)
LogSumExp pool and ``p[i, n]`` the pseudo-query's predicted probabilities,

    dLoss/dv[j] = (1/tau) * sum_i (p[i, class(j)] - [class(j) == y_i]) * w[j, i]

which involves nothing beyond the forward quantities (first order only).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .classifier import cosine_matrix, grouped_logsumexp, softmax
from .episode import ClassifierConfig, Episode, flatten_support
from .errors import NonFiniteLossError

__all__ = [
    "Mask",
    "InnerLoopTrace",
    "build_mask",
    "support_self_logits",
    "support_loss",
    "support_loss_gradient",
    "optimize_importance",
    "finite_difference_gradient",
    "max_relative_gradient_error",
]

BLOCK_DIAGONAL = "block_diagonal"
LOCAL_WINDOW = "local_window"


@dataclass(frozen=True, eq=False)
class Mask:
    """Excluded (support row, pseudo-query column) pairs.

    ``masked`` is a boolean (N*K*L, N*K*L) matrix over the support-vs-support
    similarity matrix; True marks a pair that must not contribute.  Both modes
    only ever mask pairs inside the per-image diagonal blocks.
    """

    masked: np.ndarray
    mode: str

    def __post_init__(self):
        masked = np.asarray(self.masked, dtype=bool)
        if masked.ndim != 2 or masked.shape[0] != masked.shape[1]:
            raise ValueError(f"mask must be square, got shape {masked.shape}")
        if self.mode not in (BLOCK_DIAGONAL, LOCAL_WINDOW):
            raise ValueError(f"unknown mask mode {self.mode!r}")
        masked = masked.copy()
        masked.flags.writeable = False
        object.__setattr__(self, "masked", masked)

    @property
    def num_masked(self) -> int:
        return int(self.masked.sum())


def build_mask(n_way: int, k_shot: int, num_tokens: int, grid_h: int, grid_w: int,
               window: int = 5) -> Mask:
    """Anti-self-matching mask for the support-vs-support similarity matrix.

    K > 1: block-diagonal, every same-image pair is excluded (tokens must be
    classified from *other* images).  K = 1: only the ``window x window``
    spatial neighbourhood around the pseudo-query token's grid cell is
    excluded within its own image (there is no other in-class image to rely
    on), clipped at the grid borders.
    """
    if grid_h * grid_w != num_tokens:
        raise ValueError(f"grid {grid_h}x{grid_w} does not cover {num_tokens} tokens")
    if window < 1 or window % 2 == 0:
        raise ValueError(f"mask window must be odd and >= 1, got {window}")
    n = n_way * k_shot * num_tokens
    image = np.arange(n) // num_tokens
    same_image = image[:, None] == image[None, :]
    if k_shot > 1:
        return Mask(same_image, BLOCK_DIAGONAL)
    patch = np.arange(n) % num_tokens
    row = patch // grid_w
    col = patch % grid_w
    half = window // 2
    near = (np.abs(row[:, None] - row[None, :]) <= half) & (
        np.abs(col[:, None] - col[None, :]) <= half
    )
    return Mask(same_image & near, LOCAL_WINDOW)


def _masked_self_similarity(episode: Episode, mask: Mask) -> np.ndarray:
    """Support-vs-support cosine matrix with masked pairs set to -inf."""
    tokens, _, _ = flatten_support(episode)
    n = tokens.shape[0]
    if mask.masked.shape != (n, n):
        raise ValueError(
            f"mask shape {mask.masked.shape} inconsistent with {n} support tokens"
        )
    sim = cosine_matrix(tokens, tokens)
    sim[mask.masked] = -np.inf
    return sim


def _forward(sim_masked: np.ndarray, v: np.ndarray, tau: float, n_way: int,
             k_shot: int, num_tokens: int, with_weights: bool):
    """Pseudo-query class logits and, optionally, per-row pool weights.

    Returns ``logits`` of shape (N*K, N) (row i = pseudo-query image i) and,
    when requested, ``w`` of shape (N*K*L, N*K) with ``w[j, i]`` the softmax
    share of support row ``j`` inside its class's pool for pseudo-query ``i``
    (zero for masked pairs and empty pools).
    """
    nk = n_way * k_shot
    x = (sim_masked + v[:, None]) / tau
    x4 = x.reshape(n_way, k_shot * num_tokens, nk, num_tokens)
    m = x4.max(axis=(1, 3))  # (N, NK)
    finite = np.isfinite(m)
    shift = np.where(finite, m, 0.0)
    e = np.exp(x4 - shift[:, None, :, None])
    tot = e.sum(axis=(1, 3))  # (N, NK)
    with np.errstate(divide="ignore"):
        logits = np.where(finite, shift + np.log(tot), -np.inf).T  # (NK, N)
    if not with_weights:
        return logits, None
    row_tot = e.sum(axis=3)  # (N, K*L, NK)
    denom = np.where(tot > 0, tot, 1.0)
    w = (row_tot / denom[:, None, :]).reshape(nk * num_tokens, nk)
    return logits, w


def _check_v(episode: Episode, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = episode.num_support_tokens
    if v.shape != (n,):
        raise ValueError(f"importance weights have shape {v.shape}, expected ({n},)")
    return v


def support_self_logits(episode: Episode, v, mask: Mask, tau: float) -> np.ndarray:
    """Class logits of every pseudo-query support image, shape (N*K, N).

    Row ``n*K + k`` scores support image (class n, shot k) against the
    reweighted, masked support-vs-support similarities; a class whose every
    unmasked pair is excluded gets logit -inf.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    v = _check_v(episode, v)
    sim = _masked_self_similarity(episode, mask)
    logits, _ = _forward(sim, v, tau, episode.n_way, episode.k_shot,
                         episode.num_tokens, with_weights=False)
    return logits


def _loss_from_logits(logits: np.ndarray, k_shot: int) -> float:
    nk = logits.shape[0]
    labels = np.arange(nk) // k_shot
    true = logits[np.arange(nk), labels]
    if np.any(np.isneginf(true)):
        return math.inf
    m = logits.max(axis=1)
    lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
    return float(np.sum(lse - true))


def support_loss(episode: Episode, v, mask: Mask, tau: float) -> float:
    """Summed cross-entropy of all pseudo-query predictions.

    Returns ``inf`` (without raising) when some pseudo-query's true class has
    no unmasked contributing pair, which marks a degenerate episode/mask
    combination.
    """
    return _loss_from_logits(support_self_logits(episode, v, mask, tau), episode.k_shot)


def _grad_from_forward(logits: np.ndarray, w: np.ndarray, tau: float,
                       n_way: int, k_shot: int, num_tokens: int) -> np.ndarray:
    nk = logits.shape[0]
    labels = np.arange(nk) // k_shot
    coeff = softmax(logits)  # (NK, N)
    coeff[np.arange(nk), labels] -= 1.0
    token_class = np.arange(n_way * k_shot * num_tokens) // (k_shot * num_tokens)
    return (w * coeff[:, token_class].T).sum(axis=1) / tau


def support_loss_gradient(episode: Episode, v, mask: Mask, tau: float) -> np.ndarray:
    """Exact gradient of :func:`support_loss` with respect to ``v``.

    Requires a finite loss; raises :class:`NonFiniteLossError` otherwise.
    By shift invariance of the loss the entries always sum to zero.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    v = _check_v(episode, v)
    sim = _masked_self_similarity(episode, mask)
    logits, w = _forward(sim, v, tau, episode.n_way, episode.k_shot,
                         episode.num_tokens, with_weights=True)
    if not math.isfinite(_loss_from_logits(logits, episode.k_shot)):
        raise NonFiniteLossError(
            "support loss is non-finite; the mask leaves some pseudo-query's "
            "true class with no contributing pair"
        )
    return _grad_from_forward(logits, w, tau, episode.n_way, episode.k_shot,
                              episode.num_tokens)


@dataclass(frozen=True, eq=False)
class InnerLoopTrace:
    """Inner-loop diagnostics: ``losses[t]`` is the loss before step ``t``
    (so ``losses`` has ``steps_taken + 1`` entries, the last one evaluated at
    ``v_final``)."""

    losses: tuple
    v_final: np.ndarray
    steps_taken: int


def optimize_importance(episode: Episode, cfg: ClassifierConfig) -> InnerLoopTrace:
    """Fit importance weights by plain SGD on the support self-classification.

    Starts from the all-zeros vector, runs exactly ``cfg.steps`` updates
    ``v <- v - lr * grad`` (no momentum, no early stopping), and is fully
    deterministic.  The mask mode follows the shot count: block-diagonal for
    K > 1, local spatial window for K = 1.  Raises
    :class:`NonFiniteLossError` with the offending step index if the loss
    degenerates.
    """
    mask = build_mask(episode.n_way, episode.k_shot, episode.num_tokens,
                      episode.grid_h, episode.grid_w, cfg.mask_window)
    sim = _masked_self_similarity(episode, mask)
    n, k, l = episode.n_way, episode.k_shot, episode.num_tokens
    v = np.zeros(episode.num_support_tokens)
    losses = []
    for step in range(cfg.steps):
        logits, w = _forward(sim, v, cfg.tau, n, k, l, with_weights=True)
        loss = _loss_from_logits(logits, k)
        if not math.isfinite(loss):
            raise NonFiniteLossError(
                f"support loss became non-finite at inner-loop step {step}", step=step
            )
        losses.append(loss)
        v = v - cfg.lr * _grad_from_forward(logits, w, cfg.tau, n, k, l)
    logits, _ = _forward(sim, v, cfg.tau, n, k, l, with_weights=False)
    final = _loss_from_logits(logits, k)
    if not math.isfinite(final):
        raise NonFiniteLossError(
            f"support loss became non-finite at inner-loop step {cfg.steps}",
            step=cfg.steps,
        )
    losses.append(final)
    return InnerLoopTrace(losses=tuple(losses), v_final=v, steps_taken=cfg.steps)


def finite_difference_gradient(episode: Episode, v, mask: Mask, tau: float,
                               h: float = 1e-5) -> np.ndarray:
    """Central-difference estimate of the support-loss gradient.

    Runtime diagnostic backing the ``gradcheck`` command; it only evaluates
    the forward loss, never the analytic gradient path.
    """
    v = _check_v(episode, v)
    grad = np.zeros_like(v)
    for j in range(v.size):
        bumped = v.copy()
        bumped[j] = v[j] + h
        up = support_loss(episode, bumped, mask, tau)
        bumped[j] = v[j] - h
        down = support_loss(episode, bumped, mask, tau)
        grad[j] = (up - down) / (2.0 * h)
    return grad


def max_relative_gradient_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest entry-wise deviation relative to the numeric gradient's scale."""
    scale = max(float(np.abs(numeric).max()), 1e-30)
    return float(np.abs(analytic - numeric).max() / scale)
