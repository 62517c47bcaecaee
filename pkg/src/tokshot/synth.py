"""Seeded synthetic token datasets for benchmarks, tests and demos.

Three families:

* ``orthogonal_dataset``: each class is a distinct orthonormal direction
  plus small noise; any sane classifier scores 100%.
* ``random_dataset``: i.i.d. Gaussian tokens carrying no class signal;
  accuracy sits at chance.
* ``distractor_dataset``: class tokens drawn from per-class Gaussians plus
  tight "distractor" clusters shared *across* classes.  Distractor tokens in
  a query match distractor tokens in wrong-class support images, dragging
  the plain similarity classifier down; the importance-weight inner loop can
  detect and suppress them from the support set alone, so the benchmark
  shows a clear gain from reweighting.

All generators are deterministic in their seed.
"""

from __future__ import annotations

import numpy as np

from .episode import Episode, TokenGrid
from .evaluate import TokenDataset

__all__ = [
    "orthogonal_dataset",
    "random_dataset",
    "distractor_dataset",
    "distractor_episode",
    "random_episode",
]


def _grids(make_tokens, count, grid_h, grid_w, prefix):
    return tuple(
        TokenGrid(make_tokens(i), grid_h, grid_w, image_id=f"{prefix}/{i}")
        for i in range(count)
    )


def orthogonal_dataset(n_classes: int, grids_per_class: int, *, grid_h: int = 4,
                       grid_w: int = 4, dim: int | None = None, noise: float = 0.05,
                       seed: int = 0) -> TokenDataset:
    """Every token of class ``c`` is ``e_c`` plus ``noise`` times a Gaussian."""
    dim = n_classes if dim is None else dim
    if dim < n_classes:
        raise ValueError(f"need dim >= n_classes for orthogonal signatures, got {dim}")
    rng = np.random.default_rng(seed)
    L = grid_h * grid_w
    classes = {}
    for c in range(n_classes):
        direction = np.zeros(dim)
        direction[c] = 1.0

        def make(_i, d=direction):
            return d + noise * rng.standard_normal((L, dim))

        classes[f"class{c:02d}"] = _grids(make, grids_per_class, grid_h, grid_w,
                                          f"orth{c}")
    return TokenDataset(classes)


def random_dataset(n_classes: int, grids_per_class: int, *, grid_h: int = 3,
                   grid_w: int = 3, dim: int = 8, seed: int = 0) -> TokenDataset:
    """Pure-noise tokens: no class structure at all."""
    rng = np.random.default_rng(seed)
    L = grid_h * grid_w
    classes = {
        f"class{c:02d}": _grids(lambda _i: rng.standard_normal((L, dim)),
                                grids_per_class, grid_h, grid_w, f"rand{c}")
        for c in range(n_classes)
    }
    return TokenDataset(classes)


def _distractor_tokens(rng, *, dim, L, class_dir, distractor_dirs, n_signal,
                       n_distractor, signal_noise, distractor_noise, background_noise):
    """One image: signal tokens, one tight distractor cluster, background noise."""
    d = distractor_dirs[rng.integers(len(distractor_dirs))]
    rows = [class_dir + signal_noise * rng.standard_normal((n_signal, dim)),
            d + distractor_noise * rng.standard_normal((n_distractor, dim)),
            background_noise * rng.standard_normal((L - n_signal - n_distractor, dim))]
    tokens = np.concatenate(rows)
    is_distractor = np.zeros(L, dtype=bool)
    is_distractor[n_signal:n_signal + n_distractor] = True
    perm = rng.permutation(L)
    return tokens[perm], is_distractor[perm]


def distractor_dataset(n_classes: int = 8, grids_per_class: int = 25, *,
                       grid_h: int = 4, grid_w: int = 4, dim: int = 16,
                       n_signal: int = 5, n_distractor: int = 5,
                       n_distractor_dirs: int = 3, signal_noise: float = 0.45,
                       distractor_noise: float = 0.3, background_noise: float = 0.5,
                       seed: int = 0) -> TokenDataset:
    """Class Gaussians plus cross-class distractor clusters.

    Class ``c`` signals along ``e_c``; the distractor directions occupy the
    next ``n_distractor_dirs`` coordinates and appear in images of *every*
    class, so they carry no label information but produce strong spurious
    cross-class matches.  Distractor clusters are tighter than the class
    clusters, which makes their matches dominate the LogSumExp pools until
    the inner loop turns their importance down.
    """
    if dim < n_classes + n_distractor_dirs:
        raise ValueError("dim too small for disjoint class and distractor directions")
    rng = np.random.default_rng(seed)
    L = grid_h * grid_w
    if n_signal + n_distractor > L:
        raise ValueError("n_signal + n_distractor exceeds the token count")
    distractor_dirs = [np.eye(dim)[n_classes + i] for i in range(n_distractor_dirs)]
    classes = {}
    for c in range(n_classes):
        class_dir = np.eye(dim)[c]

        def make(_i, cd=class_dir):
            tokens, _ = _distractor_tokens(
                rng, dim=dim, L=L, class_dir=cd, distractor_dirs=distractor_dirs,
                n_signal=n_signal, n_distractor=n_distractor,
                signal_noise=signal_noise, distractor_noise=distractor_noise,
                background_noise=background_noise)
            return tokens

        classes[f"class{c:02d}"] = _grids(make, grids_per_class, grid_h, grid_w,
                                          f"dist{c}")
    return TokenDataset(classes)


def random_episode(n_way: int, k_shot: int, grid_h: int, grid_w: int, dim: int,
                   n_query_per_class: int = 1, seed: int = 0) -> Episode:
    """An episode of i.i.d. Gaussian tokens (for gradient checks and fuzzing)."""
    rng = np.random.default_rng(seed)
    L = grid_h * grid_w
    support = tuple(
        (TokenGrid(rng.standard_normal((L, dim)), grid_h, grid_w, f"s{c}.{k}"), c)
        for c in range(n_way) for k in range(k_shot)
    )
    queries = tuple(
        (TokenGrid(rng.standard_normal((L, dim)), grid_h, grid_w, f"q{c}.{q}"), c)
        for c in range(n_way) for q in range(n_query_per_class)
    )
    return Episode(n_way=n_way, k_shot=k_shot, support=support, queries=queries)


def distractor_episode(n_way: int = 2, k_shot: int = 2, n_query_per_class: int = 3, *,
                       grid_h: int = 4, grid_w: int = 4, dim: int = 16,
                       n_signal: int = 5, n_distractor: int = 5,
                       signal_noise: float = 0.45, distractor_noise: float = 0.3,
                       background_noise: float = 0.5, seed: int = 0):
    """A single episode with one distractor cluster shared across classes.

    Returns ``(episode, distractor_rows)`` where ``distractor_rows`` is a
    boolean vector over the N*K*L flattened support rows marking the
    distractor tokens (support is built in class-major order, so flattened
    row order matches construction order).
    """
    rng = np.random.default_rng(seed)
    L = grid_h * grid_w
    distractor_dirs = [np.eye(dim)[n_way]]

    def image(c):
        return _distractor_tokens(
            rng, dim=dim, L=L, class_dir=np.eye(dim)[c],
            distractor_dirs=distractor_dirs, n_signal=n_signal,
            n_distractor=n_distractor, signal_noise=signal_noise,
            distractor_noise=distractor_noise, background_noise=background_noise)

    support = []
    flags = []
    for c in range(n_way):
        for k in range(k_shot):
            tokens, is_distractor = image(c)
            support.append((TokenGrid(tokens, grid_h, grid_w, f"s{c}.{k}"), c))
            flags.append(is_distractor)
    queries = []
    for c in range(n_way):
        for q in range(n_query_per_class):
            tokens, _ = image(c)
            queries.append((TokenGrid(tokens, grid_h, grid_w, f"q{c}.{q}"), c))
    episode = Episode(n_way=n_way, k_shot=k_shot, support=tuple(support),
                      queries=tuple(queries))
    return episode, np.concatenate(flags)
