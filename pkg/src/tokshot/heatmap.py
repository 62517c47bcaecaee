"""Render learned importance weights as per-image grayscale heatmaps.

Normalization is min-max over the *whole episode's* weight vector rather
than per image, so brightness is comparable across the support images of one
task.  Output is binary PGM (P5), which keeps the files byte-exactly
testable.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .episode import Episode, ordered_support

__all__ = ["HeatmapImage", "render_importance", "write_pgm", "heatmap_filename"]


@dataclass(frozen=True, eq=False)
class HeatmapImage:
    """One support image's importance map, brighter = more important."""

    pixels: np.ndarray  # (grid_h * scale, grid_w * scale) uint8
    class_index: int
    shot_index: int
    image_id: str


def render_importance(v, episode: Episode, scale: int = 1):
    """One heatmap per support image, in flattened (class, shot) order.

    Cell values are ``round(255 * (v_j - min v) / (max v - min v))`` with the
    min/max taken over all of ``v``; a constant vector renders mid-gray (128).
    ``scale`` upsamples by nearest neighbour.
    """
    v = np.asarray(v, dtype=np.float64)
    n = episode.num_support_tokens
    if v.shape != (n,):
        raise ValueError(f"importance weights have shape {v.shape}, expected ({n},)")
    if scale < 1 or int(scale) != scale:
        raise ValueError(f"scale must be a positive integer, got {scale}")
    lo, hi = v.min(), v.max()
    if hi == lo:
        cells = np.full(n, 128, dtype=np.uint8)
    else:
        cells = np.round(255.0 * (v - lo) / (hi - lo)).astype(np.uint8)
    l = episode.num_tokens
    images = []
    for i, (grid, label) in enumerate(ordered_support(episode)):
        block = cells[i * l:(i + 1) * l].reshape(episode.grid_h, episode.grid_w)
        if scale > 1:
            block = np.repeat(np.repeat(block, scale, axis=0), scale, axis=1)
        images.append(HeatmapImage(pixels=block, class_index=label,
                                   shot_index=i % episode.k_shot,
                                   image_id=grid.image_id))
    return images


def write_pgm(path, pixels: np.ndarray) -> None:
    """Write a 2-D uint8 array as binary PGM (P5), maxval 255."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim != 2:
        raise ValueError(f"PGM output needs a 2-D array, got shape {pixels.shape}")
    h, w = pixels.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + pixels.tobytes())


def heatmap_filename(episode, class_index: int, shot_index: int) -> str:
    """Canonical output name for one support image's heatmap."""
    return f"{episode}_{class_index}_{shot_index}.pgm"
