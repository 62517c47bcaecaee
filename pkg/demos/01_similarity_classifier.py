#!/usr/bin/env python3
"""Classify queries by reweighted token similarity, from raw pixels up.

Builds a tiny 2-way 1-shot episode with the toy patch encoder, inspects the
support-vs-query similarity tensor, and runs the LogSumExp classifier.
"""

import numpy as np

from tokshot import (ClassifierConfig, Episode, PatchProjector, RawImage,
                     encode, episode_similarity, predict, zero_importance)

rng = np.random.default_rng(0)

# Two "textures" standing in for two classes: smooth ramps vs checkerboards.
def ramp_image():
    base = np.linspace(0.0, 1.0, 16)[None, :] * np.linspace(0.2, 1.0, 16)[:, None]
    return RawImage(np.clip(base + 0.05 * rng.uniform(size=(16, 16)), 0, 1))

def checker_image():
    tile = np.indices((16, 16)).sum(axis=0) % 2
    return RawImage(np.clip(tile * 0.9 + 0.05 * rng.uniform(size=(16, 16)), 0, 1))

projector = PatchProjector(patch_size=4, channels=1, out_dim=8, seed=7)

support = (
    (encode(ramp_image(), projector, "ramp/s0"), 0),
    (encode(checker_image(), projector, "checker/s0"), 1),
)
queries = (
    (encode(ramp_image(), projector, "ramp/q0"), 0),
    (encode(checker_image(), projector, "checker/q0"), 1),
)
episode = Episode(n_way=2, k_shot=1, support=support, queries=queries)
print(f"episode: {episode.n_way}-way {episode.k_shot}-shot, "
      f"L={episode.num_tokens} tokens of dim {episode.dim}")

s = episode_similarity(episode)
print(f"similarity tensor: {s.values.shape} (support rows x query-token columns)")
print(f"  value range [{s.values.min():+.3f}, {s.values.max():+.3f}]")

cfg = ClassifierConfig.for_dim(episode.dim, steps=0)
print(f"temperature tau = 1/sqrt(D) = {cfg.tau:.4f}")

for i, pred in enumerate(predict(episode, zero_importance(episode), cfg)):
    true = episode.queries[i][1]
    probs = ", ".join(f"{p:.3f}" for p in pred.probs)
    print(f"query {i}: true class {true}, predicted {pred.predicted}, probs [{probs}]")
