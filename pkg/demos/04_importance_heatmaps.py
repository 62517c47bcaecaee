#!/usr/bin/env python3
"""Export learned token-importance maps as grayscale PGM images.

One heatmap per support image; brightness is normalized over the whole
episode, so dark cells in one image really are less important than bright
cells in another.  Files land in ./heatmaps_demo/.
"""

from pathlib import Path

import numpy as np

from tokshot import ClassifierConfig, optimize_importance, render_importance, write_pgm
from tokshot.heatmap import heatmap_filename
from tokshot.synth import distractor_episode

episode, is_distractor = distractor_episode(n_way=3, k_shot=2,
                                            n_query_per_class=2, seed=4)
cfg = ClassifierConfig.for_dim(episode.dim, steps=15)
v = optimize_importance(episode, cfg).v_final

out_dir = Path("heatmaps_demo")
out_dir.mkdir(exist_ok=True)
images = render_importance(v, episode, scale=24)
for image in images:
    name = heatmap_filename("demo", image.class_index, image.shot_index)
    write_pgm(out_dir / name, image.pixels)
    print(f"{name}: cells {image.pixels.min()}..{image.pixels.max()}  "
          f"({image.image_id})")

print(f"\nwrote {len(images)} PGM files to {out_dir}/")

# ASCII preview of the first support image: distractor cells should be dark.
first = render_importance(v, episode)[0]
flags = is_distractor[:episode.num_tokens].reshape(episode.grid_h, episode.grid_w)
shades = " .:-=+*#%@"
print(f"\nsupport image 0 ({first.image_id}), D marks planted distractor tokens:")
for r in range(episode.grid_h):
    row = "".join(shades[int(c) * (len(shades) - 1) // 255] for c in first.pixels[r])
    marks = "".join("D" if flags[r, c] else "." for c in range(episode.grid_w))
    print(f"  {row}    {marks}")
