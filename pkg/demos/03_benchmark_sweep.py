#!/usr/bin/env python3
"""Episodic benchmark with an inner-loop step-count sweep.

Evaluates 5-way 5-shot episodes on the distractor benchmark for several
step counts.  Every sweep entry replays byte-identical episodes (the
episode stream depends only on the seed), so the accuracy differences are
purely the inner loop's doing.
"""

from tokshot import ClassifierConfig, EvalConfig, evaluate_sweep
from tokshot.synth import distractor_dataset

dataset = distractor_dataset(seed=7)
cfg = EvalConfig(
    n_way=5,
    k_shot=5,
    classifier=ClassifierConfig.for_dim(dataset.dim),
    n_query_per_class=15,
    episodes=60,
    seed=11,
    steps_sweep=(0, 1, 5, 10, 15, 20),
)

print(f"dataset: {dataset.num_classes} classes, L={dataset.num_tokens}, "
      f"D={dataset.dim}; {cfg.episodes} episodes per entry\n")
print("steps   mean accuracy        ms/episode")
reports = evaluate_sweep(dataset, cfg, jobs=None)
for report in reports:
    print(f"{report.config['steps']:5d}   {report.mean:.4f} ± {report.ci95:.4f}"
          f"      {report.wall_ms_per_episode:8.1f}")

baseline = reports[0].mean
best = max(reports, key=lambda r: r.mean)
print(f"\nbest entry: steps={best.config['steps']} "
      f"(+{100 * (best.mean - baseline):.2f} accuracy points over steps=0)")
