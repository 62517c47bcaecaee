"""Episodic N-way K-shot evaluation with confidence intervals.

Episodes are sampled from a class-partitioned token dataset; each episode
optionally runs the importance-weight inner loop before classifying its
queries.  Every episode derives its own RNG stream from (seed, episode
index), so results are bit-identical regardless of how many workers run the
loop, and step-count sweeps see byte-identical episode sequences.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .classifier import predict, zero_importance
from .episode import ClassifierConfig, Episode, TokenGrid
from .errors import DataError, NonFiniteLossError
from .reweighting import optimize_importance

__all__ = [
    "TokenDataset",
    "EvalConfig",
    "EvalReport",
    "sample_episode",
    "episode_rng",
    "evaluate",
    "evaluate_sweep",
]


@dataclass(frozen=True, eq=False)
class TokenDataset:
    """Class name -> token grids; all grids share (L, D, grid shape).

    Disjointness between the classes used for backbone training and the
    classes evaluated here is the data provider's responsibility; this type
    only sees the evaluation-time pool.
    """

    classes: dict

    def __post_init__(self):
        if not self.classes:
            raise DataError("dataset has no classes")
        classes = {str(name): tuple(grids) for name, grids in self.classes.items()}
        ref = None
        for name, grids in classes.items():
            if not grids:
                raise DataError(f"class {name!r} has no grids")
            for grid in grids:
                shape = (grid.num_tokens, grid.dim, grid.grid_h, grid.grid_w)
                if ref is None:
                    ref = shape
                elif shape != ref:
                    raise DataError(
                        f"class {name!r} grid has (L, D, grid) = {shape}, "
                        f"dataset declares {ref}"
                    )
        object.__setattr__(self, "classes", classes)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def num_tokens(self) -> int:
        return next(iter(self.classes.values()))[0].num_tokens

    @property
    def dim(self) -> int:
        return next(iter(self.classes.values()))[0].dim


@dataclass(frozen=True)
class EvalConfig:
    """Episode shape, episode count, seeding and the classifier settings."""

    n_way: int
    k_shot: int
    classifier: ClassifierConfig
    n_query_per_class: int = 15
    episodes: int = 600
    seed: int = 0
    steps_sweep: tuple = None

    def __post_init__(self):
        if self.n_way < 2:
            raise ValueError(f"n_way must be >= 2, got {self.n_way}")
        if self.k_shot < 1:
            raise ValueError(f"k_shot must be >= 1, got {self.k_shot}")
        if self.n_query_per_class < 1:
            raise ValueError(f"n_query_per_class must be >= 1, got {self.n_query_per_class}")
        if self.episodes < 1:
            raise ValueError(f"episodes must be >= 1, got {self.episodes}")
        if self.steps_sweep is not None:
            sweep = tuple(int(s) for s in self.steps_sweep)
            if not sweep or any(s < 0 for s in sweep):
                raise ValueError(f"steps_sweep must be non-negative step counts, got {sweep}")
            object.__setattr__(self, "steps_sweep", sweep)

    def config_dict(self) -> dict:
        """Flat echo of every knob, embedded in reports."""
        return {
            "n_way": self.n_way,
            "k_shot": self.k_shot,
            "n_query_per_class": self.n_query_per_class,
            "episodes": self.episodes,
            "seed": self.seed,
            "tau": self.classifier.tau,
            "lr": self.classifier.lr,
            "steps": self.classifier.steps,
            "mask_window": self.classifier.mask_window,
            "similarity": self.classifier.similarity,
        }


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Per-episode accuracies with their mean and 95% confidence interval."""

    per_episode_accuracy: tuple
    mean: float
    ci95: float
    config: dict
    wall_ms_per_episode: float

    def to_json_dict(self) -> dict:
        return {
            "config": dict(self.config),
            "mean": self.mean,
            "ci95": self.ci95,
            "episodes": len(self.per_episode_accuracy),
            "per_episode": list(self.per_episode_accuracy),
            "wall_ms_per_episode": self.wall_ms_per_episode,
        }

    def to_csv(self) -> str:
        lines = ["episode,accuracy"]
        lines += [f"{i},{acc:.10g}" for i, acc in enumerate(self.per_episode_accuracy)]
        return "\n".join(lines) + "\n"


def episode_rng(seed: int, index: int) -> np.random.Generator:
    """Independent per-episode RNG stream derived from (seed, index)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), int(index))))


def sample_episode(dataset: TokenDataset, cfg: EvalConfig,
                   rng: np.random.Generator) -> Episode:
    """Draw one episode: N classes uniformly, then K + Q grids per class.

    Class indices follow sampled order.  Sampling is without replacement at
    both levels, so support and query grids are disjoint by construction.
    """
    names = list(dataset.classes)
    if cfg.n_way > len(names):
        raise DataError(f"n_way={cfg.n_way} exceeds the {len(names)} dataset classes")
    chosen = rng.choice(len(names), size=cfg.n_way, replace=False)
    need = cfg.k_shot + cfg.n_query_per_class
    support = []
    queries = []
    for class_index, name_index in enumerate(chosen):
        grids = dataset.classes[names[int(name_index)]]
        if len(grids) < need:
            raise DataError(
                f"class {names[int(name_index)]!r} has {len(grids)} grids, "
                f"episode needs {need}"
            )
        picks = rng.choice(len(grids), size=need, replace=False)
        for i in picks[:cfg.k_shot]:
            support.append((grids[int(i)], class_index))
        for i in picks[cfg.k_shot:]:
            queries.append((grids[int(i)], class_index))
    return Episode(n_way=cfg.n_way, k_shot=cfg.k_shot, support=tuple(support),
                   queries=tuple(queries))


def _episode_accuracy(episode: Episode, classifier: ClassifierConfig) -> float:
    if classifier.steps > 0:
        v = optimize_importance(episode, classifier).v_final
    else:
        v = zero_importance(episode)
    predictions = predict(episode, v, classifier)
    truth = [label for _, label in episode.queries]
    hits = sum(p.predicted == t for p, t in zip(predictions, truth))
    return hits / len(truth)


def _run_episode(dataset: TokenDataset, cfg: EvalConfig, index: int) -> tuple:
    start = time.perf_counter()
    episode = sample_episode(dataset, cfg, episode_rng(cfg.seed, index))
    try:
        acc = _episode_accuracy(episode, cfg.classifier)
    except NonFiniteLossError as exc:
        raise NonFiniteLossError(
            f"episode {index}: {exc}", step=exc.step, episode_index=index
        ) from exc
    return acc, (time.perf_counter() - start) * 1000.0


def evaluate(dataset: TokenDataset, cfg: EvalConfig, jobs: int = 1) -> EvalReport:
    """Run ``cfg.episodes`` episodes and aggregate mean accuracy and ci95.

    ``jobs`` workers share the episode loop; per-episode RNG derivation makes
    the report independent of the worker count.  Degenerate episodes abort
    the run with their index attached (never silently skipped).
    """
    if jobs is None:
        jobs = os.cpu_count() or 1
    indices = range(cfg.episodes)
    if jobs <= 1:
        results = [_run_episode(dataset, cfg, i) for i in indices]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda i: _run_episode(dataset, cfg, i), indices))
    accuracies = tuple(acc for acc, _ in results)
    wall = float(np.mean([ms for _, ms in results]))
    mean = float(np.mean(accuracies))
    if len(accuracies) > 1:
        ci95 = float(1.96 * np.std(accuracies, ddof=1) / math.sqrt(len(accuracies)))
    else:
        ci95 = 0.0
    return EvalReport(per_episode_accuracy=accuracies, mean=mean, ci95=ci95,
                      config=cfg.config_dict(), wall_ms_per_episode=wall)


def evaluate_sweep(dataset: TokenDataset, cfg: EvalConfig, jobs: int = 1) -> list:
    """One report per sweep step count, over byte-identical episode sequences.

    Episodes depend only on (seed, index), so every entry replays exactly the
    same tasks; only the inner-loop step count differs.
    """
    sweep = cfg.steps_sweep if cfg.steps_sweep is not None else (cfg.classifier.steps,)
    reports = []
    for steps in sweep:
        entry = replace(cfg, classifier=replace(cfg.classifier, steps=steps))
        reports.append(evaluate(dataset, entry, jobs=jobs))
    return reports
