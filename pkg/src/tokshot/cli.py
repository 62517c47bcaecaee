"""Command-line interface: encode, eval, classify, gradcheck.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical error.
Every flag has a documented default; an optional ``--config FILE`` JSON
overlay supplies values for flags that were not given on the command line
(explicit flags always win).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import encoder, formats, heatmap, synth
from .episode import ClassifierConfig, default_tau
from .errors import DataError, NumericalError
from .evaluate import EvalConfig, episode_rng, evaluate, evaluate_sweep, sample_episode
from .classifier import predict, zero_importance
from . import reweighting

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; our contract says 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class UsageError(Exception):
    pass


def _load_config(path):
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read --config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError(f"--config {path} must hold a JSON object")
    return doc


def _pick(args, config, key, fallback):
    """Explicit flag beats config file beats built-in default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return fallback


def _classifier_config(args, config, dim, k_shot):
    tau = _pick(args, config, "tau", None)
    if tau is None:
        tau = default_tau(dim)
    window = _pick(args, config, "mask_window", 5)
    if k_shot > 1 and args.mask_window is not None:
        print("warning: --mask-window only affects the 1-shot masking path; "
              f"ignored for k_shot={k_shot}", file=sys.stderr)
        window = 5
    return ClassifierConfig(
        tau=float(tau),
        lr=float(_pick(args, config, "lr", 0.1)),
        steps=int(_pick(args, config, "steps", 15)),
        mask_window=int(window),
    )


def _add_classifier_flags(p):
    p.add_argument("--steps", type=int, default=None,
                   help="inner-loop SGD steps (default: 15)")
    p.add_argument("--lr", type=float, default=None,
                   help="inner-loop learning rate (default: 0.1)")
    p.add_argument("--tau", type=float, default=None,
                   help="similarity temperature (default: 1/sqrt(D) from the manifest)")
    p.add_argument("--mask-window", dest="mask_window", type=int, default=None,
                   help="odd side of the 1-shot spatial mask window (default: 5)")
    p.add_argument("--config", default=None,
                   help="JSON file with defaults for any flag not given (default: none)")


def _add_episode_flags(p):
    p.add_argument("--manifest", required=True, help="dataset manifest JSON")
    p.add_argument("--n-way", dest="n_way", type=int, default=None,
                   help="classes per episode (default: 5)")
    p.add_argument("--k-shot", dest="k_shot", type=int, default=None,
                   help="support images per class (default: 5)")
    p.add_argument("--n-query", dest="n_query", type=int, default=None,
                   help="query images per class (default: 15)")


def cmd_encode(args):
    directory = Path(args.images)
    if not directory.is_dir():
        raise DataError(f"--images {directory} is not a directory")
    files = sorted(p for p in directory.iterdir() if p.suffix in (".ppm", ".pgm"))
    if not files:
        raise DataError(f"no .ppm/.pgm files in {directory}")
    images = [encoder.read_pnm(p) for p in files]
    first = images[0]
    for path, img in zip(files, images):
        if (img.height, img.width, img.channels) != (first.height, first.width,
                                                     first.channels):
            raise DataError(f"{path}: image dims differ from {files[0]}")
    projector = encoder.PatchProjector(patch_size=args.patch_size,
                                       channels=first.channels,
                                       out_dim=args.dim, seed=args.seed)
    grids = [encoder.encode(img, projector, image_id=path.name)
             for path, img in zip(files, images)]
    formats.write_tokens(grids, args.out)
    l = grids[0].num_tokens
    print(f"encoded {len(grids)} images: L={l}, D={args.dim} -> {args.out}")
    return EXIT_OK


def _make_eval_config(args, config, dataset, steps_sweep=None):
    n_way = int(_pick(args, config, "n_way", 5))
    k_shot = int(_pick(args, config, "k_shot", 5))
    classifier = _classifier_config(args, config, dataset.dim, k_shot)
    return EvalConfig(
        n_way=n_way,
        k_shot=k_shot,
        classifier=classifier,
        n_query_per_class=int(_pick(args, config, "n_query", 15)),
        episodes=int(_pick(args, config, "episodes", 600)),
        seed=int(_pick(args, config, "seed", 0)),
        steps_sweep=steps_sweep,
    )


def _sweep_out_path(out, steps):
    out = Path(out)
    return out.with_name(f"{out.stem}_steps{steps}{out.suffix}")


def cmd_eval(args):
    config = _load_config(args.config)
    episodes = int(_pick(args, config, "episodes", 600))
    if episodes < 1:
        raise UsageError(f"--episodes must be >= 1, got {episodes}")
    sweep = _pick(args, config, "sweep", None)
    if isinstance(sweep, str):
        try:
            sweep = tuple(int(s) for s in sweep.split(",") if s.strip() != "")
        except ValueError as exc:
            raise UsageError(f"--sweep must be comma-separated integers: {exc}") from exc
        if not sweep:
            raise UsageError("--sweep must name at least one step count")
    dataset = formats.load_dataset(args.manifest)
    try:
        cfg = _make_eval_config(args, config, dataset, steps_sweep=sweep)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    reports = evaluate_sweep(dataset, cfg, jobs=args.jobs)
    for report in reports:
        steps = report.config["steps"]
        print(f"steps={steps}: mean {report.mean:.3f} ± {report.ci95:.3f} "
              f"({len(report.per_episode_accuracy)} episodes, "
              f"{report.wall_ms_per_episode:.1f} ms/episode)")
        if args.out:
            path = _sweep_out_path(args.out, steps) if sweep else Path(args.out)
            path.write_text(json.dumps(report.to_json_dict(), indent=2,
                                       sort_keys=True) + "\n")
            print(f"wrote {path}")
        if args.csv:
            path = _sweep_out_path(args.csv, steps) if sweep else Path(args.csv)
            path.write_text(report.to_csv())
            print(f"wrote {path}")
    return EXIT_OK


def cmd_classify(args):
    config = _load_config(args.config)
    dataset = formats.load_dataset(args.manifest)
    try:
        cfg = _make_eval_config(args, config, dataset)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    episode_seed = int(_pick(args, config, "episode_seed", 0))
    episode = sample_episode(dataset, cfg, episode_rng(episode_seed, 0))
    if cfg.classifier.steps > 0:
        trace = reweighting.optimize_importance(episode, cfg.classifier)
        v = trace.v_final
        print(f"inner loop: {trace.steps_taken} steps, "
              f"loss {trace.losses[0]:.4f} -> {trace.losses[-1]:.4f}")
    else:
        v = zero_importance(episode)
        print("inner loop: skipped (steps=0)")
    predictions = predict(episode, v, cfg.classifier)
    for i, (prediction, (_, true_class)) in enumerate(zip(predictions, episode.queries)):
        probs = " ".join(f"{p:.6f}" for p in prediction.probs)
        print(f"query {i}: true={true_class} predicted={prediction.predicted} "
              f"probs=[{probs}]")
    if args.heatmaps:
        out_dir = Path(args.heatmaps)
        out_dir.mkdir(parents=True, exist_ok=True)
        for image in heatmap.render_importance(v, episode, scale=args.heatmap_scale):
            name = heatmap.heatmap_filename(episode_seed, image.class_index,
                                            image.shot_index)
            heatmap.write_pgm(out_dir / name, image.pixels)
        print(f"wrote {len(episode.support)} heatmaps to {out_dir}")
    return EXIT_OK


# Shape grid for gradcheck trials; small enough for fast finite differences,
# varied enough to cover both mask modes and both parities of everything.
_GRADCHECK_SHAPES = [(2, 1, 2, 2, 3), (2, 2, 3, 3, 8), (5, 1, 3, 3, 8),
                     (5, 2, 2, 2, 3)]


def cmd_gradcheck(args):
    if args.trials < 1:
        raise UsageError(f"--trials must be >= 1, got {args.trials}")
    worst = 0.0
    for trial in range(args.trials):
        n_way, k_shot, gh, gw, dim = _GRADCHECK_SHAPES[trial % len(_GRADCHECK_SHAPES)]
        episode = synth.random_episode(n_way, k_shot, gh, gw, dim,
                                       seed=args.seed + trial)
        # m=3 fully masks a 2x2 grid in 1-shot mode; fall back to self-only.
        window = 3 if min(gh, gw) >= 3 else 1
        mask = reweighting.build_mask(n_way, k_shot, episode.num_tokens, gh, gw, window)
        tau = default_tau(dim)
        rng = np.random.default_rng(args.seed + 1000 + trial)
        v = 0.3 * rng.standard_normal(episode.num_support_tokens)
        analytic = reweighting.support_loss_gradient(episode, v, mask, tau)
        numeric = reweighting.finite_difference_gradient(episode, v, mask, tau)
        worst = max(worst, reweighting.max_relative_gradient_error(analytic, numeric))
    print(f"max relative gradient error over {args.trials} trials: {worst:.3e}")
    if not (math.isfinite(worst) and worst < 1e-5):
        raise NumericalError(f"gradient check failed: {worst:.3e} >= 1e-5")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tokshot",
                     description="Few-shot token-similarity classification tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", parents=[], help="encode PPM/PGM images to a token file")
    p.add_argument("--images", required=True, help="directory of .ppm/.pgm images")
    p.add_argument("--patch-size", dest="patch_size", type=int, default=8,
                   help="square patch side (default: 8)")
    p.add_argument("--dim", type=int, default=16, help="token dimension (default: 16)")
    p.add_argument("--seed", type=int, default=0,
                   help="projection seed (default: 0)")
    p.add_argument("--out", required=True, help="output token file")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("eval", help="episodic evaluation with mean and 95% CI")
    _add_episode_flags(p)
    p.add_argument("--episodes", type=int, default=None,
                   help="episode count (default: 600)")
    p.add_argument("--seed", type=int, default=None,
                   help="episode sampling seed (default: 0)")
    _add_classifier_flags(p)
    p.add_argument("--sweep", default=None,
                   help='comma-separated step counts, e.g. "0,5,15" '
                        "(default: none, single run)")
    p.add_argument("--out", default=None,
                   help="report JSON path; sweep entries get _steps<N> suffixes "
                        "(default: print only)")
    p.add_argument("--csv", default=None,
                   help="per-episode accuracy CSV path, suffixed like --out "
                        "(default: none)")
    p.add_argument("--jobs", type=int, default=None,
                   help="parallel episode workers (default: available parallelism)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("classify", help="classify one sampled episode, export heatmaps")
    _add_episode_flags(p)
    p.add_argument("--episode-seed", dest="episode_seed", type=int, default=None,
                   help="seed selecting the episode (default: 0)")
    _add_classifier_flags(p)
    p.add_argument("--heatmaps", default=None,
                   help="directory for importance heatmap PGMs (default: none)")
    p.add_argument("--heatmap-scale", dest="heatmap_scale", type=int, default=1,
                   help="nearest-neighbour upsampling factor (default: 1)")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("gradcheck",
                       help="compare the analytic gradient to finite differences")
    p.add_argument("--seed", type=int, default=0, help="base seed (default: 0)")
    p.add_argument("--trials", type=int, default=20,
                   help="number of random episodes (default: 20)")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"tokshot {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"tokshot {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"tokshot {args.command}: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
