"""Acceptance suite: one test per release criterion, pinned tolerances.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one PASS/FAIL line
per criterion including its runtime against the stated budget.
"""

import json
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from tokshot import cli
from tokshot.classifier import class_logits, episode_similarity, predict, zero_importance
from tokshot.classifier import SimilarityTensor
from tokshot.episode import ClassifierConfig, Episode, TokenGrid, default_tau
from tokshot.evaluate import EvalConfig, episode_rng, evaluate, sample_episode
from tokshot.formats import HEADER_SIZE, export_dataset, read_tokens, write_tokens
from tokshot.heatmap import render_importance, write_pgm
from tokshot.reweighting import (build_mask, max_relative_gradient_error,
                                 optimize_importance, support_loss,
                                 support_loss_gradient, support_self_logits)
from tokshot.synth import (distractor_dataset, orthogonal_dataset, random_dataset,
                           random_episode)

from oracles import (oracle_fd_gradient, oracle_logsumexp_mp, oracle_predict,
                     oracle_self_logits, oracle_window_count)


@contextmanager
def criterion(name, limit_s):
    start = time.perf_counter()
    ok = False
    try:
        yield
        ok = True
    finally:
        elapsed = time.perf_counter() - start
        print(f"\n[acceptance] {name}: {'PASS' if ok else 'FAIL'} "
              f"({elapsed:.1f}s, limit {limit_s}s)")
        if ok:
            assert elapsed < limit_s, f"{name} exceeded its {limit_s}s budget"


def episode_mask(episode, window):
    return build_mask(episode.n_way, episode.k_shot, episode.num_tokens,
                      episode.grid_h, episode.grid_w, window)


def test_c1_gradient_correctness():
    # N in {2,5}, K in {1,2}, L in {4,9}, D in {3,8}; h=1e-5 central
    # differences in float64; max relative error < 1e-5 over 20 episodes.
    with criterion("1 gradient correctness", 10):
        shapes = [(2, 1, 2, 2, 3), (2, 2, 3, 3, 8), (5, 1, 3, 3, 8),
                  (5, 2, 2, 2, 3), (2, 1, 3, 3, 3), (5, 2, 3, 3, 8),
                  (2, 2, 2, 2, 8), (5, 1, 2, 2, 3)]
        worst = 0.0
        for trial in range(20):
            n_way, k_shot, gh, gw, dim = shapes[trial % len(shapes)]
            episode = random_episode(n_way, k_shot, gh, gw, dim, seed=500 + trial)
            window = 3 if min(gh, gw) >= 3 else 1
            mask = episode_mask(episode, window)
            tau = default_tau(dim)
            rng = np.random.default_rng(900 + trial)
            v = 0.3 * rng.standard_normal(episode.num_support_tokens)
            analytic = support_loss_gradient(episode, v, mask, tau)
            numeric = oracle_fd_gradient(
                lambda vv: support_loss(episode, vv, mask, tau), v, h=1e-5)
            worst = max(worst, max_relative_gradient_error(analytic, numeric))
        assert worst < 1e-5, f"max relative gradient error {worst:.3e}"


def test_c2_oracle_equivalence():
    # predict() and support_self_logits() against the brute-force triple
    # loop, 50 seeded instances with N*K*L <= 32, tolerance 1e-9.
    with criterion("2 oracle equivalence", 10):
        shapes = [(2, 1, 2, 2, 3), (2, 1, 3, 3, 4), (2, 2, 2, 2, 5),
                  (2, 2, 2, 4, 3), (5, 1, 2, 2, 4), (5, 1, 2, 3, 3),
                  (3, 1, 3, 3, 5), (4, 2, 2, 2, 3)]
        for instance in range(50):
            n_way, k_shot, gh, gw, dim = shapes[instance % len(shapes)]
            assert n_way * k_shot * gh * gw <= 32
            episode = random_episode(n_way, k_shot, gh, gw, dim,
                                     n_query_per_class=1, seed=instance)
            tau = default_tau(dim)
            rng = np.random.default_rng(2000 + instance)
            v = 0.4 * rng.standard_normal(episode.num_support_tokens)

            preds = predict(episode, v, ClassifierConfig(tau=tau, steps=0))
            probs_want, logits_want = oracle_predict(episode, v, tau)
            np.testing.assert_allclose(np.array([p.probs for p in preds]),
                                       probs_want, atol=1e-9)
            np.testing.assert_allclose(np.array([p.logits for p in preds]),
                                       logits_want, atol=1e-9)

            window = 3 if min(gh, gw) >= 3 else 1
            mask = episode_mask(episode, window)
            got = support_self_logits(episode, v, mask, tau)
            want = oracle_self_logits(episode, v, mask.masked, tau)
            np.testing.assert_allclose(got, want, atol=1e-9)


def test_c3_invariance_suite():
    # Shift invariance of v, cosine scale invariance, within-class support
    # permutation, query-patch permutation; 20 instances each at 1e-9.
    with criterion("3 invariance suite", 10):
        for instance in range(20):
            rng = np.random.default_rng(3000 + instance)
            n_way = int(rng.choice([2, 3, 5]))
            k_shot = int(rng.choice([1, 2]))
            episode = random_episode(n_way, k_shot, 2, 2, 4,
                                     n_query_per_class=2, seed=instance)
            cfg = ClassifierConfig(tau=0.4, steps=0)
            v = rng.standard_normal(episode.num_support_tokens)
            base = np.array([p.probs for p in predict(episode, v, cfg)])

            shifted = np.array([
                p.probs for p in predict(episode, v + float(rng.uniform(-5, 5)), cfg)])
            np.testing.assert_allclose(base, shifted, atol=1e-9)

            scale = 2.0 ** int(rng.integers(-3, 4))  # exact in float32 storage
            scaled_support = tuple(
                (TokenGrid(np.asarray(g.tokens, np.float64) * scale, g.grid_h,
                           g.grid_w, g.image_id), c)
                for g, c in episode.support)
            scaled = Episode(n_way=n_way, k_shot=k_shot, support=scaled_support,
                             queries=episode.queries)
            np.testing.assert_allclose(
                base, np.array([p.probs for p in predict(scaled, v, cfg)]), atol=1e-9)

            if k_shot > 1:
                # Swap two shots of class 0; v entries travel with their rows.
                support = list(episode.support)
                support[0], support[1] = support[1], support[0]
                permuted = Episode(n_way=n_way, k_shot=k_shot,
                                   support=tuple(support), queries=episode.queries)
                np.testing.assert_allclose(
                    base,
                    np.array([p.probs for p in
                              predict(permuted, swap_shot_weights(episode, v), cfg)]),
                    atol=1e-9)

            perm = rng.permutation(episode.num_tokens)
            queries = tuple(
                (TokenGrid(np.asarray(g.tokens)[perm], g.grid_h, g.grid_w,
                           g.image_id), c)
                for g, c in episode.queries)
            shuffled = Episode(n_way=n_way, k_shot=k_shot, support=episode.support,
                               queries=queries)
            np.testing.assert_allclose(
                base, np.array([p.probs for p in predict(shuffled, v, cfg)]), atol=1e-9)


def swap_shot_weights(original, v):
    """Reorder v to follow a swap of class 0's first two support shots."""
    l = original.num_tokens
    out = v.copy()
    out[0:l], out[l:2 * l] = v[l:2 * l].copy(), v[0:l].copy()
    return out


def test_c4_mask_correctness():
    # Block-diagonal cardinality N*K*L^2 plus exhaustive clipped-window
    # counts for every cell of every grid up to 8x8 and m in {1,3,5,7}.
    with criterion("4 mask correctness", 5):
        for n_way, k_shot, gh, gw in [(2, 2, 2, 2), (3, 2, 3, 3), (5, 5, 2, 3),
                                      (2, 4, 4, 2)]:
            l_tokens = gh * gw
            mask = build_mask(n_way, k_shot, l_tokens, gh, gw, 5)
            assert mask.num_masked == n_way * k_shot * l_tokens * l_tokens
        for gh in range(1, 9):
            for gw in range(1, 9):
                l_tokens = gh * gw
                for m in (1, 3, 5, 7):
                    mask = build_mask(2, 1, l_tokens, gh, gw, m)
                    image = np.arange(2 * l_tokens) // l_tokens
                    outside = mask.masked & (image[:, None] != image[None, :])
                    assert not outside.any()
                    for col in range(l_tokens):
                        row, c = col // gw, col % gw
                        assert mask.masked[:l_tokens, col].sum() == \
                            oracle_window_count(gh, gw, row, c, m), (gh, gw, m, col)


def test_c5_inner_loop_benefit():
    # Shipped distractor benchmark, 5-way 5-shot, 100 episodes: steps=15 at
    # lr=0.1 beats steps=0 by >= 2 accuracy points and the support loss
    # strictly decreases in >= 95% of episodes.
    with criterion("5 inner-loop benefit", 120):
        dataset = distractor_dataset(seed=7)
        cfg = EvalConfig(n_way=5, k_shot=5,
                         classifier=ClassifierConfig.for_dim(dataset.dim, steps=15,
                                                             lr=0.1),
                         n_query_per_class=15, episodes=100, seed=11)
        hits_plain = 0
        hits_adapted = 0
        total = 0
        decreased = 0
        for index in range(cfg.episodes):
            episode = sample_episode(dataset, cfg, episode_rng(cfg.seed, index))
            trace = optimize_importance(episode, cfg.classifier)
            decreased += trace.losses[-1] < trace.losses[0]
            truth = [c for _, c in episode.queries]
            plain = predict(episode, zero_importance(episode), cfg.classifier)
            adapted = predict(episode, trace.v_final, cfg.classifier)
            hits_plain += sum(p.predicted == t for p, t in zip(plain, truth))
            hits_adapted += sum(p.predicted == t for p, t in zip(adapted, truth))
            total += len(truth)
        acc_plain = hits_plain / total
        acc_adapted = hits_adapted / total
        assert acc_adapted - acc_plain >= 0.02, \
            f"gain {100 * (acc_adapted - acc_plain):.2f} points"
        assert decreased >= 95, f"loss decreased in only {decreased}/100 episodes"


def test_c6_separable_sanity():
    # Orthogonal classes: exactly 1.000 +- 0 over 50 episodes for both the
    # 1-shot (local window) and 5-shot (block diagonal) paths; random
    # tokens: chance 0.20 +- 0.04 at 5-way over 600 episodes.
    with criterion("6 separable sanity", 120):
        orth = orthogonal_dataset(8, 25, seed=21)
        for k_shot in (1, 5):
            cfg = EvalConfig(n_way=5, k_shot=k_shot,
                             classifier=ClassifierConfig.for_dim(orth.dim, steps=15),
                             n_query_per_class=3, episodes=50, seed=22)
            report = evaluate(orth, cfg, jobs=8)
            assert report.mean == 1.0, f"k={k_shot}: mean {report.mean}"
            assert report.ci95 == 0.0

        rand = random_dataset(10, 25, seed=23)
        cfg = EvalConfig(n_way=5, k_shot=1,
                         classifier=ClassifierConfig.for_dim(rand.dim, steps=0),
                         n_query_per_class=15, episodes=600, seed=24)
        report = evaluate(rand, cfg, jobs=8)
        assert abs(report.mean - 0.20) <= 0.04, f"chance-level mean {report.mean}"


def test_c7_numerical_stability():
    # class_logits stays finite and matches an extended-precision oracle to
    # 1e-9 relative for similarity magnitudes up to 1e4/tau.
    with criterion("7 numerical stability", 5):
        for instance, tau in enumerate([0.05, 0.1768, 1.0, 0.25] * 5):
            rng = np.random.default_rng(7000 + instance)
            n_way, k_shot, l_tokens, n_queries = 3, 2, 4, 2
            rows = n_way * k_shot * l_tokens
            values = rng.uniform(-1e4 / tau, 1e4 / tau,
                                 size=(rows, n_queries * l_tokens))
            tensor = SimilarityTensor(values,
                                      np.arange(rows) // (k_shot * l_tokens),
                                      np.arange(rows) // l_tokens, l_tokens)
            for q in range(n_queries):
                logits = class_logits(tensor, tau, q)
                assert np.all(np.isfinite(logits))
                for n in range(n_way):
                    block = values[n * k_shot * l_tokens:(n + 1) * k_shot * l_tokens,
                                   q * l_tokens:(q + 1) * l_tokens]
                    expected = oracle_logsumexp_mp(block.ravel(), tau)
                    assert logits[n] == pytest.approx(expected, rel=1e-9)


def test_c8_format_round_trips(tmp_path):
    with criterion("8 format round trips", 5):
        # Golden 20-byte header for a single 1x1x1 grid holding 1.0.
        golden = tmp_path / "golden.tok"
        write_tokens([TokenGrid(np.array([[1.0]], dtype=np.float32), 1, 1)], golden)
        data = golden.read_bytes()
        assert HEADER_SIZE == 20
        assert data[:20] == b"FTUR" + bytes([1, 0, 0, 0, 1, 0, 0, 0,
                                             1, 0, 1, 0, 1, 0, 1, 0])
        assert data[20:] == bytes([0x00, 0x00, 0x80, 0x3F])

        # Token files: write/read identity and write-twice byte equality.
        rng = np.random.default_rng(81)
        grids = [TokenGrid(rng.standard_normal((6, 5)), 2, 3, f"g{i}")
                 for i in range(4)]
        a, b = tmp_path / "a.tok", tmp_path / "b.tok"
        write_tokens(grids, a)
        write_tokens(grids, b)
        assert a.read_bytes() == b.read_bytes()
        for original, loaded in zip(grids, read_tokens(a)):
            assert original.tokens.tobytes() == loaded.tokens.tobytes()

        # Heatmap PGMs: same seed, two runs, identical bytes.
        episode = random_episode(2, 2, 3, 3, 4, seed=82)
        v = np.random.default_rng(83).standard_normal(episode.num_support_tokens)
        paths = []
        for run in range(2):
            path = tmp_path / f"map{run}.pgm"
            write_pgm(path, render_importance(v, episode, scale=2)[0].pixels)
            paths.append(path.read_bytes())
        assert paths[0] == paths[1]
        assert paths[0].startswith(b"P5\n6 6\n255\n")


def test_c9_parallel_determinism(tmp_path):
    # eval --jobs 1 and --jobs 8 produce the same EvalReport JSON (the wall
    # clock field is timing, not a result, and is excluded).
    with criterion("9 determinism under parallelism", 60):
        dataset = distractor_dataset(6, 12, seed=91)
        manifest = export_dataset(dataset, tmp_path / "ds")
        docs = {}
        for jobs in (1, 8):
            out = tmp_path / f"report_jobs{jobs}.json"
            code = cli.main(["eval", "--manifest", str(manifest),
                             "--n-way", "4", "--k-shot", "3", "--n-query", "3",
                             "--episodes", "20", "--steps", "5", "--seed", "92",
                             "--jobs", str(jobs), "--out", str(out)])
            assert code == 0
            doc = json.loads(out.read_text())
            doc.pop("wall_ms_per_episode")
            docs[jobs] = doc
        assert docs[1] == docs[8]
