"""Acceptance suite: one test per criterion, one printed pass/fail line each.

Run with `pytest tests/test_acceptance.py -s` to see the lines as they
complete. The mode-comparison criteria (07, 08) share one set of training
runs at the reference configuration: N=256, K=4, d=32, latent 8, noise 0.1,
40 epochs, 5 seeds, with the pilot-pinned optimization settings (adam,
lr 1e-2, batch 64, tau 0.07, checkpoint every 5 epochs).
"""

import contextlib
import json
import time
from dataclasses import replace
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from helpers import random_corpus, uniform_corpus

from ccrk.cli import main as cli_main
from ccrk.corpus import SyntheticConfig, generate_synthetic, load_corpus, save_corpus
from ccrk.geometry import (
    DEFAULT_ANGLE_GRID,
    LEMMA_PRACTICAL_VS_CORRECT,
    LEMMA_SINGLE_TARGET_BIAS,
    TripleConfig,
    lemma_sweep,
    omega_angle,
    summarize_sweep,
    theta_angle,
)
from ccrk.gradcheck import run_gradcheck
from ccrk.losses import LossConfig, cl_1to1, kcl_i2t, kcl_t2i
from ccrk.metrics import (
    DIRECTION_IR,
    DIRECTION_TR,
    RankTable,
    RerankConfig,
    compute_ranks,
    mrv,
    oracle_scorer,
    recall_at_k,
    rerank_top_n,
)
from ccrk.mining import (
    MiningDistribution,
    hard_negative_image_dist,
    hard_negative_text_dist,
    hard_positive_dist,
    sample,
)
from ccrk.numerics import Rng, normalize_rows
from ccrk.trainer import TrainConfig, compare_modes

DOCS = Path(__file__).resolve().parent.parent / "docs"

# Reference comparison configuration (criteria 07 and 08). The learning
# rate comes from the pilot: 1e-2 drives both modes above 0.9 mean R@1 at
# this scale; the library default of 1e-3 underfits within 40 epochs.
REFERENCE_CORPUS = SyntheticConfig(n_instances=256, n_languages=4, dim=32,
                                   latent_dim=8, noise_sigma=0.1, seed=0)
REFERENCE_TRAIN = TrainConfig(epochs=40, batch_size=64, learning_rate=1e-2,
                              optimizer="adam", tau=0.07, seed=0, eval_every=5,
                              loss_mode="one_to_one")
REFERENCE_SEEDS = 5
RECALL_TARGET = 0.9  # pinned via pilot: observed ~0.98 (one_to_k), ~0.96 (one_to_one)


@contextlib.contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {name}: FAIL")
        raise
    print(f"ACCEPTANCE {name}: PASS")


@pytest.fixture(scope="module")
def comparison():
    cfg_one = REFERENCE_TRAIN
    cfg_k = replace(REFERENCE_TRAIN, loss_mode="one_to_k")
    start = time.perf_counter()
    report = compare_modes(cfg_one, cfg_k, REFERENCE_CORPUS, REFERENCE_SEEDS)
    return report, time.perf_counter() - start


def test_01_loss_uniform_logit_identities():
    with criterion("01 uniform-logit loss identities"):
        start = time.perf_counter()
        cfg = LossConfig()
        for n, k in ((2, 3), (5, 4), (7, 1)):
            c = uniform_corpus(n, k, 8)
            assert kcl_i2t(c, cfg).value == pytest.approx(np.log(n * k), abs=1e-9)
            assert kcl_t2i(c, cfg).value == pytest.approx(np.log(n), abs=1e-9)
        assert time.perf_counter() - start < 1.0


def test_02_single_language_reduction():
    with criterion("02 K=1 reduction to standard InfoNCE"):
        for seed in range(20):
            gen = np.random.default_rng(seed)
            n, d = int(gen.integers(2, 8)), int(gen.integers(3, 10))
            c = random_corpus(n, 1, d, seed=seed)
            tau = float(gen.choice([0.07, 0.5, 1.0]))
            rep_one = cl_1to1(c, LossConfig(tau=tau, mode="one_to_one"), Rng(seed))
            assert kcl_i2t(c, LossConfig(tau=tau)).value == rep_one.components["i2t"]
            assert kcl_t2i(c, LossConfig(tau=tau)).value == rep_one.components["t2i"]


def test_03_gradient_oracle():
    with criterion("03 analytic gradients vs finite differences"):
        start = time.perf_counter()
        results = run_gradcheck("all", trials=20, seed=0)
        assert max(results.values()) < 1e-4, results
        assert time.perf_counter() - start < 30.0


def test_04_rank_variance_oracle():
    with criterion("04 rank-variance brute-force oracle"):
        gen = np.random.default_rng(1)
        for _ in range(100):
            n, k = int(gen.integers(1, 9)), int(gen.integers(2, 6))
            ranks = gen.integers(1, 11, size=(n, k))
            table = RankTable(direction=DIRECTION_TR, ranks=ranks,
                              pool_sizes=[12] * k)
            brute = np.mean([
                (ranks[j, kk] - ranks[j].mean()) ** 2
                for j in range(n) for kk in range(k)
            ])
            assert mrv(table) == pytest.approx(brute, abs=1e-12)
        perfect = RankTable(direction=DIRECTION_IR,
                            ranks=np.ones((9, 4), dtype=np.int64),
                            pool_sizes=[9] * 4)
        assert np.all(recall_at_k(perfect, 1) == 1.0)
        assert mrv(perfect) == 0.0


def test_05_lemma_boundaries_and_monotone_sweeps():
    with criterion("05 angle boundaries and sweep monotonicity"):
        start = time.perf_counter()
        gen = np.random.default_rng(0)
        t_m, t_n = normalize_rows(gen.standard_normal((2, 16)))
        assert theta_angle(t_m.copy(), t_m, t_n) == 0.0
        i = normalize_rows(gen.standard_normal((1, 16)))[0]
        assert omega_angle(i, t_m, t_m.copy(), target="m") == 0.0

        for which in (LEMMA_PRACTICAL_VS_CORRECT, LEMMA_SINGLE_TARGET_BIAS):
            samples = lemma_sweep(TripleConfig(dim=16), which, 2000, Rng(7))
            points = summarize_sweep(samples, which, DEFAULT_ANGLE_GRID, 7)
            means = [p.mean for p in points]
            assert all(a >= b for a, b in zip(means, means[1:])), (which, means)
        assert time.perf_counter() - start < 20.0


def test_06_mining_distributions_valid():
    with criterion("06 mining distributions sum to 1 and match frequencies"):
        gen = np.random.default_rng(2)
        for _ in range(40):
            sims = gen.uniform(-1.0, 1.0, size=int(gen.integers(1, 6)))
            dist = hard_positive_dist(sims)
            assert np.all(dist.weights >= 0)
            assert abs(dist.weights.sum() - 1.0) <= 1e-12
        for seed in range(6):
            c = random_corpus(6, 3, 8, seed=seed)  # raw sims include negatives
            for j in range(c.n_instances):
                for dist in (hard_negative_image_dist(c, j),
                             hard_negative_text_dist(c, j)):
                    assert np.all(dist.weights >= 0)
                    assert abs(dist.weights.sum() - 1.0) <= 1e-12

        dist = MiningDistribution(np.array([0.25, 0.35, 0.40]), np.arange(3),
                                  "hard_positive_text")
        rng = Rng(42)
        counts = np.zeros(3)
        for _ in range(100_000):
            counts[sample(dist, rng)] += 1
        np.testing.assert_allclose(counts / 100_000, dist.weights, atol=0.01)


def test_07_mode_comparison_direction(comparison):
    with criterion("07 one_to_k beats one_to_one on rank variance"):
        report, elapsed = comparison
        assert elapsed < 300.0, f"comparison took {elapsed:.0f}s"
        mrv_k = report.mean_over_seeds("one_to_k", "final_mrv")
        mrv_one = report.mean_over_seeds("one_to_one", "final_mrv")
        gap_k = report.mean_over_seeds("one_to_k", "final_recall_gap")
        gap_one = report.mean_over_seeds("one_to_one", "final_recall_gap")
        r1_k = report.mean_over_seeds("one_to_k", "final_mean_r1")
        assert mrv_k < mrv_one, (mrv_k, mrv_one)
        assert gap_k <= gap_one, (gap_k, gap_one)
        assert r1_k > RECALL_TARGET, r1_k


def test_08_checkpoint_dominance(comparison):
    with criterion("08 one_to_k recall dominates at checkpoints past epoch 5"):
        report, _ = comparison
        rows = report.checkpoint_rows()
        seeds = sorted({r["seed"] for r in rows})
        dominant_seeds = 0
        for seed in seeds:
            ok = True
            epochs = sorted({r["epoch"] for r in rows
                             if r["seed"] == seed and r["epoch"] > 5})
            for epoch in epochs:
                r1 = {r["mode"]: r["mean_r1"] for r in rows
                      if r["seed"] == seed and r["epoch"] == epoch}
                if r1["one_to_k"] < r1["one_to_one"]:
                    ok = False
            dominant_seeds += ok
        assert dominant_seeds > len(seeds) // 2, f"{dominant_seeds}/{len(seeds)}"


def test_09_rerank_never_hurts_shortlisted_truth():
    with criterion("09 oracle re-ranking never lowers Recall@1"):
        cfg = SyntheticConfig(n_instances=200, n_languages=3, dim=24, latent_dim=6,
                              noise_sigma=0.5, seed=17)
        corpus, _ = generate_synthetic(cfg)
        for direction in (DIRECTION_TR, DIRECTION_IR):
            before = compute_ranks(corpus, direction)
            after = rerank_top_n(corpus, direction,
                                 RerankConfig(top_n=128, scorer=oracle_scorer()))
            assert before.ranks.max() > 1  # the corpus is noisy enough to matter
            assert np.all(after.ranks[before.ranks <= 128] == 1)
            assert recall_at_k(after, 1).mean() >= recall_at_k(before, 1).mean()


def test_10_format_round_trip_and_schema(tmp_path):
    with criterion("10 corpus round trips and metrics schema"):
        cfg = SyntheticConfig(n_instances=20, n_languages=3, dim=16, latent_dim=6,
                              noise_sigma=0.1, seed=23)
        corpus, _ = generate_synthetic(cfg)

        # binary: exact from the first on-disk representation onward
        save_corpus(corpus, tmp_path / "a.ccrk")
        c1 = load_corpus(tmp_path / "a.ccrk")
        save_corpus(c1, tmp_path / "b.ccrk")
        c2 = load_corpus(tmp_path / "b.ccrk")
        assert c2.equals(c1, atol=0.0)
        assert (tmp_path / "a.ccrk").read_bytes() == (tmp_path / "b.ccrk").read_bytes()

        save_corpus(corpus, tmp_path / "a.csv", format="csv")
        assert load_corpus(tmp_path / "a.csv", format="csv").equals(corpus, atol=1e-6)

        # eval output validates against the published schema
        gen_cfg = tmp_path / "gen.json"
        gen_cfg.write_text(json.dumps({"n_instances": 16, "n_languages": 2,
                                       "dim": 12, "latent_dim": 4,
                                       "noise_sigma": 0.0, "lift_spread": 0.0,
                                       "seed": 5}))
        assert cli_main(["gen", "--config", str(gen_cfg),
                         "--out", str(tmp_path / "c.ccrk")]) == 0
        assert cli_main(["eval", "--corpus", str(tmp_path / "c.ccrk"),
                         "--direction", "both",
                         "--out", str(tmp_path / "m.json")]) == 0
        payload = json.loads((tmp_path / "m.json").read_text())
        with open(DOCS / "metrics.schema.json") as fh:
            jsonschema.validate(payload, json.load(fh))
        assert payload["tr"]["mean_recall"]["r1"] == 1.0
        assert payload["tr"]["mrv"] == 0.0
