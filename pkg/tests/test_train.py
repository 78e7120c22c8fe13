"""Episode sampling, gradients, optimization and evaluation."""

import math

import numpy as np
import pytest

from fewdesc import (
    DescriptorSet,
    Episode,
    EpisodePool,
    InvalidConfigError,
    PoolExhaustedError,
    SupportPool,
    ThresholdMlp,
    TrainConfig,
    evaluate,
    generate_synthetic_pool,
    learning_rate_at,
    loss_and_gradients,
    meta_train,
    sample_episode,
    select_top_k,
)
from fewdesc.harness.gradcheck import draw_check_case, finite_difference_gradients, gradient_errors
from fewdesc.harness.oracle import _episode_from_case, random_case


def small_pool(rng, classes=6, images=8, m=3, d=4):
    data = {
        f"c{i}": np.abs(rng.standard_normal((images, m, d))) + 0.05
        for i in range(classes)
    }
    return EpisodePool(data)


class TestConfig:
    def test_defaults_follow_protocol(self):
        cfg = TrainConfig()
        assert cfg.learning_rate == 1e-3
        assert cfg.lr_decay == 0.1 and cfg.lr_decay_every == 10
        assert cfg.epochs == 30
        assert (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps) == (0.9, 0.999, 1e-8)

    def test_validation(self):
        with pytest.raises(InvalidConfigError):
            TrainConfig(way=1)
        with pytest.raises(InvalidConfigError):
            TrainConfig(k_fraction=0.0)
        with pytest.raises(InvalidConfigError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(InvalidConfigError):
            TrainConfig(score_form="nope")
        with pytest.raises(InvalidConfigError):
            TrainConfig(epochs=0)


class TestSampling:
    def test_minimal_pool_yields_the_only_episode(self):
        rng = np.random.default_rng(0)
        pool = small_pool(rng, classes=2, images=3, m=2, d=3)
        cfg = TrainConfig(way=2, shot=2, queries=1)
        ep = sample_episode(pool, cfg, np.random.default_rng(1))
        assert ep.way == 2 and ep.shot == 2
        assert len(ep.query_sets) == 2
        # every image of the pool is used exactly once
        used = np.vstack([s.values for s in ep.support] + [q.values for q in ep.query_sets])
        everything = np.vstack([pool.classes[c].reshape(-1, 3) for c in pool.labels])
        assert used.shape == everything.shape
        assert {tuple(r) for r in used} == {tuple(r) for r in everything}

    def test_determinism(self):
        rng = np.random.default_rng(0)
        pool = small_pool(rng)
        cfg = TrainConfig(way=3, shot=2, queries=2)
        a = sample_episode(pool, cfg, np.random.default_rng(9))
        b = sample_episode(pool, cfg, np.random.default_rng(9))
        for sa, sb in zip(a.support, b.support):
            np.testing.assert_array_equal(sa.values, sb.values)
        assert a.query_labels == b.query_labels

    def test_class_frequencies(self):
        rng = np.random.default_rng(0)
        pool = small_pool(rng, classes=10, images=4, m=2, d=3)
        cfg = TrainConfig(way=5, shot=2, queries=1)
        draws = np.random.default_rng(123)
        counts = {label: 0 for label in pool.labels}
        for _ in range(1000):
            ep = sample_episode(pool, cfg, draws)
            # recover which pool classes were drawn by matching support rows
            for s in ep.support:
                row = tuple(s.values[0])
                for label in pool.labels:
                    if any(
                        np.array_equal(s.values[0], img[0])
                        for img in pool.classes[label]
                    ):
                        counts[label] += 1
                        break
        freqs = np.array([counts[label] / 1000 for label in pool.labels])
        np.testing.assert_allclose(freqs, 0.5, atol=0.05)

    def test_pool_exhausted(self):
        rng = np.random.default_rng(0)
        pool = small_pool(rng, classes=3, images=3)
        with pytest.raises(PoolExhaustedError):
            sample_episode(pool, TrainConfig(way=5, shot=2, queries=1), np.random.default_rng(0))
        with pytest.raises(PoolExhaustedError):
            sample_episode(pool, TrainConfig(way=3, shot=3, queries=1), np.random.default_rng(0))


def symmetric_episode(d=4, m=2, k=2, n=3, q=2):
    """Every class holds the same descriptors: posteriors must be uniform."""
    rng = np.random.default_rng(33)
    block = np.abs(rng.standard_normal((k * m, d))) + 0.1
    support = tuple(DescriptorSet(block, k, m) for _ in range(n))
    queries, labels = [], []
    for c in range(n):
        for _ in range(q):
            queries.append(DescriptorSet(np.abs(rng.standard_normal((m, d))) + 0.1, 1, m))
            labels.append(c)
    return Episode(n, k, support, tuple(queries), tuple(labels))


class TestGradients:
    def test_symmetric_episode_loss_is_log_n(self):
        ep = symmetric_episode()
        sel = select_top_k(SupportPool.from_episode(ep, "raw"), 0.5)
        mlp = ThresholdMlp.zeros(4)
        cfg = TrainConfig(way=3, shot=2, queries=2)
        loss, grads = loss_and_gradients(ep, sel, mlp, cfg)
        assert loss == pytest.approx(math.log(3), abs=1e-9)
        assert np.all(np.isfinite(grads.b2))
        assert grads.max_abs() < 1e-12

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(20):
            episode, sel, mlp, cfg = draw_check_case(rng)
            _, analytic = loss_and_gradients(episode, sel, mlp, cfg)
            numeric = finite_difference_gradients(episode, sel, mlp, cfg, step=1e-5)
            worst = max(worst, gradient_errors(analytic, numeric))
        assert worst < 1e-4

    def test_multiple_inits_on_one_episode(self):
        from fewdesc.query import _forward

        rng = np.random.default_rng(77)
        episode, sel, base_mlp, cfg = draw_check_case(rng)
        checked = 0
        while checked < 3:
            mlp = ThresholdMlp.init(episode.dim, base_mlp.hidden_dim, rng)
            fwd, _ = _forward(episode, sel, mlp, cfg.sharpness, cfg.score_form)
            if float(np.min(np.abs(fwd.z))) <= 2e-4:
                continue  # too close to the activation kink to difference
            _, analytic = loss_and_gradients(episode, sel, mlp, cfg)
            numeric = finite_difference_gradients(episode, sel, mlp, cfg)
            assert gradient_errors(analytic, numeric) < 1e-4
            checked += 1

    def test_flat_weights_map_kills_all_gradients(self):
        # sharpness 0 makes every weight 0.5 regardless of the threshold, so
        # under weighted-sim the loss cannot depend on the network at all
        rng = np.random.default_rng(5)
        case = random_case(rng)
        episode = _episode_from_case(case)
        mlp = ThresholdMlp.init(case["d"], case["hidden"], rng)
        cfg = TrainConfig(
            way=case["n"], shot=case["k"], queries=case["q"],
            k_fraction=case["k_fraction"], sharpness=0.0,
            score_form="weighted-sim", mode=case["mode"],
        )
        sel = select_top_k(SupportPool.from_episode(episode, cfg.mode), cfg.k_fraction)
        _, grads = loss_and_gradients(episode, sel, mlp, cfg)
        assert grads.max_abs() == 0.0


class TestSchedule:
    def test_decay_every_ten_epochs(self):
        cfg = TrainConfig(learning_rate=1e-3)
        for epoch in range(1, 31):
            expected = 1e-3 * 0.1 ** ((epoch - 1) // 10)
            assert learning_rate_at(cfg, epoch) == pytest.approx(expected, rel=1e-15)
        assert learning_rate_at(cfg, 10) == pytest.approx(1e-3)
        assert learning_rate_at(cfg, 11) == pytest.approx(1e-4)
        assert learning_rate_at(cfg, 30) == pytest.approx(1e-5)


class TestMetaTrain:
    def test_zero_episodes_returns_initial_parameters(self):
        rng = np.random.default_rng(0)
        pool = small_pool(rng)
        cfg = TrainConfig(way=3, shot=2, queries=2, epochs=3, episodes_per_epoch=0, seed=4)
        mlp, log = meta_train(pool, cfg)
        expected = ThresholdMlp.init(pool.dim, pool.dim, np.random.default_rng(4))
        np.testing.assert_array_equal(mlp.w1, expected.w1)
        np.testing.assert_array_equal(mlp.b2, expected.b2)
        assert len(log) == 3

    def test_loss_decreases_on_noisy_pool(self):
        pool = generate_synthetic_pool(8, 14, dim=12, per_image=8, background_ratio=0.5,
                                       noise=0.7, seed=3)
        cfg = TrainConfig(way=4, shot=3, queries=5, epochs=6, episodes_per_epoch=60, seed=1)
        _, log = meta_train(pool, cfg)
        first = float(log[0].split("\t")[1])
        last = float(log[-1].split("\t")[1])
        assert last < first

    def test_log_line_format(self):
        rng = np.random.default_rng(0)
        pool = small_pool(rng)
        cfg = TrainConfig(way=3, shot=2, queries=2, epochs=2, episodes_per_epoch=3, seed=0)
        _, log = meta_train(pool, cfg)
        assert len(log) == 2
        for i, line in enumerate(log, start=1):
            epoch, loss, lr, secs = line.split("\t")
            assert int(epoch) == i
            assert float(loss) >= 0.0
            assert float(lr) == pytest.approx(1e-3)
            assert float(secs) >= 0.0

    def test_seed_determinism_bitwise(self):
        rng = np.random.default_rng(0)
        pool = small_pool(rng)
        cfg = TrainConfig(way=3, shot=2, queries=2, epochs=2, episodes_per_epoch=10, seed=11)
        a, _ = meta_train(pool, cfg)
        b, _ = meta_train(pool, cfg)
        for name in ("w1", "b1", "w2", "b2"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


class TestEvaluate:
    def test_chance_level_on_noise(self):
        pool = generate_synthetic_pool(8, 25, dim=12, per_image=10, background_ratio=0.9,
                                       noise=8.0, seed=2)
        cfg = TrainConfig(way=5, shot=3, queries=5, seed=0)
        mlp = ThresholdMlp.init(pool.dim, rng=np.random.default_rng(0))
        acc, half = evaluate(pool, mlp, cfg, episodes=400)
        assert half == 0.0
        assert acc == pytest.approx(0.2, abs=0.04)

    def test_separable_pool_is_perfect(self):
        pool = generate_synthetic_pool(6, 10, dim=8, per_image=4, background_ratio=0.0,
                                       noise=0.0, seed=1)
        cfg = TrainConfig(way=5, shot=2, queries=3, k_fraction=0.5, seed=0)
        mlp = ThresholdMlp.init(pool.dim, rng=np.random.default_rng(1))
        acc, _ = evaluate(pool, mlp, cfg, episodes=50)
        assert acc == 1.0

    def test_repeats_mean_is_exact_average(self):
        rng = np.random.default_rng(0)
        pool = generate_synthetic_pool(7, 12, dim=10, per_image=6, background_ratio=0.4,
                                       noise=1.2, seed=9)
        cfg = TrainConfig(way=3, shot=2, queries=4, seed=5)
        mlp = ThresholdMlp.init(pool.dim, rng=rng)
        mean, half = evaluate(pool, mlp, cfg, episodes=40, repeats=5)
        # recompute what evaluate saw, repeat by repeat
        means = []
        for rep in range(5):
            rng_rep = np.random.default_rng([cfg.seed, rep])
            accs = []
            for _ in range(40):
                ep = sample_episode(pool, cfg, rng_rep)
                sel = select_top_k(SupportPool.from_episode(ep, cfg.mode), cfg.k_fraction)
                from fewdesc import episode_scores

                ev = episode_scores(ep, sel, mlp, cfg.sharpness, cfg.score_form)
                accs.append(float(np.mean(ev.posteriors.argmax(axis=1) == np.array(ep.query_labels))))
            means.append(float(np.mean(accs)))
        assert mean == pytest.approx(float(np.mean(means)), abs=0.0)
        expected_half = 1.96 * float(np.std(means, ddof=1)) / math.sqrt(5)
        assert half == pytest.approx(expected_half, abs=1e-12)

    def test_never_mutates_parameters(self):
        rng = np.random.default_rng(0)
        pool = small_pool(rng)
        cfg = TrainConfig(way=3, shot=2, queries=2, seed=1)
        mlp = ThresholdMlp.init(pool.dim, rng=np.random.default_rng(2))
        before = {n: getattr(mlp, n).copy() for n in ("w1", "b1", "w2", "b2")}
        evaluate(pool, mlp, cfg, episodes=5)
        for name, value in before.items():
            np.testing.assert_array_equal(getattr(mlp, name), value)

    def test_argument_validation(self):
        rng = np.random.default_rng(0)
        pool = small_pool(rng)
        mlp = ThresholdMlp.init(pool.dim, rng=rng)
        with pytest.raises(InvalidConfigError):
            evaluate(pool, mlp, TrainConfig(way=3, shot=2, queries=2), episodes=0)
