"""Contrastive scoring and top-K selection."""

import math

import numpy as np
import pytest

from fewdesc import (
    DegenerateClassError,
    DescriptorSet,
    Episode,
    InvalidConfigError,
    InvalidInputError,
    SupportPool,
    cds_components,
    contrastive_scores,
    inter_similarity,
    intra_similarity,
    select_top_k,
    top_k_count,
)

SIGMOID_OF_ONE = 0.7310585786300049  # 1 / (1 + e^-1)


# --- nested-loop reference, no shared code with the library ----------------

def ref_cos(a, b):
    num = sum(x * y for x, y in zip(a, b))
    den = math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b))
    return min(1.0, max(-1.0, num / den))


def ref_softmax(values):
    top = max(values)
    exps = [math.exp(v - top) for v in values]
    s = sum(exps)
    return [e / s for e in exps]


def ref_cds(pools):
    result = []
    for c, pool in enumerate(pools):
        others = [v for cc, p in enumerate(pools) if cc != c for v in p]
        intra = []
        inter = []
        for i, desc in enumerate(pool):
            intra.append(
                sum(ref_cos(desc, o) for j, o in enumerate(pool) if j != i) / (len(pool) - 1)
            )
            inter.append(sum(ref_cos(desc, o) for o in others) / len(others))
        di, de = ref_softmax(intra), ref_softmax(inter)
        result.append({
            "intra": intra,
            "inter": inter,
            "cds": [1.0 / (1.0 + math.exp(-(a / b))) for a, b in zip(di, de)],
        })
    return result


def ref_select(cds_values, k):
    keep = max(1, int(math.floor(k * len(cds_values) + 0.5)))
    return sorted(range(len(cds_values)), key=lambda i: (-cds_values[i], i))[:keep]


def random_pool(rng, max_classes=5, max_size=30, max_dim=8):
    n = int(rng.integers(2, max_classes + 1))
    d = int(rng.integers(2, max_dim + 1))
    sizes = rng.integers(2, max_size + 1, size=n)
    return SupportPool(tuple(rng.standard_normal((int(p), d)) for p in sizes))


# --- similarities -----------------------------------------------------------

class TestSimilarities:
    def test_intra_identical_descriptors(self):
        pool = SupportPool((np.ones((3, 2)), np.eye(2)))
        for i in range(3):
            assert intra_similarity(0, i, pool) == 1.0

    def test_intra_orthogonal_pair(self):
        pool = SupportPool((np.eye(2), np.ones((2, 2))))
        assert intra_similarity(0, 0, pool) == 0.0
        assert intra_similarity(0, 1, pool) == 0.0

    def test_intra_hand_value(self):
        pool = SupportPool((np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]), np.eye(2)))
        expected = (ref_cos([1, 1], [1, 0]) + ref_cos([1, 1], [0, 1])) / 2
        assert intra_similarity(0, 1, pool) == pytest.approx(expected, abs=1e-15)
        assert expected == pytest.approx(0.7071067811865476, abs=1e-12)

    def test_intra_single_descriptor_class(self):
        pool = SupportPool((np.array([[1.0, 0.0]]), np.eye(2)))
        with pytest.raises(DegenerateClassError):
            intra_similarity(0, 0, pool)

    def test_inter_shared_value(self):
        pool = SupportPool((np.ones((2, 2)), np.ones((3, 2)) * 2.0))
        assert inter_similarity(0, 0, pool) == 1.0

    def test_inter_orthogonal(self):
        pool = SupportPool((np.array([[1.0, 0.0], [2.0, 0.0]]), np.array([[0.0, 1.0], [0.0, 3.0]])))
        assert inter_similarity(0, 0, pool) == 0.0

    def test_inter_hand_value(self):
        pool = SupportPool((np.array([[1.0, 1.0], [1.0, 1.0]]), np.array([[1.0, 0.0], [0.0, 1.0]])))
        assert inter_similarity(0, 0, pool) == pytest.approx(0.7071067811865476, abs=1e-12)

    def test_index_validation(self):
        pool = SupportPool((np.eye(2), np.eye(2)))
        with pytest.raises(InvalidInputError):
            intra_similarity(0, 5, pool)
        with pytest.raises(InvalidInputError):
            inter_similarity(2, 0, pool)


# --- contrastive scores -----------------------------------------------------

class TestContrastiveScores:
    def test_uniform_pool_gives_sigmoid_one(self):
        # equal intra scores and equal inter scores per class: both softmaxes
        # uniform, ratio 1
        pool = SupportPool((np.ones((4, 3)), np.ones((4, 3)) * 2.0))
        for scores in contrastive_scores(pool):
            np.testing.assert_allclose(scores, SIGMOID_OF_ONE, atol=1e-12)

    def test_monotone_in_intra_against_inter(self):
        # class 0: descriptor 0 aligned with its class, descriptor 1 aligned
        # with the other class; the first must score strictly higher
        class0 = np.array([[1.0, 0.0, 0.0], [0.0, 0.9, 0.1], [1.0, 0.1, 0.0], [0.9, 0.0, 0.1]])
        class1 = np.array([[0.0, 1.0, 0.0], [0.0, 1.0, 0.1], [0.1, 1.0, 0.0]])
        pool = SupportPool((class0, class1))
        scores = contrastive_scores(pool)[0]
        assert scores[0] > scores[1]

    def test_range_open_half_to_one(self):
        rng = np.random.default_rng(23)
        for _ in range(25):
            pool = random_pool(rng)
            for scores in contrastive_scores(pool):
                assert np.all(scores > 0.5)
                assert np.all(scores < 1.0)

    def test_matches_reference_on_seeded_pools(self):
        rng = np.random.default_rng(99)
        for _ in range(100):
            pool = random_pool(rng)
            comps = cds_components(pool)
            expected = ref_cds([blk.tolist() for blk in pool.classes])
            for c in range(pool.way):
                np.testing.assert_allclose(comps.intra[c], expected[c]["intra"], atol=1e-12)
                np.testing.assert_allclose(comps.inter[c], expected[c]["inter"], atol=1e-12)
                np.testing.assert_allclose(comps.cds[c], expected[c]["cds"], atol=1e-12)

    def test_batched_matches_per_descriptor_ops(self):
        rng = np.random.default_rng(5)
        pool = random_pool(rng)
        comps = cds_components(pool)
        for c in range(pool.way):
            for i in range(pool.classes[c].shape[0]):
                assert comps.intra[c][i] == pytest.approx(intra_similarity(c, i, pool), abs=1e-13)
                assert comps.inter[c][i] == pytest.approx(inter_similarity(c, i, pool), abs=1e-13)

    def test_single_descriptor_class_rejected(self):
        pool = SupportPool((np.array([[1.0, 0.0]]), np.eye(2)))
        with pytest.raises(DegenerateClassError):
            contrastive_scores(pool)


# --- selection --------------------------------------------------------------

class TestSelection:
    def test_full_selection(self):
        rng = np.random.default_rng(1)
        pool = random_pool(rng)
        sel = select_top_k(pool, 1.0)
        for c in range(pool.way):
            assert sorted(sel.indices[c].tolist()) == list(range(pool.classes[c].shape[0]))
            assert np.all(np.diff(sel.cds_values[c]) <= 0)

    def test_conv4_geometry_two_percent(self):
        # 19x19 feature map, keep 2 percent: 7 descriptors
        assert top_k_count(0.02, 361) == 7

    def test_count_guard_and_rounding(self):
        assert top_k_count(0.01, 10) == 1  # floor would give 0
        assert top_k_count(0.02, 125) == 3  # 2.5 rounds away from zero
        assert top_k_count(1.0, 8) == 8

    def test_count_grid_property(self):
        rng = np.random.default_rng(8)
        for k in (0.01, 0.02, 0.05, 0.1, 0.25, 0.3, 1.0):
            for _ in range(20):
                size = int(rng.integers(1, 400))
                count = top_k_count(k, size)
                assert count == max(1, int(math.floor(k * size + 0.5)))
                assert 1 <= count <= size

    def test_invalid_fraction(self):
        rng = np.random.default_rng(2)
        pool = random_pool(rng)
        for bad in (0.0, -0.5, 1.5):
            with pytest.raises(InvalidConfigError):
                select_top_k(pool, bad)

    def test_ties_break_on_lower_index(self):
        # identical descriptors: identical scores, selection must prefer the
        # earliest indices; 0.5 * 5 rounds away from zero to 3
        pool = SupportPool((np.ones((5, 2)), np.eye(2)))
        sel = select_top_k(pool, 0.5)
        assert sel.indices[0].tolist() == [0, 1, 2]

    def test_matches_reference_selection(self):
        rng = np.random.default_rng(55)
        for _ in range(100):
            pool = random_pool(rng)
            k = float(rng.uniform(0.05, 1.0))
            sel = select_top_k(pool, k)
            expected = ref_cds([blk.tolist() for blk in pool.classes])
            for c in range(pool.way):
                assert sel.indices[c].tolist() == ref_select(expected[c]["cds"], k)
                np.testing.assert_array_equal(sel.descriptors[c], pool.classes[c][sel.indices[c]])


# --- invariants -------------------------------------------------------------

class TestInvariants:
    def test_scale_invariance_power_of_two_bitwise(self):
        rng = np.random.default_rng(77)
        pool = random_pool(rng)
        for s in (0.25, 2.0, 64.0):
            scaled = SupportPool(tuple(s * blk for blk in pool.classes))
            a, b = cds_components(pool), cds_components(scaled)
            for c in range(pool.way):
                np.testing.assert_array_equal(a.cds[c], b.cds[c])
                np.testing.assert_array_equal(a.intra[c], b.intra[c])
            sel_a, sel_b = select_top_k(pool, 0.4), select_top_k(scaled, 0.4)
            for c in range(pool.way):
                np.testing.assert_array_equal(sel_a.indices[c], sel_b.indices[c])

    def test_scale_invariance_general_scalar(self):
        rng = np.random.default_rng(78)
        pool = random_pool(rng)
        for s in (3.0, 0.7, 11.3):
            scaled = SupportPool(tuple(s * blk for blk in pool.classes))
            a, b = cds_components(pool), cds_components(scaled)
            for c in range(pool.way):
                np.testing.assert_allclose(a.cds[c], b.cds[c], atol=1e-12)
            sel_a, sel_b = select_top_k(pool, 0.4), select_top_k(scaled, 0.4)
            for c in range(pool.way):
                np.testing.assert_array_equal(sel_a.indices[c], sel_b.indices[c])

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(79)
        pool = random_pool(rng)
        perm = rng.permutation(pool.classes[0].shape[0])
        shuffled = SupportPool((pool.classes[0][perm],) + pool.classes[1:])
        orig = contrastive_scores(pool)
        out = contrastive_scores(shuffled)
        np.testing.assert_allclose(out[0], orig[0][perm], atol=1e-12)
        for c in range(1, pool.way):
            np.testing.assert_allclose(out[c], orig[c], atol=1e-12)
        k = 0.3
        sel_orig = select_top_k(pool, k)
        sel_shuf = select_top_k(shuffled, k)
        # same descriptors selected, independent of ordering
        assert sorted(perm[sel_shuf.indices[0]].tolist()) == sorted(sel_orig.indices[0].tolist())

    def test_pool_validation(self):
        with pytest.raises(InvalidInputError):
            SupportPool((np.eye(2),))  # single class
        with pytest.raises(InvalidInputError):
            SupportPool((np.eye(2), np.eye(3)))  # mixed dims
        with pytest.raises(InvalidConfigError):
            SupportPool((np.eye(2), np.eye(2)), mode="other")

    def test_from_episode_modes(self):
        rng = np.random.default_rng(4)
        support = tuple(DescriptorSet(rng.standard_normal((6, 3)), 2, 3) for _ in range(2))
        queries = (DescriptorSet(rng.standard_normal((3, 3)), 1, 3),)
        ep = Episode(2, 2, support, queries, (0,))
        raw = SupportPool.from_episode(ep, "raw")
        assert raw.sizes() == (6, 6)
        mean = SupportPool.from_episode(ep, "class-mean")
        assert mean.sizes() == (3, 3)
        expected = support[0].values.reshape(2, 3, 3).mean(axis=0)
        np.testing.assert_allclose(mean.classes[0], expected, atol=0)
