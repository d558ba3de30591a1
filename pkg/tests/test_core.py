import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import cos, neg_entropy
from stimtm.core import (
    ConfigError,
    LayerPlan,
    MergeSchedule,
    ModelConfig,
    Provenance,
    TokenGrid,
    cosine_similarity,
    minmax_scale,
    negative_entropy,
    negative_entropy_rows,
    pairwise_cosine,
    rowwise_cosine,
    softmax_row,
)

finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)
vec = st.integers(1, 8).flatmap(lambda n: st.tuples(arrays(np.float64, n, elements=finite),
                                                    arrays(np.float64, n, elements=finite)))


def distribution(n_max=8):
    return arrays(np.float64, st.integers(1, n_max), elements=st.floats(0, 10)).filter(
        lambda v: v.sum() > 1e-3).map(lambda v: v / v.sum())


class TestCosineSimilarity:
    def test_identical(self):
        assert cosine_similarity([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        assert cosine_similarity([1, 0], [0, 1]) == 0.0

    def test_diagonal(self):
        got = cosine_similarity([1, 0], [1, 1])
        assert got == pytest.approx(math.sqrt(0.5), abs=1e-9)
        assert got == pytest.approx(0.70710678, abs=5e-9)  # literal carries 8 decimals

    def test_zero_norm_is_zero(self):
        assert cosine_similarity([0, 0], [1, 2]) == 0.0
        assert cosine_similarity([0, 0], [0, 0]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            cosine_similarity([1, 2], [1, 2, 3])

    @given(vec, st.floats(0.01, 100), st.floats(0.01, 100))
    def test_symmetric_and_scale_invariant(self, ab, lam, mu):
        a, b = ab
        base = cosine_similarity(a, b)
        assert -1.0 <= base <= 1.0
        assert cosine_similarity(b, a) == pytest.approx(base, abs=1e-9)
        assert cosine_similarity(lam * a, mu * b) == pytest.approx(base, abs=1e-9)

    @given(vec)
    def test_matches_oracle(self, ab):
        a, b = ab
        assert cosine_similarity(a, b) == pytest.approx(cos(a, b), abs=1e-9)

    def test_batched_kernels_agree(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(5, 7)), rng.normal(size=(4, 7))
        a[2] = 0.0
        expected = np.array([[cos(x, y) for y in b] for x in a])
        np.testing.assert_allclose(pairwise_cosine(a, b), expected, atol=1e-12)
        np.testing.assert_allclose(rowwise_cosine(a[:4], b), np.diag(expected), atol=1e-12)


class TestSoftmaxRow:
    def test_uniform(self):
        np.testing.assert_allclose(softmax_row([0, 0, 0, 0]), [0.25] * 4, atol=1e-15)

    def test_large_logits_stable(self):
        np.testing.assert_allclose(softmax_row([1000, 0]), [1.0, 0.0], atol=1e-12)

    def test_ln2(self):
        np.testing.assert_allclose(softmax_row([math.log(2), 0]), [2 / 3, 1 / 3], atol=1e-9)

    def test_empty(self):
        with pytest.raises(ValueError, match="empty attention row"):
            softmax_row([])

    @given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-500, 500)))
    def test_is_distribution(self, logits):
        p = softmax_row(logits)
        assert np.all(p >= 0)
        assert p.sum() == pytest.approx(1.0, abs=1e-9)


class TestNegativeEntropy:
    @pytest.mark.parametrize("n", [1, 2, 5, 17])
    def test_one_hot(self, n):
        p = np.zeros(n)
        p[n // 2] = 1.0
        assert negative_entropy(p) == 0.0

    def test_uniform4(self):
        assert negative_entropy([0.25] * 4) == pytest.approx(-1.3862944, abs=1e-7)
        assert negative_entropy([0.25] * 4) == pytest.approx(-math.log(4), abs=1e-12)

    def test_half_half(self):
        assert negative_entropy([0.5, 0.5, 0, 0]) == pytest.approx(-0.6931472, abs=1e-7)

    def test_negative_entry(self):
        with pytest.raises(ValueError, match="invalid distribution"):
            negative_entropy([1.5, -0.5])

    @given(distribution(), st.randoms(use_true_random=False))
    def test_bounded_and_permutation_invariant(self, p, rnd):
        h = negative_entropy(p)
        assert -math.log(len(p)) - 1e-9 <= h <= 1e-12
        perm = list(range(len(p)))
        rnd.shuffle(perm)
        assert negative_entropy(p[perm]) == pytest.approx(h, abs=1e-12)
        assert h == pytest.approx(neg_entropy(p), abs=1e-9)

    def test_rows_match_scalar(self):
        rng = np.random.default_rng(0)
        p = rng.dirichlet(np.ones(6), size=(3, 4))
        rows = negative_entropy_rows(p)
        for idx in np.ndindex(3, 4):
            assert rows[idx] == pytest.approx(negative_entropy(p[idx]), abs=1e-12)


class TestMinmaxScale:
    def test_affine(self):
        np.testing.assert_allclose(minmax_scale([-1.0, -0.5, 0.0]), [0.0, 0.5, 1.0], atol=1e-15)

    def test_degenerate(self):
        np.testing.assert_array_equal(minmax_scale([3.3, 3.3, 3.3]), [0.5, 0.5, 0.5])

    def test_thirds(self):
        np.testing.assert_allclose(minmax_scale([0, 1, 3]), [0, 1 / 3, 1], atol=1e-15)

    @given(arrays(np.float64, st.integers(1, 10), elements=st.floats(-1e3, 1e3)))
    def test_preserves_extremes(self, v):
        s = minmax_scale(v)
        assert np.all((s >= 0) & (s <= 1))
        if v.max() - v.min() > 1e-12:
            np.testing.assert_array_equal(s == 1.0, v == v.max())
            np.testing.assert_array_equal(s == 0.0, v == v.min())
            assert np.argmax(s) == np.argmax(v) and np.argmin(s) == np.argmin(v)


class TestModelConfig:
    def test_default_config(self):
        cfg = ModelConfig().validate()
        assert (cfg.n_temporal, cfg.n_spatial, cfg.n_tokens) == (16, 196, 3136)

    def test_tubelet(self):
        cfg = ModelConfig(frames=8, frame_height=32, frame_width=32, patch_size=16, tubelet=2)
        assert (cfg.n_temporal, cfg.n_spatial) == (4, 4)

    @pytest.mark.parametrize("kwargs,constraint", [
        ({"frame_height": 100}, "H mod P == 0"),
        ({"frame_width": 100}, "W mod P == 0"),
        ({"tubelet": 3}, "T mod t == 0"),
        ({"channels": 64, "heads": 5}, "C not divisible by heads"),
        ({"layers": 0}, "layers must be positive"),
    ])
    def test_named_constraints(self, kwargs, constraint):
        with pytest.raises(ConfigError) as err:
            ModelConfig(**kwargs).validate()
        assert err.value.constraint == constraint


class TestTokenGrid:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            TokenGrid(np.array([[[np.nan]]]))

    def test_rejects_bad_rank(self):
        with pytest.raises(ValueError):
            TokenGrid(np.zeros((2, 3)))

    def test_cls_width(self):
        with pytest.raises(ValueError):
            TokenGrid(np.zeros((2, 3, 4)), np.zeros(3))


def random_merges(rng, n_t, n_s, steps):
    prov = Provenance.identity(n_t, n_s)
    for _ in range(steps):
        if prov.n_t > 1 and rng.random() < 0.5:
            prov = prov.merge_temporal(rng.integers(0, prov.n_t - 1, size=prov.n_s))
        elif prov.n_s > 1:
            new = prov.n_s - 1
            pos_map = np.empty((prov.n_t, prov.n_s), dtype=np.int64)
            for t in range(prov.n_t):
                src, dst = rng.choice(prov.n_s, size=2, replace=False)
                keep = np.delete(np.arange(prov.n_s), src)
                m = np.empty(prov.n_s, dtype=np.int64)
                m[keep] = np.arange(new)
                m[src] = m[dst]
                pos_map[t] = m
            prov = prov.merge_spatial(pos_map, new)
    return prov


class TestProvenance:
    def test_identity(self):
        p = Provenance.identity(3, 4)
        assert p.is_identity()
        np.testing.assert_array_equal(p.labels, np.arange(12).reshape(3, 4))
        np.testing.assert_array_equal(p.sizes(), np.ones((3, 4)))

    def test_temporal_merge(self):
        p = Provenance.identity(4, 2).merge_temporal(np.array([1, 0]))
        assert p.temporal_groups(0) == [[0], [1, 2], [3]]
        assert p.temporal_groups(1) == [[0, 1], [2], [3]]
        np.testing.assert_array_equal(p.sizes(), [[1, 2], [2, 1], [1, 1]])

    @pytest.mark.parametrize("seed", range(25))
    def test_partition_exhaustive_accounting(self, seed):
        rng = np.random.default_rng(seed)
        n_t, n_s = int(rng.integers(2, 7)), int(rng.integers(2, 7))
        prov = random_merges(rng, n_t, n_s, int(rng.integers(0, 8))).check()
        owners = {}
        for tau in range(prov.n_t):
            for sigma in range(prov.n_s):
                cells = prov.groups(tau, sigma)
                assert cells, "empty group"
                assert len(cells) == prov.sizes()[tau, sigma]
                for c in cells:
                    assert c not in owners
                    owners[c] = (tau, sigma)
        assert len(owners) == n_t * n_s
        assert prov.sizes().sum() == n_t * n_s

    def test_check_detects_empty_live_cell(self):
        p = Provenance(np.zeros((2, 2), dtype=np.int64), np.array([[0, 1], [0, 1]]), 2, 2)
        with pytest.raises(ValueError, match="partition"):
            p.check()


class TestMergeSchedule:
    def test_dims_are_cumulative(self):
        s = MergeSchedule.from_blocks(12, range(1, 7), range(7, 13), r_t=1, r_s=12)
        dims = s.dims(16, 196)
        assert dims[5] == (10, 196)
        assert dims[-1] == (10, 196 - 72)

    def test_round_trip(self):
        s = MergeSchedule.from_blocks(4, [1, 2], [2, 4], r_t=2, r_s=3, m=3, k=2)
        assert MergeSchedule.from_list(s.to_list()) == s

    def test_hierarchical_k(self):
        plan = LayerPlan("spatial", 0, 1)
        assert [plan.segments(i, 12) for i in (1, 6, 7, 12)] == [1, 1, 2, 2]

    @pytest.mark.parametrize("schedule,constraint", [
        (MergeSchedule.from_blocks(3, [1, 2, 3], [], r_t=2), "cumulative temporal removals < T0"),
        (MergeSchedule.from_blocks(2, [], [1, 2], r_s=3, m=1), "candidate pool too small"),
        (MergeSchedule.from_blocks(2, [], [1], r_s=4, m=3), "m*R_S <= current n_s"),
        (MergeSchedule.from_blocks(2, [], [1], r_s=2, m=0), "m >= 1"),
        (MergeSchedule((LayerPlan("sideways"),)), "unknown merge kind"),
        (MergeSchedule((LayerPlan("none", r_t=1),)), "R_T set on a layer without temporal merging"),
        (MergeSchedule.none(3), "schedule length == layers"),
    ])
    def test_named_constraints(self, schedule, constraint):
        with pytest.raises(ConfigError) as err:
            n_layers = 2 if constraint == "schedule length == layers" else len(schedule)
            schedule.validate(5, 10, n_layers)
        assert err.value.constraint == constraint

    def test_spatial_removals_bounded(self):
        s = MergeSchedule.from_blocks(3, [], [1, 2, 3], r_s=2, m=2)
        with pytest.raises(ConfigError):
            s.validate(2, 5, 3)
