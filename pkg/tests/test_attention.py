"""Dictionary selection, merging, and the pre/post-attention pipelines."""

import math

import numpy as np
import pytest

import diablo.tensor as T
from diablo import attention
from diablo.attention import (
    DIMENSION_WISE,
    FEATURE_WISE,
    POST_ATTENTION,
    PRE_ATTENTION,
    AttentionTensor,
    Dictionary,
    baseline_forward,
    branch_head,
    diablo_forward,
    hard_assign,
    init_branch_head,
    init_dictionary,
    init_params,
    make_config,
    merge,
    select,
    select_dimension_wise,
    select_feature_wise,
)
from diablo.errors import ConfigError, ShapeError
from diablo.tensor import Tensor


def _random_map(rng, h=4, w=4, c=8):
    return Tensor(rng.standard_normal((h, w, c)))


class TestDictionary:
    def test_feature_wise_unit_norm_entries(self):
        d = init_dictionary(FEATURE_WISE, 8, 16, seed=0)
        assert d.entries.shape == (8, 16)
        np.testing.assert_allclose(np.linalg.norm(d.entries.values, axis=1), 1.0, atol=1e-9)

    def test_dimension_wise_shape(self):
        d = init_dictionary(DIMENSION_WISE, 4, 16, channels=8, seed=0)
        assert d.entries.shape == (4, 8, 16)
        np.testing.assert_allclose(np.linalg.norm(d.entries.values, axis=-1), 1.0, atol=1e-9)

    def test_deterministic(self):
        a = init_dictionary(FEATURE_WISE, 4, 8, seed=9)
        b = init_dictionary(FEATURE_WISE, 4, 8, seed=9)
        np.testing.assert_array_equal(a.entries.values, b.entries.values)

    def test_empty_dictionary_rejected(self):
        with pytest.raises(ValueError):
            init_dictionary(FEATURE_WISE, 0, 8)


class TestFeatureWiseSelection:
    def test_single_entry_gives_exact_ones(self):
        rng = np.random.default_rng(0)
        d = init_dictionary(FEATURE_WISE, 1, 8, seed=1)
        a = select_feature_wise(_random_map(rng), d, channels=8)
        np.testing.assert_array_equal(a.weights.values, np.ones((1, 4, 4, 8)))

    def test_equidistant_entries_give_uniform(self):
        # every entry identical: all cosines equal, softmax must be 1/N
        entry = np.array([1.0, 2.0, -1.0, 0.5])
        d = Dictionary(FEATURE_WISE, Tensor(np.tile(entry, (5, 1))), hardness=5.0)
        rng = np.random.default_rng(1)
        a = select_feature_wise(Tensor(rng.standard_normal((3, 3, 4))), d, channels=2)
        np.testing.assert_allclose(a.weights.values, 0.2, atol=1e-12)

    def test_hand_softmax_two_entries(self):
        # phi row aligned with entry 0, orthogonal to entry 1: similarities (1, 0)
        d = Dictionary(FEATURE_WISE, Tensor(np.eye(2)), hardness=1.0)
        phi = Tensor(np.array([[[2.0, 0.0]]]))
        a = select_feature_wise(phi, d, channels=3)
        expected = math.e / (math.e + 1.0)
        np.testing.assert_allclose(a.weights.values[0], expected, atol=1e-4)
        np.testing.assert_allclose(a.weights.values[1], 1.0 - expected, atol=1e-4)

    def test_mode_mismatch_rejected(self):
        d = init_dictionary(DIMENSION_WISE, 2, 8, channels=8)
        with pytest.raises(ConfigError):
            select_feature_wise(Tensor(np.zeros((2, 2, 8))), d, channels=8)

    def test_weights_constant_across_channels(self):
        rng = np.random.default_rng(5)
        d = init_dictionary(FEATURE_WISE, 4, 8, seed=2)
        a = select_feature_wise(_random_map(rng), d, channels=6)
        spread = a.weights.values.max(axis=3) - a.weights.values.min(axis=3)
        assert spread.max() == 0.0


class TestDimensionWiseSelection:
    def test_single_entry_gives_ones(self):
        rng = np.random.default_rng(0)
        d = init_dictionary(DIMENSION_WISE, 1, 8, channels=8, seed=1)
        a = select_dimension_wise(_random_map(rng), d)
        np.testing.assert_array_equal(a.weights.values, np.ones((1, 4, 4, 8)))

    def test_identical_directions_per_dimension_give_uniform(self):
        rng = np.random.default_rng(2)
        base = rng.standard_normal((1, 6, 8))
        d = Dictionary(DIMENSION_WISE, Tensor(np.tile(base, (4, 1, 1))), hardness=5.0)
        a = select_dimension_wise(Tensor(rng.standard_normal((2, 3, 8))), d)
        np.testing.assert_allclose(a.weights.values, 0.25, atol=1e-12)

    def test_matches_hand_softmax_oracle(self):
        # independent oracle: per-position cosines and softmax with plain numpy
        rng = np.random.default_rng(3)
        n, c, m, h, w = 3, 5, 7, 2, 4
        d = init_dictionary(DIMENSION_WISE, n, m, channels=c, seed=4, hardness=2.5)
        phi = Tensor(rng.standard_normal((h, w, m)))
        a = select_dimension_wise(phi, d).weights.values

        rows = phi.values.reshape(h * w, m)
        rows = rows / np.linalg.norm(rows, axis=1, keepdims=True)
        entries = d.entries.values / np.linalg.norm(d.entries.values, axis=-1, keepdims=True)
        for check in range(20):
            ij = int(rng.integers(h * w))
            k = int(rng.integers(c))
            logits = 2.5 * np.array([rows[ij] @ entries[nn, k] for nn in range(n)])
            ex = np.exp(logits - logits.max())
            soft = ex / ex.sum()
            got = a[:, ij // w, ij % w, k]
            np.testing.assert_allclose(got, soft, atol=1e-12)
            assert abs(got.sum() - 1.0) < 1e-6


class TestHardAssign:
    def test_clear_winner(self):
        d = Dictionary(FEATURE_WISE, Tensor(np.eye(2)), hardness=5.0)
        phi = Tensor(np.array([[[0.9, 0.1]]]))
        a = hard_assign(phi, d, channels=2)
        np.testing.assert_array_equal(a.weights.values[0], np.ones((1, 1, 2)))
        np.testing.assert_array_equal(a.weights.values[1], np.zeros((1, 1, 2)))

    def test_exact_tie_goes_to_lowest_index(self):
        d = Dictionary(FEATURE_WISE, Tensor(np.tile([1.0, 0.0], (3, 1))), hardness=5.0)
        a = hard_assign(Tensor(np.ones((2, 2, 2))), d, channels=1)
        np.testing.assert_array_equal(a.weights.values[0], np.ones((2, 2, 1)))
        assert a.weights.values[1:].max() == 0.0

    @pytest.mark.parametrize("mode", [FEATURE_WISE, DIMENSION_WISE])
    def test_soft_limit_converges_to_hard(self, mode):
        # soft-limit oracle with a sound gap threshold: deviation at gap g is
        # about (N-1) * exp(-hardness * g)
        n, m, c = 4, 8, 6
        hardness = 100.0
        threshold = np.log(1000.0 * (n - 1)) / hardness
        hits = 0
        for seed in range(10):
            rng = np.random.default_rng(seed)
            channels = c if mode == DIMENSION_WISE else None
            d = init_dictionary(mode, n, m, channels=channels, seed=seed, hardness=hardness)
            phi = Tensor(rng.standard_normal((3, 3, m)))
            soft = select(phi, d, c).weights.values
            hard = hard_assign(phi, d, channels=c).weights.values
            gap = _top2_gap(phi, d)  # (h*w,) or (h*w, c)
            dev = np.abs(soft - hard).max(axis=0)  # (h, w, c)
            dev = dev.reshape(gap.shape) if mode == DIMENSION_WISE else dev.max(axis=-1).reshape(-1)
            mask = gap > threshold
            hits += int(mask.sum())
            assert (dev[mask] < 1e-3).all()
        assert hits > 50  # the threshold must not filter everything out

    def test_invariant_under_positive_rescaling(self):
        rng = np.random.default_rng(8)
        d = init_dictionary(FEATURE_WISE, 5, 8, seed=3)
        phi = _random_map(rng, c=8)
        a = hard_assign(phi, d, channels=4).weights.values
        scaled = hard_assign(Tensor(phi.values * 37.5), d, channels=4).weights.values
        np.testing.assert_array_equal(a, scaled)
        d_scaled = Dictionary(FEATURE_WISE, Tensor(d.entries.values * 0.01), d.hardness)
        np.testing.assert_array_equal(
            hard_assign(phi, d_scaled, channels=4).weights.values, a)


def _top2_gap(phi, dictionary):
    h, w, m = phi.shape
    rows = phi.values.reshape(h * w, m)
    rows = rows / np.linalg.norm(rows, axis=1, keepdims=True)
    e = dictionary.entries.values
    if dictionary.mode == FEATURE_WISE:
        e = e / np.linalg.norm(e, axis=1, keepdims=True)
        srt = np.sort(rows @ e.T, axis=1)
        return (srt[:, -1] - srt[:, -2]).reshape(-1)
    n, c, _ = e.shape
    e = e / np.linalg.norm(e, axis=-1, keepdims=True)
    cos = np.einsum("pm,nkm->pnk", rows, e)
    srt = np.sort(cos, axis=1)
    return srt[:, -1, :] - srt[:, -2, :]


class TestMerge:
    def test_all_ones_single_branch_is_identity(self):
        rng = np.random.default_rng(0)
        f = _random_map(rng)
        a = AttentionTensor(Tensor(np.ones((1,) + f.shape)), FEATURE_WISE)
        (h,) = merge(f, a)
        np.testing.assert_array_equal(h.values, f.values)

    @pytest.mark.parametrize("mode", [FEATURE_WISE, DIMENSION_WISE])
    @pytest.mark.parametrize("seed", range(5))
    def test_partition_of_unity_conserves_map(self, mode, seed):
        rng = np.random.default_rng(seed)
        c = 6
        channels = c if mode == DIMENSION_WISE else None
        d = init_dictionary(mode, 4, 8, channels=channels, seed=seed)
        f = _random_map(rng, c=c)
        a = select(Tensor(rng.standard_normal((4, 4, 8))), d, c)
        total = sum(h.values for h in merge(f, a))
        np.testing.assert_allclose(total, f.values, atol=1e-9)
        # pooled view of the same conservation property
        pooled_sum = sum(T.spatial_mean_pool(h).values for h in merge(f, a))
        np.testing.assert_allclose(pooled_sum, T.spatial_mean_pool(f).values, atol=1e-9)

    def test_one_hot_masks_everything_else(self):
        rng = np.random.default_rng(4)
        d = init_dictionary(FEATURE_WISE, 3, 8, seed=5)
        f = _random_map(rng, c=5)
        a = hard_assign(Tensor(rng.standard_normal((4, 4, 8))), d, channels=5)
        branches = merge(f, a)
        mask = a.weights.values
        for n, h in enumerate(branches):
            assert (h.values[mask[n] == 0.0] == 0.0).all()

    def test_extent_mismatch_rejected(self):
        f = Tensor(np.ones((2, 2, 3)))
        a = AttentionTensor(Tensor(np.ones((2, 2, 2, 4))), FEATURE_WISE)
        with pytest.raises(ShapeError):
            merge(f, a)


class TestBranchHead:
    def test_output_is_unit_norm(self):
        rng = np.random.default_rng(0)
        head = init_branch_head(6, 4, seed=1)
        out = branch_head(Tensor(rng.standard_normal((3, 3, 6))), head)
        assert abs(np.linalg.norm(out.values) - 1.0) < 1e-9

    def test_zero_map_stays_near_zero(self):
        head = init_branch_head(6, 4, seed=1)
        out = branch_head(Tensor(np.zeros((3, 3, 6))), head)
        assert np.linalg.norm(out.values) < 1e-6

    def test_identity_embedding_of_constant_map(self):
        head = attention.BranchHead(
            Tensor(np.eye(3), requires_grad=True),
            Tensor(np.zeros(3), requires_grad=True))
        out = branch_head(Tensor(np.full((2, 2, 3), 4.0)), head)
        np.testing.assert_allclose(out.values, np.full(3, 1.0 / np.sqrt(3.0)), atol=1e-12)


class TestPipelines:
    @pytest.mark.parametrize("strategy", [PRE_ATTENTION, POST_ATTENTION])
    @pytest.mark.parametrize("mode", [FEATURE_WISE, DIMENSION_WISE])
    def test_embedding_length_and_norm(self, strategy, mode):
        rng = np.random.default_rng(1)
        cfg = make_config(strategy, mode, branches=4, embedding_size=16,
                          feature_channels=8, seed=2)
        params = init_params(cfg, seed=3)
        emb = diablo_forward(_random_map(rng), cfg, params)
        assert emb.shape == (16,)
        assert abs(np.linalg.norm(emb.values) - 2.0) < 1e-6  # sqrt(N), N=4

    @pytest.mark.parametrize("strategy", [PRE_ATTENTION, POST_ATTENTION])
    @pytest.mark.parametrize("mode", [FEATURE_WISE, DIMENSION_WISE])
    def test_single_branch_equals_baseline(self, strategy, mode):
        rng = np.random.default_rng(2)
        cfg = make_config(strategy, mode, branches=1, embedding_size=12,
                          feature_channels=8, seed=4)
        params = init_params(cfg, seed=5)
        f = _random_map(rng)
        attn_out = diablo_forward(f, cfg, params).values
        base_out = baseline_forward(f, params).values
        assert np.abs(attn_out - base_out).max() <= 1e-9

    def test_permuting_dictionary_permutes_branches(self):
        rng = np.random.default_rng(3)
        cfg = make_config(PRE_ATTENTION, DIMENSION_WISE, branches=4, embedding_size=16,
                          feature_channels=8, seed=6)
        params = init_params(cfg, seed=7)
        f = _random_map(rng)
        emb = diablo_forward(f, cfg, params).values.reshape(4, 4)

        perm = np.array([2, 0, 3, 1])
        permuted_dict = Dictionary(cfg.mode, Tensor(params.dictionary.entries.values[perm],
                                                    requires_grad=True),
                                   params.dictionary.hardness)
        params_perm = attention.DiabloParams(params.phi, params.psi, permuted_dict, params.head)
        emb_perm = diablo_forward(f, cfg, params_perm).values.reshape(4, 4)
        np.testing.assert_allclose(emb_perm, emb[perm], atol=1e-12)

    def test_strategy_config_guard(self):
        cfg = make_config(PRE_ATTENTION, FEATURE_WISE, branches=2, embedding_size=8,
                          feature_channels=8)
        params = init_params(cfg)
        with pytest.raises(ConfigError):
            attention.post_attention_forward(Tensor(np.zeros((2, 2, 8))), cfg, params)

    def test_branch_count_must_divide_embedding(self):
        with pytest.raises(ConfigError):
            make_config(PRE_ATTENTION, FEATURE_WISE, branches=3, embedding_size=16,
                        feature_channels=8)

    def test_psi_is_shared_single_parameter_set(self):
        cfg = make_config(PRE_ATTENTION, DIMENSION_WISE, branches=8, embedding_size=32,
                          feature_channels=8)
        params = init_params(cfg)
        names = [name for name, _ in params.parameters()]
        psi_names = [n for n in names if n.startswith("psi.")]
        assert psi_names == ["psi.0.weight", "psi.0.bias", "psi.1.weight", "psi.1.bias"]
        assert len(names) == len(set(names))

    @pytest.mark.parametrize("strategy", [PRE_ATTENTION, POST_ATTENTION])
    def test_pipeline_gradcheck_on_4x4x8(self, strategy):
        # finite-difference oracle through the full pipeline
        from diablo.checks import _pipeline_fixture
        from diablo.tensor import gradcheck

        f, inputs = _pipeline_fixture(strategy, DIMENSION_WISE, "binomial", seed=0)
        report = gradcheck(f, inputs, h=2e-5)
        assert report.passed, report.message
