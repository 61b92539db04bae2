"""Losses, batch sampling, and the Adam optimizer."""

import math

import numpy as np
import pytest

from diablo.errors import ShapeError
from diablo.tensor import Tape, Tensor
from diablo.training import (
    AdamState,
    Batch,
    LossConfig,
    adam_step,
    binomial_deviance_loss,
    contrastive_loss,
    sample_batch,
    triplet_loss,
)


def _embeddings(*vectors):
    return [Tensor(np.asarray(v, dtype=float), requires_grad=True) for v in vectors]


def _batch(embeddings, pos=(), neg=(), triplets=()):
    return Batch(indices=list(range(len(embeddings))), labels=[],
                 positive_pairs=list(pos), negative_pairs=list(neg),
                 triplets=list(triplets), embeddings=embeddings)


class TestContrastive:
    def test_identical_positive_pair_contributes_zero(self):
        b = _batch(_embeddings([1.0, 0.0], [1.0, 0.0]), pos=[(0, 1)])
        assert contrastive_loss(b, LossConfig()).item() == 0.0

    def test_far_negative_pair_contributes_zero(self):
        b = _batch(_embeddings([0.0, 0.0], [1.0, 0.0]), neg=[(0, 1)])
        assert contrastive_loss(b, LossConfig(margin=0.5)).item() == 0.0

    def test_hand_value_for_close_negative(self):
        # d = 0.3, margin 0.5 -> (0.2)^2
        b = _batch(_embeddings([0.0, 0.0], [0.3, 0.0]), neg=[(0, 1)])
        assert abs(contrastive_loss(b, LossConfig(margin=0.5)).item() - 0.04) < 1e-12

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            contrastive_loss(_batch(_embeddings([1.0])), LossConfig())


class TestTriplet:
    def test_satisfied_margin_gives_zero(self):
        e = _embeddings([0.0, 0.0], [0.0, 0.0], [1.0, 0.0])
        assert triplet_loss(_batch(e, triplets=[(0, 1, 2)]), LossConfig()).item() == 0.0

    def test_tied_distances_give_margin(self):
        e = _embeddings([0.0, 0.0], [1.0, 0.0], [-1.0, 0.0])
        loss = triplet_loss(_batch(e, triplets=[(0, 1, 2)]), LossConfig())
        assert abs(loss.item() - 0.1) < 1e-12

    def test_hand_value(self):
        # d(a,p)^2 = 0.5, d(a,n)^2 = 0.3 -> 0.5 - 0.3 + 0.1
        e = _embeddings([0.0, 0.0], [math.sqrt(0.5), 0.0], [math.sqrt(0.3), 0.0])
        loss = triplet_loss(_batch(e, triplets=[(0, 1, 2)]), LossConfig())
        assert abs(loss.item() - 0.3) < 1e-12

    def test_translation_invariance(self):
        rng = np.random.default_rng(0)
        vecs = rng.standard_normal((4, 6))
        shift = rng.standard_normal(6)
        trip = [(0, 1, 2), (0, 1, 3), (1, 0, 2)]
        base = triplet_loss(_batch(_embeddings(*vecs), triplets=trip), LossConfig()).item()
        moved = triplet_loss(_batch(_embeddings(*(vecs + shift)), triplets=trip),
                             LossConfig()).item()
        assert abs(base - moved) < 1e-12

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            triplet_loss(_batch(_embeddings([1.0])), LossConfig())


class TestBinomialDeviance:
    def test_positive_pair_at_margin_gives_log2(self):
        # cosine of these unit vectors equals the margin 0.5
        e = _embeddings([1.0, 0.0], [0.5, math.sqrt(0.75)])
        loss = binomial_deviance_loss(_batch(e, pos=[(0, 1)]), LossConfig())
        assert abs(loss.item() - math.log(2.0)) < 1e-12

    def test_negative_pair_at_margin_weighted_by_c(self):
        e = _embeddings([1.0, 0.0], [0.5, math.sqrt(0.75)])
        loss = binomial_deviance_loss(_batch(e, neg=[(0, 1)]), LossConfig(negative_weight=25.0))
        assert abs(loss.item() - 25.0 * math.log(2.0)) < 1e-12

    def test_hand_value_for_aligned_positive(self):
        # s = 1, margin 0.5, scale 2 -> log(1 + e^-1)
        e = _embeddings([1.0, 0.0], [2.0, 0.0])
        loss = binomial_deviance_loss(_batch(e, pos=[(0, 1)]), LossConfig())
        assert abs(loss.item() - math.log1p(math.exp(-1.0))) < 1e-12

    def test_negative_gradient_scales_linearly_in_c(self):
        rng = np.random.default_rng(1)
        grads = {}
        for c_weight in (5.0, 10.0):
            e = _embeddings(rng.standard_normal(4), rng.standard_normal(4))
            # same vectors for both weights
            rng = np.random.default_rng(1)
            with Tape() as tape:
                loss = binomial_deviance_loss(_batch(e, neg=[(0, 1)]),
                                              LossConfig(negative_weight=c_weight))
            tape.backward(loss)
            grads[c_weight] = np.concatenate([t.grad for t in e])
        np.testing.assert_allclose(grads[10.0], 2.0 * grads[5.0], rtol=1e-12)

    def test_decreasing_in_similarity_for_positives(self):
        cfg = LossConfig()
        losses = []
        for s in (0.9, 0.5, 0.0, -0.5):
            v = [s, math.sqrt(1.0 - s * s)]
            e = _embeddings([1.0, 0.0], v)
            losses.append(binomial_deviance_loss(_batch(e, pos=[(0, 1)]), cfg).item())
        assert losses == sorted(losses)


class TestSampleBatch:
    def test_pair_counts_p2_k2(self):
        labels = [0, 0, 0, 1, 1, 1]
        batch = sample_batch(labels, classes_per_batch=2, samples_per_class=2, seed=0)
        assert len(batch.indices) == 4
        assert len(batch.positive_pairs) == 2
        assert len(batch.negative_pairs) == 4

    def test_single_class_has_no_negatives(self):
        batch = sample_batch([0] * 5, classes_per_batch=1, samples_per_class=3, seed=1)
        assert batch.negative_pairs == []
        assert batch.triplets == []
        assert len(batch.positive_pairs) == 3

    def test_triplet_enumeration_matches_oracle(self):
        labels = [0, 0, 1, 1, 2, 2]
        batch = sample_batch(labels, classes_per_batch=3, samples_per_class=2, seed=2)
        # enumeration oracle: ordered anchors x in-class positives x negatives
        n = len(batch.indices)
        expected = sum(
            1
            for a in range(n)
            for p in range(n)
            if p != a and batch.labels[a] == batch.labels[p]
            for m in range(n)
            if batch.labels[m] != batch.labels[a]
        )
        assert expected == 24
        assert len(batch.triplets) == 24
        for a, p, m in batch.triplets:
            assert batch.labels[a] == batch.labels[p] != batch.labels[m]

    def test_deterministic_given_seed(self):
        labels = np.repeat(np.arange(6), 4)
        a = sample_batch(labels, 3, 2, seed=9)
        b = sample_batch(labels, 3, 2, seed=9)
        assert a.indices == b.indices
        assert a.triplets == b.triplets

    def test_insufficient_data_rejected(self):
        with pytest.raises(ValueError):
            sample_batch([0, 0, 1], classes_per_batch=2, samples_per_class=2, seed=0)


class TestAdam:
    def test_zero_gradient_leaves_parameters(self):
        p = Tensor([1.0, -2.0], requires_grad=True)
        state = AdamState.init([p], learning_rate=0.1)
        adam_step([p], [np.zeros(2)], state)
        np.testing.assert_array_equal(p.values, [1.0, -2.0])
        assert state.step == 1

    def test_first_step_is_signed_learning_rate(self):
        p = Tensor([1.0, 1.0, 1.0], requires_grad=True)
        state = AdamState.init([p], learning_rate=0.01)
        adam_step([p], [np.array([0.5, -2.0, 1e-3])], state)
        np.testing.assert_allclose(p.values, [1.0 - 0.01, 1.0 + 0.01, 1.0 - 0.01], rtol=1e-5)

    def test_quadratic_converges(self):
        # run the scalar recurrence on f(x) = x^2 from x = 1
        p = Tensor([1.0], requires_grad=True)
        state = AdamState.init([p], learning_rate=0.1)
        for _ in range(100):
            adam_step([p], [2.0 * p.values], state)
        assert abs(p.values[0]) < 0.1

    def test_shape_mismatch_rejected(self):
        p = Tensor([1.0, 2.0], requires_grad=True)
        state = AdamState.init([p])
        with pytest.raises(ShapeError):
            adam_step([p], [np.zeros(3)], state)

    def test_optimizer_defaults(self):
        state = AdamState.init([Tensor([0.0], requires_grad=True)])
        assert state.learning_rate == 1e-5
        assert (state.beta1, state.beta2, state.epsilon) == (0.9, 0.999, 1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_all_losses_non_negative_on_random_batches(seed):
    rng = np.random.default_rng(seed)
    e = _embeddings(*rng.standard_normal((6, 8)))
    batch = Batch(indices=list(range(6)), labels=[0, 0, 0, 1, 1, 1],
                  positive_pairs=[(0, 1), (0, 2), (3, 4)],
                  negative_pairs=[(0, 3), (1, 4), (2, 5)],
                  triplets=[(0, 1, 3), (3, 4, 0), (1, 2, 5)],
                  embeddings=e)
    assert contrastive_loss(batch, LossConfig()).item() >= 0.0
    assert triplet_loss(batch, LossConfig()).item() >= 0.0
    assert binomial_deviance_loss(batch, LossConfig()).item() > 0.0


def test_losses_differentiable_through_pipeline():
    # loss-of-pipeline gradients validated against finite differences
    from diablo.checks import pipeline_checks

    failures = [c.name for c in pipeline_checks() if not c.run(seed=1).passed]
    assert not failures, failures
