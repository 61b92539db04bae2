"""Metric-learning losses, batch construction, and Adam updates.

Losses operate on batches of embeddings with enumerated pair/triplet index
lists. Contrastive and triplet losses use Euclidean distances over the full
concatenated embedding; the binomial deviance loss uses the cosine of the
concatenated embeddings, which for unit-norm branches equals the mean of
the per-branch cosines and stays in [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor

LOSS_KINDS = ("contrastive", "triplet", "binomial")


@dataclass(frozen=True)
class LossConfig:
    """Loss choice and margins. Defaults follow standard practice for this
    family: triplet margin 0.1, contrastive/binomial margin 0.5, negative
    weight 25, binomial scale 2."""

    kind: str = "binomial"
    triplet_margin: float = 0.1
    margin: float = 0.5
    negative_weight: float = 25.0
    scale: float = 2.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.triplet_margin <= 0 or self.margin <= 0:
            raise ValueError("margins must be positive")
        if self.negative_weight <= 0 or self.scale <= 0:
            raise ValueError("negative weight and scale must be positive")


@dataclass
class Batch:
    """A sampled training batch with every in-batch pair/triplet enumerated.

    Index lists refer to positions within the batch. `embeddings` is filled
    by the caller after the forward pass.
    """

    indices: list
    labels: list
    positive_pairs: list
    negative_pairs: list
    triplets: list
    embeddings: list = field(default_factory=list)


def sample_batch(dataset, classes_per_batch: int, samples_per_class: int, seed: int = 0) -> Batch:
    """Draw P classes and K samples each, then enumerate pairs and triplets.

    Positive/negative pairs are unordered; triplets run over every ordered
    (anchor, positive) with every cross-class negative. Deterministic for a
    given seed.
    """
    labels = np.asarray(getattr(dataset, "labels", dataset))
    if classes_per_batch < 1 or samples_per_class < 1:
        raise ValueError("batch shape extents must be positive")
    classes, counts = np.unique(labels, return_counts=True)
    eligible = classes[counts >= samples_per_class]
    if len(eligible) < classes_per_batch:
        raise ValueError(
            f"need {classes_per_batch} classes with >= {samples_per_class} samples, "
            f"have {len(eligible)}")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(eligible, size=classes_per_batch, replace=False)
    indices, batch_labels = [], []
    for cls in chosen:
        members = np.flatnonzero(labels == cls)
        picks = rng.choice(members, size=samples_per_class, replace=False)
        indices.extend(int(i) for i in picks)
        batch_labels.extend(int(cls) for _ in picks)

    n = len(indices)
    pos, neg = [], []
    for i in range(n):
        for j in range(i + 1, n):
            (pos if batch_labels[i] == batch_labels[j] else neg).append((i, j))
    triplets = [
        (a, p, m)
        for a in range(n)
        for p in range(n)
        if p != a and batch_labels[p] == batch_labels[a]
        for m in range(n)
        if batch_labels[m] != batch_labels[a]
    ]
    return Batch(indices, batch_labels, pos, neg, triplets)


def _mean(terms):
    total = terms[0]
    for t in terms[1:]:
        total = T.add(total, t)
    return T.mul(total, 1.0 / len(terms))


def _dist_sq(u: Tensor, v: Tensor) -> Tensor:
    d = T.sub(u, v)
    return T.ssum(T.mul(d, d))


def contrastive_loss(batch: Batch, cfg: LossConfig) -> Tensor:
    """Mean over pairs of d^2 (positives) and max(0, margin - d)^2 (negatives)."""
    if not batch.positive_pairs and not batch.negative_pairs:
        raise ValueError("contrastive loss needs at least one pair")
    e = batch.embeddings
    terms = [_dist_sq(e[i], e[j]) for i, j in batch.positive_pairs]
    for i, j in batch.negative_pairs:
        hinge = T.relu(T.add(T.mul(T.sqrt(_dist_sq(e[i], e[j])), -1.0), cfg.margin))
        terms.append(T.mul(hinge, hinge))
    return _mean(terms)


def triplet_loss(batch: Batch, cfg: LossConfig) -> Tensor:
    """Mean over triplets of max(0, d(a,p)^2 - d(a,n)^2 + margin)."""
    if not batch.triplets:
        raise ValueError("triplet loss needs at least one triplet")
    e = batch.embeddings
    terms = [
        T.relu(T.add(T.sub(_dist_sq(e[a], e[p]), _dist_sq(e[a], e[n])), cfg.triplet_margin))
        for a, p, n in batch.triplets
    ]
    return _mean(terms)


def binomial_deviance_loss(batch: Batch, cfg: LossConfig) -> Tensor:
    """Soft hinge on cosine similarity, negatives up-weighted by C.

    Each pair contributes w_y * log(1 + exp(-scale * (s - margin) * y)) with
    y = +1 for positives (w = 1) and y = -1 for negatives (w = C); the two
    pair classes are averaged separately, then summed.
    """
    if not batch.positive_pairs and not batch.negative_pairs:
        raise ValueError("binomial deviance loss needs at least one pair")
    e = batch.embeddings

    def deviance(i, j, sign):
        s = T.cosine_similarity(e[i], e[j])
        z = T.add(T.mul(s, -cfg.scale * sign), cfg.scale * sign * cfg.margin)
        return T.log(T.add(T.exp(z), 1.0))

    parts = []
    if batch.positive_pairs:
        parts.append(_mean([deviance(i, j, +1.0) for i, j in batch.positive_pairs]))
    if batch.negative_pairs:
        neg = _mean([deviance(i, j, -1.0) for i, j in batch.negative_pairs])
        parts.append(T.mul(neg, cfg.negative_weight))
    loss = parts[0]
    for p in parts[1:]:
        loss = T.add(loss, p)
    return loss


LOSSES = {
    "contrastive": contrastive_loss,
    "triplet": triplet_loss,
    "binomial": binomial_deviance_loss,
}


def loss_fn(kind: str):
    return LOSSES[kind]


# ---------------------------------------------------------------------------
# optimization


@dataclass
class AdamState:
    """First/second moment buffers and step count for Adam."""

    m: list
    v: list
    step: int = 0
    learning_rate: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def init(cls, params, learning_rate: float = 1e-5, beta1: float = 0.9,
             beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.values) for p in params],
            v=[np.zeros_like(p.values) for p in params],
            learning_rate=learning_rate, beta1=beta1, beta2=beta2, epsilon=epsilon,
        )


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update, in place on the parameter buffers."""
    if len(params) != len(state.m):
        raise ShapeError("optimizer state does not match the parameter list")
    state.step += 1
    t = state.step
    for k, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        g = np.asarray(g)
        if g.shape != p.values.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.values.shape}")
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g
        m_hat = state.m[k] / (1.0 - state.beta1 ** t)
        v_hat = state.v[k] / (1.0 - state.beta2 ** t)
        p.values -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
