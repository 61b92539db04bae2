"""Retrieval evaluation: pairwise distances, Recall@K, and class splits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class EmbeddingIndex:
    """Item embeddings with labels, optionally with a separate query set.

    Without a query set, evaluation is leave-one-out: every item queries
    the rest of the set. With one, each query is ranked against the whole
    collection.
    """

    vectors: np.ndarray  # (n, E)
    labels: np.ndarray  # (n,)
    query_vectors: np.ndarray = None
    query_labels: np.ndarray = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.vectors.ndim != 2 or len(self.labels) != len(self.vectors):
            raise ValueError("need one label per embedding row")
        if (self.query_vectors is None) != (self.query_labels is None):
            raise ValueError("query vectors and query labels go together")
        if self.query_vectors is not None:
            self.query_vectors = np.asarray(self.query_vectors, dtype=np.float64)
            self.query_labels = np.asarray(self.query_labels)
            if len(self.query_labels) != len(self.query_vectors):
                raise ValueError("need one label per query row")


@dataclass(frozen=True)
class SplitPlan:
    """Repeated random class partitions for model selection."""

    repetitions: int = 10
    train_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("need at least one repetition")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train fraction must be inside (0, 1)")


def pairwise_distances(index: EmbeddingIndex) -> np.ndarray:
    """Euclidean distance matrix: symmetric, zero diagonal, non-negative."""
    v = index.vectors
    if len(v) == 0:
        raise ValueError("empty index")
    out = np.empty((len(v), len(v)))
    for i in range(len(v)):
        out[i] = np.sqrt(((v - v[i]) ** 2).sum(axis=1))
    return out


def _rank_labels(queries, query_labels, collection, labels, exclude_self: bool):
    """Yield (query label, candidate labels sorted by distance, index-tiebroken)."""
    for i in range(len(queries)):
        d = np.sqrt(((collection - queries[i]) ** 2).sum(axis=1))
        order = np.argsort(d, kind="stable")
        if exclude_self:
            order = order[order != i]
        yield query_labels[i], labels[order]


def recall_at_k(index: EmbeddingIndex, ks) -> dict:
    """Fraction of queries with a same-label item among the K nearest.

    The query itself is excluded in leave-one-out mode. Distance ties are
    broken by item index.
    """
    ks = [int(k) for k in ks]
    if index.query_vectors is not None:
        queries, qlabels = index.query_vectors, index.query_labels
        candidates = len(index.vectors)
        exclude = False
    else:
        queries, qlabels = index.vectors, index.labels
        candidates = len(index.vectors) - 1
        exclude = True
    for k in ks:
        if k < 1:
            raise ValueError(f"K must be positive, got {k}")
        if k >= candidates:
            raise ValueError(f"K={k} must stay below the candidate count {candidates}")
    if len(queries) == 0:
        raise ValueError("empty query set")

    hits = {k: 0 for k in ks}
    for qlabel, ranked in _rank_labels(queries, qlabels, index.vectors, index.labels, exclude):
        for k in ks:
            if (ranked[:k] == qlabel).any():
                hits[k] += 1
    return {k: hits[k] / len(queries) for k in ks}


def make_splits(class_ids, plan: SplitPlan) -> list:
    """Disjoint, exhaustive train/val class partitions, one per repetition."""
    classes = np.unique(np.asarray(class_ids))
    if len(classes) < 2:
        raise ValueError("need at least two classes to split")
    n_train = int(round(plan.train_fraction * len(classes)))
    n_train = min(max(n_train, 1), len(classes) - 1)
    rng = np.random.default_rng(plan.seed)
    splits = []
    for _ in range(plan.repetitions):
        perm = rng.permutation(classes)
        train = np.sort(perm[:n_train])
        val = np.sort(perm[n_train:])
        splits.append((train, val))
    return splits
