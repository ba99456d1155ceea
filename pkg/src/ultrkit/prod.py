"""Weak production ranker: a pairwise hinge-loss linear model and the rankings it shows users."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ultrkit import kernels
from ultrkit.letor import Dataset, Query


class TrainingError(RuntimeError):
    pass


@dataclass
class LinearRanker:
    weights: np.ndarray
    bias: float = 0.0

    @property
    def feature_dim(self) -> int:
        return len(self.weights)

    def scores(self, features: np.ndarray) -> np.ndarray:
        if features.shape[-1] != self.feature_dim:
            raise ValueError(
                f"ranker expects {self.feature_dim} features, got {features.shape[-1]}"
            )
        return features @ self.weights + self.bias

    def save(self, path) -> None:
        lines = [str(self.feature_dim)]
        lines += [repr(float(v)) for v in self.weights]
        lines.append(repr(float(self.bias)))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "LinearRanker":
        with open(path, encoding="utf-8") as fh:
            values = fh.read().split()
        h = int(values[0])
        if len(values) != h + 2:
            raise ValueError(f"{path}: expected {h} weights and a bias")
        return cls(np.array([float(v) for v in values[1 : h + 1]]), float(values[-1]))


@dataclass(frozen=True)
class ProdConfig:
    epochs: int = 5
    learning_rate: float = 0.01
    reg: float = 0.01


@dataclass(frozen=True, eq=False)
class RankedList:
    """A query's documents in display order; ``order[i]`` is the original index at position i."""

    qid: str
    order: np.ndarray
    features: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.order)

    def truncate(self, size: int) -> "RankedList":
        return RankedList(self.qid, self.order[:size], self.features[:size], self.labels[:size])


def discordant_pairs(dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Stack all documents and list every within-query (better, worse) row pair."""
    X = np.concatenate([q.features for q in dataset.queries])
    pairs = []
    start = 0
    for q in dataset.queries:
        y = q.labels
        a, b = np.nonzero(y[:, None] > y[None, :])
        pairs.append(np.stack([a + start, b + start], axis=1))
        start += len(q)
    return X, np.concatenate(pairs).astype(np.int64)


def pairwise_accuracy(ranker: LinearRanker, dataset: Dataset) -> float:
    """Fraction of discordant pairs the ranker orders strictly correctly (ties count as wrong)."""
    X, pairs = discordant_pairs(dataset)
    if len(pairs) == 0:
        return 1.0
    s = ranker.scores(X)
    return float(np.mean(s[pairs[:, 0]] > s[pairs[:, 1]]))


def train_prod(sample: Dataset, config: ProdConfig = ProdConfig(), seed: int = 0) -> LinearRanker:
    """Stochastic subgradient descent on the pairwise hinge loss.

    The bias cancels in every pairwise difference and stays at zero.
    """
    if len(sample) == 0:
        raise TrainingError("cannot train a production ranker on an empty sample")
    w = np.zeros(sample.feature_dim)
    X, pairs = discordant_pairs(sample)
    rng = np.random.default_rng(seed)
    for _ in range(config.epochs):
        if len(pairs) == 0:
            break
        order = rng.permutation(len(pairs))
        kernels.hinge_sgd_epoch(X, pairs, order, w, config.learning_rate, config.reg)
    return LinearRanker(w, 0.0)


def rank_query(ranker: LinearRanker, query: Query, tie_seed: int) -> RankedList:
    """Sort documents by descending score; exact ties fall back to a seeded shuffle."""
    scores = ranker.scores(query.features)
    shuffle = np.random.default_rng(tie_seed).permutation(len(query))
    order = shuffle[np.argsort(-scores[shuffle], kind="stable")]
    return RankedList(query.qid, order, query.features[order], query.labels[order])


def rank_dataset(ranker: LinearRanker, dataset: Dataset, seed: int) -> list[RankedList]:
    """Rank every query; query ``i`` uses tie seed ``(seed, i)``."""
    seeds = np.random.SeedSequence(seed).generate_state(len(dataset), dtype=np.uint64)
    return [rank_query(ranker, q, int(s)) for q, s in zip(dataset.queries, seeds)]
