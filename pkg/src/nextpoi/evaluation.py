"""Ranking metrics, the UserPop baseline and evaluation reports."""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dataset import Dataset, Sample, training_history

DEFAULT_KS = (5, 10)


def rank_of_label(scores: np.ndarray, label: int) -> int:
    """1-based rank of ``label``; equal scores are ordered by ascending id."""
    scores = np.asarray(scores)
    s = scores[label]
    ids = np.arange(len(scores))
    return int(1 + np.sum(scores > s) + np.sum((scores == s) & (ids < label)))


def recall_at_k(ranks: Sequence[int], k: int) -> float:
    if k < 1:
        raise ValueError("K must be >= 1")
    ranks = [int(r) for r in ranks]
    if not ranks:
        return 0.0
    return sum(1 for r in ranks if r <= k) / len(ranks)


def ndcg_at_k(ranks: Sequence[int], k: int) -> float:
    """Mean NDCG@K with one relevant item per sample, so IDCG is 1."""
    if k < 1:
        raise ValueError("K must be >= 1")
    ranks = [int(r) for r in ranks]
    if not ranks:
        return 0.0
    return math.fsum(1.0 / math.log2(r + 1) for r in ranks if r <= k) / len(ranks)


@dataclass
class MetricsReport:
    recall_at: dict[int, float]
    ndcg_at: dict[int, float]
    per_sample_ranks: list[int]
    labels: list[int] = field(default_factory=list)

    @property
    def sample_count(self) -> int:
        return len(self.per_sample_ranks)

    @classmethod
    def from_ranks(cls, ranks: Sequence[int], ks: Sequence[int] = DEFAULT_KS, labels=()):
        ranks = [int(r) for r in ranks]
        return cls({k: recall_at_k(ranks, k) for k in ks}, {k: ndcg_at_k(ranks, k) for k in ks},
                   ranks, list(labels))

    def rows(self):
        for k in sorted(self.recall_at):
            yield "recall", k, self.recall_at[k]
        for k in sorted(self.ndcg_at):
            yield "ndcg", k, self.ndcg_at[k]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "K", "value"])
            for metric, k, value in self.rows():
                w.writerow([metric, k, repr(value)])

    def write_ranks(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample_id", "label", "rank"])
            for i, (label, rank) in enumerate(zip(self.labels, self.per_sample_ranks)):
                w.writerow([i, label, rank])


def evaluate(scorer: Callable[[Sample], np.ndarray], samples: Sequence[Sample],
             ks: Sequence[int] = DEFAULT_KS) -> MetricsReport:
    """Score every sample over the full catalog and collect label ranks."""
    ranks = [rank_of_label(scorer(s), s.label) for s in samples]
    return MetricsReport.from_ranks(ranks, ks, [s.label for s in samples])


class UserPop:
    """Rank locations by the user's own training visit counts.

    Ties fall back to global training popularity, then to location id (the
    latter through :func:`rank_of_label`).
    """

    def __init__(self, ds: Dataset, last_m: int | None = None):
        self.num_locations = ds.num_locations
        self.user_counts = []
        total = Counter()
        for u in range(ds.num_users):
            c = Counter(ci.location for ci in training_history(ds, u, last_m))
            self.user_counts.append(c)
            total.update(c)
        self.global_counts = np.zeros(self.num_locations)
        for loc, n in total.items():
            self.global_counts[loc] = n

    def predict(self, user: int) -> np.ndarray:
        own = np.zeros(self.num_locations)
        for loc, n in self.user_counts[user].items():
            own[loc] = n
        # integer-valued composite key: own count dominates, global count breaks ties
        return own * (self.global_counts.max() + 1.0) + self.global_counts

    def __call__(self, sample: Sample) -> np.ndarray:
        return self.predict(sample.user)


def user_pop_predict(history: Sequence, num_locations: int, global_counts=None) -> np.ndarray:
    """UserPop scores from an explicit history (stand-alone form of :class:`UserPop`)."""
    own = np.zeros(num_locations)
    for c in history:
        own[c.location] += 1
    g = np.zeros(num_locations) if global_counts is None else np.asarray(global_counts, dtype=np.float64)
    return own * (g.max() + 1.0) + g

