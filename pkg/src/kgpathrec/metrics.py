"""Top-K ranking metrics with binary relevance, macro-averaged over users."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .graph import InteractionSplit


@dataclass
class UserMetrics:
    user: int
    ndcg: float
    recall: float
    hit: float
    precision: float
    hits: int
    test_size: int


@dataclass
class MetricsReport:
    k: int
    n_users: int
    ndcg: float
    recall: float
    hit_ratio: float
    precision: float
    per_user: list[UserMetrics]

    def tsv(self) -> str:
        lines = [f"k\t{self.k}", f"users\t{self.n_users}",
                 f"ndcg\t{self.ndcg:.6f}", f"recall\t{self.recall:.6f}",
                 f"hit_ratio\t{self.hit_ratio:.6f}",
                 f"precision\t{self.precision:.6f}", "",
                 "user\tndcg\trecall\thit\tprecision\thits\ttest_size"]
        for u in self.per_user:
            lines.append(f"{u.user}\t{u.ndcg:.6f}\t{u.recall:.6f}"
                         f"\t{u.hit:.0f}\t{u.precision:.6f}\t{u.hits}"
                         f"\t{u.test_size}")
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        return (f"NDCG@{self.k}      {100 * self.ndcg:7.3f}\n"
                f"Recall@{self.k}    {100 * self.recall:7.3f}\n"
                f"HR@{self.k}        {100 * self.hit_ratio:7.3f}\n"
                f"Precision@{self.k} {100 * self.precision:7.3f}\n"
                f"(percentages over {self.n_users} users)\n")


def user_metrics(user: int, ranked: Sequence[int], test_items: frozenset[int],
                 k: int) -> UserMetrics:
    """Metrics for one ranked list against one user's held-out items.

    DCG credits 1/log2(rank+1) per hit; the ideal DCG places min(k, |test|)
    hits at the top.
    """
    top = list(ranked[:k])
    hits = [1.0 if item in test_items else 0.0 for item in top]
    n_hits = int(sum(hits))
    dcg = sum(h / np.log2(i + 2) for i, h in enumerate(hits))
    ideal = sum(1.0 / np.log2(i + 2)
                for i in range(min(k, len(test_items))))
    return UserMetrics(
        user=user,
        ndcg=dcg / ideal if ideal > 0 else 0.0,
        recall=n_hits / len(test_items) if test_items else 0.0,
        hit=1.0 if n_hits > 0 else 0.0,
        precision=n_hits / k,
        hits=n_hits,
        test_size=len(test_items))


def evaluate_rankings(rankings: Mapping[int, Sequence[int]],
                      split: InteractionSplit, k: int) -> MetricsReport:
    """Macro-average over users with a nonempty test set."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    rows: list[UserMetrics] = []
    for user in sorted(rankings):
        test_items = split.test_items(user)
        if not test_items:
            continue
        rows.append(user_metrics(user, rankings[user], test_items, k))
    if not rows:
        return MetricsReport(k, 0, 0.0, 0.0, 0.0, 0.0, [])
    return MetricsReport(
        k=k,
        n_users=len(rows),
        ndcg=float(np.mean([r.ndcg for r in rows])),
        recall=float(np.mean([r.recall for r in rows])),
        hit_ratio=float(np.mean([r.hit for r in rows])),
        precision=float(np.mean([r.precision for r in rows])),
        per_user=rows)
