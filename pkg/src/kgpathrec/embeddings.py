"""Translation-embedding pretraining and the shared embedding table.

Entities, relations (inverses included), and categories share one table of
d-dimensional float64 rows.  Entity and relation rows are pretrained with
margin-ranking over the L2 score ||h + r - t||; category rows are the mean
of their member items.  A distinguished start-marker row stands in for the
relation of an agent's initial position.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .graph import CategoryAssignment, KnowledgeGraph

Array = np.ndarray


@dataclass
class EmbeddingTable:
    dim: int
    entity: Array
    relation: Array
    category: Array
    start_marker: Array

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.dim, self.entity.copy(),
                              self.relation.copy(), self.category.copy(),
                              self.start_marker.copy())

    def normalize_entities(self) -> None:
        norms = np.linalg.norm(self.entity, axis=1, keepdims=True)
        np.maximum(norms, 1e-12, out=norms)
        self.entity /= norms


def init_embeddings(kg: KnowledgeGraph, assignment: CategoryAssignment,
                    dim: int, seed: int) -> EmbeddingTable:
    """Uniform init in [-6/sqrt(d), 6/sqrt(d)], deterministic under seed."""
    if dim < 1:
        raise DataError(f"embedding dimension must be >= 1, got {dim}")
    rng = np.random.default_rng(seed)
    bound = 6.0 / np.sqrt(dim)
    entity = rng.uniform(-bound, bound, size=(kg.n_entities, dim))
    relation = rng.uniform(-bound, bound, size=(kg.n_relations, dim))
    category = rng.uniform(-bound, bound, size=(assignment.n_categories, dim))
    marker = rng.uniform(-bound, bound, size=dim)
    return EmbeddingTable(dim, entity, relation, category, marker)


def category_means(table: EmbeddingTable,
                   assignment: CategoryAssignment) -> EmbeddingTable:
    """Overwrite each category row with the mean of its member item rows."""
    for c, members in enumerate(assignment.members):
        if not members:
            raise DataError(f"category {assignment.names[c]!r} is empty")
        table.category[c] = table.entity[members].mean(axis=0)
    return table


def _corrupt(rng: np.random.Generator, pool: Array, banned: int,
             check, tries: int = 10) -> int | None:
    for _ in range(tries):
        cand = int(pool[rng.integers(len(pool))])
        if cand != banned and not check(cand):
            return cand
    return None


def train_embeddings(kg: KnowledgeGraph, table: EmbeddingTable, epochs: int,
                     margin: float = 1.0, lr: float = 0.01,
                     negatives_per_positive: int = 1, seed: int = 0,
                     triples: list[tuple[int, int, int]] | None = None,
                     ) -> tuple[EmbeddingTable, list[float]]:
    """Margin-ranking SGD with corrupted heads and tails.

    Negatives are drawn from entities of the same kind as the replaced slot
    and filtered against true triples.  Entity rows are renormalized each
    epoch.  A non-finite epoch loss aborts training and the last finite
    state is returned, with the epoch history ending at the finite values.
    """
    if margin <= 0:
        raise DataError(f"margin must be positive, got {margin}")
    if triples is None:
        triples = kg.triples
    rng = np.random.default_rng(seed)
    truth = frozenset(kg.triples)
    kind_pool = {k: np.array(kg.entities_of_kind(k), dtype=np.int64)
                 for k in ("user", "item", "brand", "feature")}
    arr = np.array(triples, dtype=np.int64)
    history: list[float] = []
    table.normalize_entities()
    last_good = table.copy()

    for _ in range(epochs):
        order = rng.permutation(len(arr))
        epoch_loss = 0.0
        for idx in order:
            h, r, t = (int(x) for x in arr[idx])
            for _ in range(negatives_per_positive):
                t_neg = _corrupt(rng, kind_pool[kg.kind_of(t)], t,
                                 lambda c: (h, r, c) in truth)
                if t_neg is not None:
                    epoch_loss += _sgd_pair(table, margin, lr,
                                            (h, r, t), (h, r, t_neg))
                h_neg = _corrupt(rng, kind_pool[kg.kind_of(h)], h,
                                 lambda c: (c, r, t) in truth)
                if h_neg is not None:
                    epoch_loss += _sgd_pair(table, margin, lr,
                                            (h, r, t), (h_neg, r, t))
        table.normalize_entities()
        if not np.isfinite(epoch_loss):
            table.entity[:] = last_good.entity
            table.relation[:] = last_good.relation
            break
        history.append(epoch_loss / max(len(arr), 1))
        last_good = table.copy()
    return table, history


def _sgd_pair(table: EmbeddingTable, margin: float, lr: float,
              pos: tuple[int, int, int], neg: tuple[int, int, int]) -> float:
    e, rel = table.entity, table.relation
    hp, rp, tp = pos
    hn, rn, tn = neg
    v_pos = e[hp] + rel[rp] - e[tp]
    v_neg = e[hn] + rel[rn] - e[tn]
    d_pos = float(np.linalg.norm(v_pos))
    d_neg = float(np.linalg.norm(v_neg))
    loss = margin + d_pos - d_neg
    if loss <= 0:
        return 0.0
    u_pos = v_pos / max(d_pos, 1e-12)
    u_neg = v_neg / max(d_neg, 1e-12)
    e[hp] -= lr * u_pos
    rel[rp] -= lr * u_pos
    e[tp] += lr * u_pos
    e[hn] += lr * u_neg
    rel[rn] += lr * u_neg
    e[tn] -= lr * u_neg
    return loss


def triple_rank(table: EmbeddingTable, kg: KnowledgeGraph,
                triple: tuple[int, int, int]) -> int:
    """1-based rank of the true tail among entities of its kind.

    Candidates are ordered by ascending ||h + r - t||, ties broken by
    ascending entity id, so the rank is deterministic.
    """
    h, r, t = triple
    candidates = np.array(kg.entities_of_kind(kg.kind_of(t)), dtype=np.int64)
    query = table.entity[h] + table.relation[r]
    dists = np.linalg.norm(query[None, :] - table.entity[candidates], axis=1)
    d_true = float(dists[candidates == t][0])
    better = (dists < d_true) | ((dists == d_true) & (candidates < t))
    return int(np.sum(better)) + 1


def mean_rank(table: EmbeddingTable, kg: KnowledgeGraph,
              triples: list[tuple[int, int, int]]) -> float:
    if not triples:
        raise DataError("mean_rank needs at least one triple")
    return float(np.mean([triple_rank(table, kg, tr) for tr in triples]))
