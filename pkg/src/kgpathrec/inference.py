"""Inference: beam search over the trained policies and path explanations.

Candidates are scored by the cumulative log-probability of the entity
agent's choices; the category agent advances greedily within each beam.
A path's recommended item is its last non-self-loop entity, so paths of
every length up to the hop budget contribute candidates.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import policy as pol
from .autodiff import ParamStore, Tape
from .embeddings import EmbeddingTable
from .encoder import EncoderConfig, compute_item_vectors
from .errors import DataError
from .graph import Dataset, KnowledgeGraph
from .policy import (ActionPruner, CategoryState, EntityState, HistoryEncoder,
                     PolicyConfig, VectorSource, apply_category_action,
                     apply_entity_action)
from .training import train_category_set

Array = np.ndarray

DEFAULT_WIDTHS = (10, 5, 5, 1, 1, 1, 1)


def default_widths(max_len: int) -> list[int]:
    widths = list(DEFAULT_WIDTHS[:max_len])
    widths.extend([1] * (max_len - len(widths)))
    return widths


@dataclass
class ExplanationPath:
    """One rolled-out path: entity steps with the parallel category trace."""

    user: int
    steps: list[tuple[int, int]]      # (relation, entity); marker = self-loop
    categories: list[int]             # c_0 .. c_L
    score: float                      # sum of entity-action log-probabilities

    @property
    def moves(self) -> list[tuple[int, int]]:
        """Steps with self-loops elided."""
        return [(r, e) for r, e in self.steps if r != pol.START_RELATION]

    @property
    def terminal(self) -> int | None:
        """Last entity actually moved to, or None if the path never moved."""
        moves = self.moves
        return moves[-1][1] if moves else None

    def category_trace(self) -> list[int]:
        """Category sequence with consecutive repeats collapsed."""
        trace = [self.categories[0]]
        for c in self.categories[1:]:
            if c != trace[-1]:
                trace.append(c)
        return trace


def validate_path(kg: KnowledgeGraph, path: ExplanationPath) -> None:
    """Every displayed hop must be a real triple; raises DataError if not."""
    position = path.user
    for r, e in path.steps:
        if r == pol.START_RELATION:
            if e != position:
                raise DataError("self-loop step changed the entity")
            continue
        if not kg.has_triple(position, r, e):
            raise DataError(
                f"path hop ({position}, {r}, {e}) is not a knowledge-graph edge")
        position = e


@dataclass
class _Beam:
    cat_state: CategoryState
    ent_state: EntityState
    hist: pol.HistoryState
    steps: list[tuple[int, int]]
    categories: list[int]
    score: float


class BeamSearcher:
    """Breadth-limited policy expansion against a frozen checkpoint."""

    def __init__(self, store: ParamStore, dataset: Dataset,
                 table: EmbeddingTable, policy_config: PolicyConfig,
                 item_vectors: Mapping[int, Array],
                 category_cap: int = pol.CATEGORY_CAP,
                 entity_cap: int = pol.ENTITY_CAP):
        tape = Tape(trace=False)
        self.tape = tape
        self.dataset = dataset
        self.params = store.bind(tape, prefix="pol.")
        self.vectors = VectorSource(tape, table, dict(item_vectors))
        self.pruner = ActionPruner(dataset.kg, dataset.category_graph, table,
                                   dataset.split, dict(item_vectors),
                                   category_cap=category_cap,
                                   entity_cap=entity_cap)
        self.encoder = HistoryEncoder(tape, self.params, policy_config.dim,
                                      policy_config.hidden)

    def search(self, user: int, widths: Sequence[int], max_len: int,
               start_categories: Sequence[int] | None = None,
               ) -> list[ExplanationPath]:
        """All surviving length-``max_len`` paths for one user.

        Runs one beam per start category (every category of the user's
        training items unless given), pooling the results.
        """
        if len(widths) < max_len:
            raise DataError("need one beam width per hop")
        if any(w < 1 for w in widths):
            raise DataError("beam widths must be positive")
        if start_categories is None:
            start_categories = sorted(train_category_set(self.dataset, user))
        out: list[ExplanationPath] = []
        for c0 in start_categories:
            out.extend(self._search_from(user, int(c0), widths, max_len))
        return out

    def _search_from(self, user: int, c0: int, widths: Sequence[int],
                     max_len: int) -> list[ExplanationPath]:
        hist = self.encoder.start(self.vectors.entity(user),
                                  self.vectors.category(c0),
                                  self.vectors.marker(),
                                  self.vectors.entity(user))
        beams = [_Beam(CategoryState(user, c0, c0, 0),
                       EntityState(user, user, pol.START_RELATION, 0),
                       hist, [], [c0], 0.0)]
        for depth in range(max_len):
            width = widths[depth]
            children: list[_Beam] = []
            for beam in beams:
                children.extend(self._expand(beam, width))
            beams = children
        return [ExplanationPath(user, b.steps, b.categories, b.score)
                for b in beams]

    def _expand(self, beam: _Beam, width: int) -> list[_Beam]:
        cat_actions = self.pruner.category_actions(beam.cat_state)
        cat_logits = pol.category_logits(self.params, self.vectors,
                                         beam.cat_state, cat_actions,
                                         beam.hist.y_category)
        cat_idx = int(np.argmax(pol.softmax_values(cat_logits)))
        cat_action = cat_actions[cat_idx]
        next_cat = apply_category_action(beam.cat_state, cat_action)

        ent_actions = self.pruner.entity_actions(beam.ent_state)
        logits = pol.entity_logits(self.params, self.vectors, beam.ent_state,
                                   ent_actions, beam.hist.y_entity,
                                   self.vectors.category(cat_action.category))
        z = logits.value - np.max(logits.value)
        log_probs = z - np.log(np.sum(np.exp(z)))
        order = sorted(range(len(ent_actions)),
                       key=lambda i: (-log_probs[i], i))
        # the category half of the history update is shared by all children
        y_c, cell_c = self.encoder.step_category(
            beam.hist, self.vectors.category(next_cat.category))
        children = []
        for i in order[:width]:
            action = ent_actions[i]
            next_ent = apply_entity_action(beam.ent_state, action)
            y_e, cell_e = self.encoder.step_entity(
                beam.hist, self.vectors.relation(action.relation),
                self.vectors.entity(next_ent.entity))
            children.append(_Beam(
                next_cat, next_ent, pol.HistoryState(y_c, y_e, cell_c, cell_e),
                beam.steps + [(action.relation, action.entity)],
                beam.categories + [next_cat.category],
                beam.score + float(log_probs[i])))
        return children


# ---------------------------------------------------------------------------
# ranking
# ---------------------------------------------------------------------------


@dataclass
class Recommendation:
    item: int
    score: float
    path: ExplanationPath


@dataclass
class RecommendationList:
    user: int
    entries: list[Recommendation]

    def items(self) -> list[int]:
        return [r.item for r in self.entries]


def rank_candidates(kg: KnowledgeGraph, paths: Sequence[ExplanationPath],
                    user: int, train_items: frozenset[int],
                    k: int) -> RecommendationList:
    """Item-terminal paths, training items dropped, best score per item."""
    if k < 1:
        raise DataError(f"top-k must be >= 1, got {k}")
    best: dict[int, ExplanationPath] = {}
    for path in paths:
        item = path.terminal
        if item is None or not kg.is_item(item) or item in train_items:
            continue
        kept = best.get(item)
        if kept is None or path.score > kept.score:
            best[item] = path
    ordered = sorted(best.items(), key=lambda kv: (-kv[1].score, kv[0]))
    return RecommendationList(
        user, [Recommendation(item, path.score, path)
               for item, path in ordered[:k]])


def recommend_users(store: ParamStore, dataset: Dataset,
                    table: EmbeddingTable, policy_config: PolicyConfig,
                    encoder_config: EncoderConfig,
                    users: Sequence[int] | None = None,
                    widths: Sequence[int] | None = None, max_len: int = 6,
                    k: int = 10, encoder_seed: int = 0,
                    category_cap: int = pol.CATEGORY_CAP,
                    entity_cap: int = pol.ENTITY_CAP,
                    workers: int = 1) -> dict[int, RecommendationList]:
    """Per-user inference over an immutable checkpoint.

    ``workers`` > 1 fans user inference out to a thread pool; results are
    aggregated in user order either way.
    """
    if users is None:
        users = dataset.split.users()
    if widths is None:
        widths = default_widths(max_len)
    item_vectors = compute_item_vectors(store, dataset.kg, table,
                                        dataset.assignment, encoder_config,
                                        seed=encoder_seed)
    searcher = BeamSearcher(store, dataset, table, policy_config,
                            item_vectors, category_cap=category_cap,
                            entity_cap=entity_cap)

    def one(user: int) -> tuple[int, RecommendationList]:
        paths = searcher.search(user, widths, max_len)
        ranked = rank_candidates(dataset.kg, paths, user,
                                 dataset.split.train_items(user), k)
        return user, ranked

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(one, users))
    else:
        results = dict(one(u) for u in users)
    return {u: results[u] for u in sorted(results)}


# ---------------------------------------------------------------------------
# path export
# ---------------------------------------------------------------------------


def format_path_line(kg: KnowledgeGraph, entity_names: Sequence[str],
                     category_names: Sequence[str],
                     rec: Recommendation) -> str:
    path = rec.path
    hops = "".join(f" -[{kg.relations[r].name}]-> {entity_names[e]}"
                   for r, e in path.moves)
    trace = " -> ".join(category_names[c] for c in path.category_trace())
    return (f"{entity_names[path.user]}\t{entity_names[rec.item]}"
            f"\t{rec.score!r}\t{entity_names[path.user]}{hops}\t{trace}")


def export_paths(path, kg: KnowledgeGraph,
                 lists: Mapping[int, RecommendationList],
                 category_names: Sequence[str]) -> None:
    """One line per recommendation: user, item, score, hops, category trace."""
    entity_names = [e.name for e in kg.entities]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for user in sorted(lists):
            for rec in lists[user].entries:
                fh.write(format_path_line(kg, entity_names, category_names,
                                          rec) + "\n")


def parse_path_line(kg: KnowledgeGraph, line: str
                    ) -> tuple[int, int, float, list[tuple[int, int]]]:
    """Recover (user, item, score, hops) from an exported line."""
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 5:
        raise DataError(f"malformed path line: {line!r}")
    user = kg.entity(parts[0]).id
    item = kg.entity(parts[1]).id
    score = float(parts[2])
    tokens = parts[3].split(" -[")
    position = kg.entity(tokens[0]).id
    if position != user:
        raise DataError("path does not start at the user")
    hops: list[tuple[int, int]] = []
    for token in tokens[1:]:
        rel_name, _, rest = token.partition("]-> ")
        rel = kg.relation(rel_name).id
        ent = kg.entity(rest).id
        hops.append((rel, ent))
    return user, item, score, hops
