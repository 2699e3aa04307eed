"""Synthetic knowledge-graph generator for desk-scale experiments.

The generator plants (user, target) pairs whose targets are reachable only
through item-to-item chains of a configured minimum length, never through a
direct purchase.  Regular items form per-category rings whose co-purchased
pairs give the policy a learnable cross-selling signal; chain hops carry
feature chaff so an untrained search rarely stumbles onto a target.  Every
plant is verified by breadth-first search before the graph is returned.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .graph import (CategoryAssignment, Entity, InteractionSplit,
                    KnowledgeGraph, DEFAULT_RELATIONS)


@dataclass
class SynthConfig:
    users: int = 24
    categories: int = 8
    items_per_category: int = 6
    brands: int = 6
    features: int = 16
    purchases_per_user: int = 6
    mentions_per_user: int = 3
    features_per_item: int = 2
    cross_links: int = 16
    planted_pairs: int = 24
    min_plant_hops: int = 4
    max_hops: int = 6
    chain_chaff_features: int = 6
    target_ratio: float | None = None

    def validate(self) -> None:
        if self.users < 1 or self.categories < 1 or self.items_per_category < 2:
            raise DataError("need at least 1 user, 1 category, 2 items per category")
        if self.purchases_per_user < 1:
            raise DataError("purchases_per_user must be >= 1")
        if self.purchases_per_user > self.categories * self.items_per_category:
            raise DataError("not enough regular items for the requested purchases")
        if self.planted_pairs > 0:
            if self.min_plant_hops < 2:
                raise DataError("planted chains need min_plant_hops >= 2")
            if self.min_plant_hops > self.max_hops:
                raise DataError(
                    f"infeasible plant: min_plant_hops={self.min_plant_hops} "
                    f"exceeds the hop budget L={self.max_hops}")


@dataclass
class SynthResult:
    kg: KnowledgeGraph
    assignment: CategoryAssignment
    split: InteractionSplit
    planted: list[tuple[int, int]]
    report: dict = field(default_factory=dict)


def shortest_path_length(kg: KnowledgeGraph, src: int, dst: int,
                         cap: int) -> int | None:
    """Unlabeled BFS distance over the closed graph, or None beyond cap."""
    if src == dst:
        return 0
    seen = {src}
    frontier = deque([(src, 0)])
    while frontier:
        node, depth = frontier.popleft()
        if depth >= cap:
            continue
        for _, nxt in kg.outgoing(node):
            if nxt == dst:
                return depth + 1
            if nxt not in seen:
                seen.add(nxt)
                frontier.append((nxt, depth + 1))
    return None


def generate_synthetic(config: SynthConfig, seed: int) -> SynthResult:
    """Build the planted KG; deterministic under the seed.

    The returned split uses every generated purchase as a training
    interaction and the planted targets as the per-user test set, so the
    graph itself never contains an edge shortcutting a plant.
    """
    config.validate()
    rng = np.random.default_rng(seed)

    entities: list[Entity] = []

    def new_entity(name: str, kind: str) -> int:
        entities.append(Entity(len(entities), name, kind))
        return entities[-1].id

    users = [new_entity(f"u{i}", "user") for i in range(config.users)]
    rings: list[list[int]] = []
    for c in range(config.categories):
        ring = [new_entity(f"i{c}_{j}", "item")
                for j in range(config.items_per_category)]
        rings.append(ring)
    brands = [new_entity(f"b{i}", "brand") for i in range(config.brands)]
    features = [new_entity(f"f{i}", "feature") for i in range(config.features)]

    item_cats: dict[int, set[int]] = {}
    for c, ring in enumerate(rings):
        for item in ring:
            item_cats[item] = {c}

    rel = {name: i for i, name in enumerate(DEFAULT_RELATIONS)}
    triples: list[tuple[int, int, int]] = []
    triple_set: set[tuple[int, int, int]] = set()

    def emit(h: int, r: str, t: int) -> None:
        triple = (h, rel[r], t)
        if triple not in triple_set:
            triple_set.add(triple)
            triples.append(triple)

    # ring structure: co-purchasable neighbors inside each category
    for ring in rings:
        n = len(ring)
        for j in range(n):
            emit(ring[j], "also_bought", ring[(j + 1) % n])

    # sparse cross-category noise so the category graph is connected
    all_regular = [item for ring in rings for item in ring]
    for _ in range(config.cross_links):
        a, b = rng.choice(len(all_regular), size=2, replace=False)
        if item_cats[all_regular[a]] != item_cats[all_regular[b]]:
            emit(all_regular[a], "also_viewed", all_regular[b])

    # item attributes
    for ring in rings:
        brand = brands[rng.integers(len(brands))] if brands else None
        for item in ring:
            if brand is not None:
                emit(item, "produced_by", brand)
            if features:
                picks = rng.choice(len(features),
                                   size=min(config.features_per_item, len(features)),
                                   replace=False)
                for f in picks:
                    emit(item, "described_by", features[f])

    # purchases: adjacent ring pairs so co-purchased items are linked
    train: dict[int, list[int]] = {u: [] for u in users}
    home_cats: dict[int, list[int]] = {}
    for u in users:
        n_pairs = (config.purchases_per_user + 1) // 2
        cats = rng.choice(config.categories,
                          size=min(n_pairs, config.categories),
                          replace=False)
        home_cats[u] = [int(c) for c in cats]
        bought = 0
        for c in home_cats[u]:
            ring = rings[c]
            start = int(rng.integers(len(ring)))
            for k in range(2):
                if bought >= config.purchases_per_user:
                    break
                item = ring[(start + k) % len(ring)]
                if item not in train[u]:
                    emit(u, "purchase", item)
                    train[u].append(item)
                    bought += 1

    # user chatter
    for u in users:
        if features and config.mentions_per_user:
            picks = rng.choice(len(features),
                               size=min(config.mentions_per_user, len(features)),
                               replace=False)
            for f in picks:
                emit(u, "mention", features[f])

    # planted chains: purchase -> also_bought/bought_together hops to a
    # fresh target item; chain items carry only chain edges plus feature
    # chaff, so the only route to the target is the full chain.  Chaff uses
    # a dedicated feature pool per chain depth: reusing user-mentioned or
    # regular-item features would open sub-minimum shortcuts.
    chaff_pools: list[list[int]] = []
    if config.planted_pairs > 0 and config.chain_chaff_features > 0:
        for depth in range(config.min_plant_hops - 1):
            chaff_pools.append([new_entity(f"fc{depth}_{j}", "feature")
                                for j in range(config.chain_chaff_features)])
    planted: list[tuple[int, int]] = []
    test: dict[int, list[int]] = {u: [] for u in users}
    chain_serial = 0
    for p in range(config.planted_pairs):
        u = users[p % len(users)]
        hops = config.min_plant_hops
        chain = [new_entity(f"p{chain_serial}_{k}", "item") for k in range(hops)]
        chain_serial += 1
        target = chain[-1]
        start_cat = home_cats[u][0] if home_cats[u] else 0
        target_cat = home_cats[u][-1] if home_cats[u] else 0
        item_cats[chain[0]] = {start_cat}
        transit_pool = [c for c in range(config.categories)
                        if c not in (start_cat, target_cat)] or [start_cat]
        for k in range(1, hops - 1):
            item_cats[chain[k]] = {transit_pool[int(rng.integers(len(transit_pool)))]}
        item_cats[target] = {target_cat}

        emit(u, "purchase", chain[0])
        train[u].append(chain[0])
        for k in range(hops - 1):
            link = "also_bought" if k % 2 == 0 else "bought_together"
            emit(chain[k], link, chain[k + 1])
        for depth, node in enumerate(chain[:-1]):
            if chaff_pools:
                for f in chaff_pools[depth]:
                    emit(node, "described_by", f)
        planted.append((u, target))
        test[u].append(target)

    # optional density padding toward a Table-I-like triples/entities ratio
    if config.target_ratio is not None:
        want_forward = int(np.ceil(config.target_ratio * len(entities) / 2.0))
        guard = 0
        while len(triples) < want_forward and guard < 100 * want_forward:
            guard += 1
            if rng.random() < 0.5 and features:
                u = users[int(rng.integers(len(users)))]
                emit(u, "mention", features[int(rng.integers(len(features)))])
            elif features:
                item = all_regular[int(rng.integers(len(all_regular)))]
                emit(item, "described_by",
                     features[int(rng.integers(len(features)))])
        if len(triples) < want_forward:
            raise DataError("target_ratio unreachable: feature pool too small")

    kg = KnowledgeGraph(entities, list(DEFAULT_RELATIONS), triples, "purchase")
    assignment = CategoryAssignment(
        [f"c{c}" for c in range(config.categories)],
        {item: frozenset(cats) for item, cats in item_cats.items()})

    for u, target in planted:
        dist = shortest_path_length(kg, u, target, config.max_hops)
        if dist is None or dist < config.min_plant_hops:
            raise DataError(
                f"plant verification failed for ({entities[u].name}, "
                f"{entities[target].name}): shortest path {dist}")

    split = InteractionSplit(
        {u: tuple(items) for u, items in train.items() if items},
        {u: tuple(test[u]) for u, items in train.items() if items})
    report = {
        "entities": kg.n_entities,
        "forward_triples": len(kg.forward_triples),
        "triples": len(kg.triples),
        "triples_per_entity": len(kg.triples) / kg.n_entities,
        "planted_pairs": len(planted),
        "categories": config.categories,
    }
    return SynthResult(kg, assignment, split, planted, report)
