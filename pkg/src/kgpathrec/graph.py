"""Knowledge-graph data model, TSV ingestion, and derived structures.

Entities are typed (user/item/brand/feature) with dense ids assigned by
first appearance.  Every forward triple gets a synthesized inverse, so the
out-adjacency of a node covers both directions of travel.  Categories are
not entities; they live only in the abstract category graph derived from
item-to-item triples.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

ENTITY_KINDS = ("user", "item", "brand", "feature")

# Forward relation vocabulary of the Amazon-style schema; the loader is
# open to any names, this is only the default used by the generator.
DEFAULT_RELATIONS = (
    "purchase",
    "mention",
    "described_by",
    "produced_by",
    "also_bought",
    "also_viewed",
    "bought_together",
)

INVERSE_SUFFIX = "_inv"


@dataclass(frozen=True)
class Entity:
    id: int
    name: str
    kind: str


@dataclass(frozen=True)
class Relation:
    id: int
    name: str
    is_inverse: bool
    inverse_id: int


class KnowledgeGraph:
    """Immutable multi-relational graph with materialized inverse triples."""

    def __init__(self, entities: list[Entity], forward_relation_names: list[str],
                 forward_triples: list[tuple[int, int, int]],
                 purchase_relation: str, duplicates_dropped: int = 0):
        self.entities = entities
        self._by_name = {e.name: e for e in entities}
        self._kind_ids: dict[str, list[int]] = {k: [] for k in ENTITY_KINDS}
        for e in entities:
            self._kind_ids[e.kind].append(e.id)

        n_fwd = len(forward_relation_names)
        relations: list[Relation] = []
        for i, name in enumerate(forward_relation_names):
            relations.append(Relation(i, name, False, i + n_fwd))
        for i, name in enumerate(forward_relation_names):
            relations.append(Relation(i + n_fwd, name + INVERSE_SUFFIX, True, i))
        self.relations = relations
        self._rel_by_name = {r.name: r for r in relations}

        if purchase_relation not in self._rel_by_name:
            raise DataError(f"purchase relation {purchase_relation!r} is not "
                            f"in the relation vocabulary")
        self.purchase_relation_id = self._rel_by_name[purchase_relation].id
        self.duplicates_dropped = duplicates_dropped

        self.forward_triples = list(forward_triples)
        self._validate_forward_triples()

        triples: list[tuple[int, int, int]] = []
        for h, r, t in self.forward_triples:
            triples.append((h, r, t))
            triples.append((t, relations[r].inverse_id, h))
        self.triples = triples
        self._triple_set = frozenset(triples)

        out: list[list[tuple[int, int]]] = [[] for _ in entities]
        inc: list[list[tuple[int, int]]] = [[] for _ in entities]
        for h, r, t in triples:
            out[h].append((r, t))
            inc[t].append((r, h))
        self._out = [tuple(sorted(set(edges))) for edges in out]
        self._in = [tuple(sorted(set(edges))) for edges in inc]

    def _validate_forward_triples(self) -> None:
        pid = self.purchase_relation_id
        for h, r, t in self.forward_triples:
            if r == pid:
                if h == t:
                    raise DataError(f"self-referential purchase edge on entity "
                                    f"{self.entities[h].name!r}")
                if self.entities[h].kind != "user" or self.entities[t].kind != "item":
                    raise DataError(
                        f"purchase edge must connect user to item, got "
                        f"{self.entities[h].kind} -> {self.entities[t].kind} "
                        f"({self.entities[h].name!r}, {self.entities[t].name!r})")

    # -- lookups -------------------------------------------------------------

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def entity(self, name: str) -> Entity:
        try:
            return self._by_name[name]
        except KeyError:
            raise DataError(f"unknown entity {name!r}") from None

    def relation(self, name: str) -> Relation:
        try:
            return self._rel_by_name[name]
        except KeyError:
            raise DataError(f"unknown relation {name!r}") from None

    def kind_of(self, eid: int) -> str:
        return self.entities[eid].kind

    def is_item(self, eid: int) -> bool:
        return self.entities[eid].kind == "item"

    def entities_of_kind(self, kind: str) -> list[int]:
        return list(self._kind_ids[kind])

    def outgoing(self, eid: int) -> tuple[tuple[int, int], ...]:
        """Out-edges as (relation id, target id), in a fixed total order."""
        return self._out[eid]

    def incoming(self, eid: int) -> tuple[tuple[int, int], ...]:
        return self._in[eid]

    def has_triple(self, h: int, r: int, t: int) -> bool:
        return (h, r, t) in self._triple_set

    def inverse_of(self, rid: int) -> int:
        return self.relations[rid].inverse_id

    def purchases_of(self, user: int) -> list[int]:
        pid = self.purchase_relation_id
        return [t for r, t in self._out[user] if r == pid]


# ---------------------------------------------------------------------------
# category structures
# ---------------------------------------------------------------------------


class CategoryAssignment:
    """Item-to-category membership; every item belongs to >= 1 category."""

    def __init__(self, names: list[str], item_categories: dict[int, frozenset[int]]):
        self.names = list(names)
        self.item_categories = dict(item_categories)
        members: list[list[int]] = [[] for _ in names]
        for item, cats in item_categories.items():
            for c in cats:
                members[c].append(item)
        self.members = [sorted(m) for m in members]
        for c, m in enumerate(self.members):
            if not m:
                raise DataError(f"category {self.names[c]!r} has no items")

    @property
    def n_categories(self) -> int:
        return len(self.names)

    def categories_of(self, item: int) -> frozenset[int]:
        try:
            return self.item_categories[item]
        except KeyError:
            raise DataError(f"item id {item} has no category") from None


class CategoryGraph:
    """Abstract graph over item-categories.

    Two categories are connected when at least one triple links items
    assigned to them; each directed edge remembers the witnessing relation
    ids.  Self-edges appear when two items of one category are linked.
    """

    def __init__(self, n_categories: int,
                 witnesses: dict[tuple[int, int], frozenset[int]]):
        self.n_categories = n_categories
        self.witnesses = dict(witnesses)
        nbrs: dict[int, set[int]] = {c: set() for c in range(n_categories)}
        for (a, b) in witnesses:
            nbrs[a].add(b)
        self._neighbors = {c: tuple(sorted(s)) for c, s in nbrs.items()}

    def neighbors(self, c: int) -> tuple[int, ...]:
        return self._neighbors[c]

    def has_edge(self, a: int, b: int) -> bool:
        return (a, b) in self.witnesses

    def edges(self) -> list[tuple[int, int]]:
        return sorted(self.witnesses)


def build_category_graph(kg: KnowledgeGraph,
                         assignment: CategoryAssignment) -> CategoryGraph:
    """Edge set = exactly the pairs witnessed by item-to-item triples."""
    for item in kg.entities_of_kind("item"):
        if item not in assignment.item_categories:
            raise DataError(f"item {kg.entities[item].name!r} has no category")
    witnesses: dict[tuple[int, int], set[int]] = {}
    for h, r, t in kg.triples:
        if not (kg.is_item(h) and kg.is_item(t)):
            continue
        for ca in assignment.item_categories[h]:
            for cb in assignment.item_categories[t]:
                witnesses.setdefault((ca, cb), set()).add(r)
    return CategoryGraph(assignment.n_categories,
                         {k: frozenset(v) for k, v in witnesses.items()})


def item_category_neighbors(kg: KnowledgeGraph, assignment: CategoryAssignment,
                            item: int) -> tuple[int, ...]:
    """Categories of one-hop item neighbors plus the item's own categories.

    Reach is one hop over item-to-item relations in either direction
    (inverse closure makes the out-adjacency cover both).
    """
    if not kg.is_item(item):
        raise DataError(f"entity {kg.entities[item].name!r} is not an item")
    cats: set[int] = set(assignment.categories_of(item))
    for _, nbr in kg.outgoing(item):
        if kg.is_item(nbr):
            cats.update(assignment.categories_of(nbr))
    return tuple(sorted(cats))


# ---------------------------------------------------------------------------
# interaction split
# ---------------------------------------------------------------------------


@dataclass
class InteractionSplit:
    """Per-user train/test item sets; test items never reach training."""

    train: dict[int, tuple[int, ...]]
    test: dict[int, tuple[int, ...]]
    excluded_users: tuple[int, ...] = ()

    def train_items(self, user: int) -> frozenset[int]:
        return frozenset(self.train.get(user, ()))

    def test_items(self, user: int) -> frozenset[int]:
        return frozenset(self.test.get(user, ()))

    def users(self) -> list[int]:
        return sorted(self.train)


def split_interactions(kg: KnowledgeGraph, ratio: float,
                       seed: int) -> InteractionSplit:
    """Per-user shuffled split of purchase edges at floor(ratio * n).

    Every user keeps at least one training item; users without purchases
    are excluded and reported.  Deterministic under the seed.
    """
    if not 0.0 < ratio < 1.0:
        raise DataError(f"split ratio must be in (0,1), got {ratio}")
    rng = np.random.default_rng(seed)
    train: dict[int, tuple[int, ...]] = {}
    test: dict[int, tuple[int, ...]] = {}
    excluded: list[int] = []
    for user in kg.entities_of_kind("user"):
        items = sorted(kg.purchases_of(user))
        if not items:
            excluded.append(user)
            continue
        order = rng.permutation(len(items))
        shuffled = [items[i] for i in order]
        n_train = max(1, int(len(items) * ratio))
        train[user] = tuple(shuffled[:n_train])
        test[user] = tuple(shuffled[n_train:])
    if excluded:
        log.warning("excluded %d users with zero purchases", len(excluded))
    return InteractionSplit(train, test, tuple(excluded))


# ---------------------------------------------------------------------------
# TSV input / output
# ---------------------------------------------------------------------------


def read_tsv_rows(path: Path, n_fields: int) -> list[tuple[str, ...]]:
    rows: list[tuple[str, ...]] = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = tuple(line.split("\t"))
            if len(parts) != n_fields:
                raise DataError(f"{path.name} line {lineno}: expected "
                                f"{n_fields} tab-separated fields, got {len(parts)}")
            if any(not p for p in parts):
                raise DataError(f"{path.name} line {lineno}: empty field")
            rows.append(parts)
    return rows


def load_entities(path: str | Path) -> list[Entity]:
    path = Path(path)
    entities: list[Entity] = []
    seen: dict[str, int] = {}
    for lineno, (name, kind) in enumerate(read_tsv_rows(path, 2), start=1):
        if kind not in ENTITY_KINDS:
            raise DataError(f"{path.name} line {lineno}: unknown entity kind "
                            f"{kind!r}")
        if name in seen:
            raise DataError(f"{path.name} line {lineno}: duplicate entity "
                            f"{name!r}")
        seen[name] = len(entities)
        entities.append(Entity(len(entities), name, kind))
    return entities


def load_knowledge_graph(triples_path: str | Path, entities_path: str | Path,
                         purchase_relation: str = "purchase",
                         allowed_relations: tuple[str, ...] | None = None,
                         ) -> KnowledgeGraph:
    """Load entities and forward triples; apply inverse closure.

    Relation ids are assigned by first appearance in the triples file;
    duplicate triples are dropped with a warning.  Unknown entity tokens,
    and unknown relations when a vocabulary is supplied, are data errors.
    """
    triples_path = Path(triples_path)
    entities = load_entities(entities_path)
    by_name = {e.name: e.id for e in entities}

    rel_names: list[str] = []
    rel_ids: dict[str, int] = {}
    if allowed_relations is not None:
        for name in allowed_relations:
            rel_ids[name] = len(rel_names)
            rel_names.append(name)

    triples: list[tuple[int, int, int]] = []
    seen: set[tuple[int, int, int]] = set()
    duplicates = 0
    for lineno, (head, rel, tail) in enumerate(read_tsv_rows(triples_path, 3), start=1):
        if head not in by_name:
            raise DataError(f"{triples_path.name} line {lineno}: unknown "
                            f"entity {head!r}")
        if tail not in by_name:
            raise DataError(f"{triples_path.name} line {lineno}: unknown "
                            f"entity {tail!r}")
        if rel.endswith(INVERSE_SUFFIX):
            raise DataError(f"{triples_path.name} line {lineno}: inverse "
                            f"relation {rel!r} may not appear in input")
        if rel not in rel_ids:
            if allowed_relations is not None:
                raise DataError(f"{triples_path.name} line {lineno}: unknown "
                                f"relation {rel!r}")
            rel_ids[rel] = len(rel_names)
            rel_names.append(rel)
        triple = (by_name[head], rel_ids[rel], by_name[tail])
        if triple in seen:
            duplicates += 1
            continue
        seen.add(triple)
        triples.append(triple)
    if duplicates:
        log.warning("dropped %d duplicate triples from %s", duplicates,
                    triples_path)
    if purchase_relation not in rel_ids:
        rel_ids[purchase_relation] = len(rel_names)
        rel_names.append(purchase_relation)
    return KnowledgeGraph(entities, rel_names, triples, purchase_relation,
                          duplicates_dropped=duplicates)


def load_category_assignment(path: str | Path,
                             kg: KnowledgeGraph) -> CategoryAssignment:
    path = Path(path)
    names: list[str] = []
    ids: dict[str, int] = {}
    item_cats: dict[int, set[int]] = {}
    for lineno, (item_name, cat_name) in enumerate(read_tsv_rows(path, 2), start=1):
        entity = kg.entity(item_name)
        if entity.kind != "item":
            raise DataError(f"{path.name} line {lineno}: {item_name!r} is not "
                            f"an item")
        if cat_name not in ids:
            ids[cat_name] = len(names)
            names.append(cat_name)
        item_cats.setdefault(entity.id, set()).add(ids[cat_name])
    missing = [kg.entities[i].name for i in kg.entities_of_kind("item")
               if i not in item_cats]
    if missing:
        shown = ", ".join(repr(m) for m in missing[:5])
        raise DataError(f"{len(missing)} items have no category (e.g. {shown})")
    return CategoryAssignment(names, {k: frozenset(v)
                                      for k, v in item_cats.items()})


def load_interactions(path: str | Path, kg: KnowledgeGraph,
                      ) -> list[tuple[int, int]]:
    path = Path(path)
    pairs: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    for lineno, (user_name, item_name) in enumerate(read_tsv_rows(path, 2), start=1):
        user = kg.entity(user_name)
        item = kg.entity(item_name)
        if user.kind != "user" or item.kind != "item":
            raise DataError(f"{path.name} line {lineno}: interaction must pair "
                            f"a user with an item")
        pair = (user.id, item.id)
        if pair in seen:
            continue
        seen.add(pair)
        pairs.append(pair)
    return pairs


# ---------------------------------------------------------------------------
# normalized dataset directories
# ---------------------------------------------------------------------------

DATASET_FILES = ("entities.tsv", "triples.tsv", "categories.tsv",
                 "train.tsv", "test.tsv")


@dataclass
class Dataset:
    """In-memory bundle of one normalized dataset directory."""

    kg: KnowledgeGraph
    assignment: CategoryAssignment
    split: InteractionSplit
    category_graph: CategoryGraph = field(init=False)

    def __post_init__(self):
        self.category_graph = build_category_graph(self.kg, self.assignment)


def save_dataset(directory: str | Path, kg: KnowledgeGraph,
                 assignment: CategoryAssignment, split: InteractionSplit) -> None:
    """Write the normalized TSV layout (forward triples only, no purchases).

    Purchase edges are emitted to train.tsv rather than triples.tsv so a
    reload rebuilds the same training-view graph without test leakage.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ename = [e.name for e in kg.entities]

    with open(directory / "entities.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for e in kg.entities:
            fh.write(f"{e.name}\t{e.kind}\n")

    pid = kg.purchase_relation_id
    with open(directory / "triples.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for h, r, t in kg.forward_triples:
            if r == pid:
                continue
            fh.write(f"{ename[h]}\t{kg.relations[r].name}\t{ename[t]}\n")

    with open(directory / "categories.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for item in sorted(assignment.item_categories):
            for c in sorted(assignment.item_categories[item]):
                fh.write(f"{ename[item]}\t{assignment.names[c]}\n")

    for fname, table in (("train.tsv", split.train), ("test.tsv", split.test)):
        with open(directory / fname, "w", encoding="utf-8", newline="\n") as fh:
            for user in sorted(table):
                for item in table[user]:
                    fh.write(f"{ename[user]}\t{ename[item]}\n")


def load_dataset(directory: str | Path,
                 purchase_relation: str = "purchase") -> Dataset:
    """Rebuild a Dataset from a normalized directory.

    The training-view graph is the forward triples plus the train.tsv
    purchases; test pairs are held out of the graph entirely.
    """
    directory = Path(directory)
    for fname in DATASET_FILES:
        if not (directory / fname).exists():
            raise DataError(f"dataset directory {directory} is missing {fname} "
                            f"(run the ingest or synth command first)")
    entities = load_entities(directory / "entities.tsv")
    by_name = {e.name: e.id for e in entities}

    rel_names: list[str] = []
    rel_ids: dict[str, int] = {}
    triples: list[tuple[int, int, int]] = []
    seen: set[tuple[int, int, int]] = set()
    for lineno, (head, rel, tail) in enumerate(
            read_tsv_rows(directory / "triples.tsv", 3), start=1):
        for name in (head, tail):
            if name not in by_name:
                raise DataError(f"triples.tsv line {lineno}: unknown entity "
                                f"{name!r}")
        if rel not in rel_ids:
            rel_ids[rel] = len(rel_names)
            rel_names.append(rel)
        triple = (by_name[head], rel_ids[rel], by_name[tail])
        if triple not in seen:
            seen.add(triple)
            triples.append(triple)

    if purchase_relation not in rel_ids:
        rel_ids[purchase_relation] = len(rel_names)
        rel_names.append(purchase_relation)
    pid = rel_ids[purchase_relation]

    def read_pairs(fname: str) -> dict[int, tuple[int, ...]]:
        table: dict[int, list[int]] = {}
        for lineno, (user_name, item_name) in enumerate(
                read_tsv_rows(directory / fname, 2), start=1):
            for name in (user_name, item_name):
                if name not in by_name:
                    raise DataError(f"{fname} line {lineno}: unknown entity "
                                    f"{name!r}")
            table.setdefault(by_name[user_name], []).append(by_name[item_name])
        return {u: tuple(items) for u, items in table.items()}

    train = read_pairs("train.tsv")
    test = read_pairs("test.tsv")
    for user, items in train.items():
        for item in items:
            triple = (user, pid, item)
            if triple not in seen:
                seen.add(triple)
                triples.append(triple)

    kg = KnowledgeGraph(entities, rel_names, triples, purchase_relation)
    assignment = load_category_assignment(directory / "categories.tsv", kg)
    split = InteractionSplit(train, {u: test.get(u, ()) for u in train})
    return Dataset(kg, assignment, split)
