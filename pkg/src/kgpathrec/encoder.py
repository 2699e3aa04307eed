"""High-order item representations.

Items (and only items) are re-encoded from their graph context in two
stages: attention-weighted neighbor propagation fused with a GRU-style
gated update, run for a configurable number of layers, followed by
attention over the item's neighboring categories.  Every other entity kind
keeps its raw pretrained row.

The whole pipeline runs on an autodiff tape, so the same code serves both
cached inference (untraced) and end-to-end training (traced).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tape, Var
from .embeddings import EmbeddingTable
from .graph import CategoryAssignment, KnowledgeGraph, item_category_neighbors

Array = np.ndarray

LEAKY_SLOPE = 0.2


@dataclass
class EncoderConfig:
    gnn_layers: int = 3
    attention_layers: int = 2
    trade_off: float = 0.4
    neighbor_cap: int = 25

    def validate(self) -> None:
        if self.gnn_layers < 1 or self.attention_layers < 1:
            raise ValueError("encoder needs at least one layer of each stage")
        if not 0.0 <= self.trade_off <= 1.0:
            raise ValueError(f"trade_off must lie in [0,1], got {self.trade_off}")
        if self.neighbor_cap < 1:
            raise ValueError("neighbor_cap must be >= 1")


GNN_MATS = ("w_in", "w_out", "w_z1", "w_self", "w_v1", "w_v2", "w_vh1", "w_vh2")


def init_encoder_params(store: ParamStore, dim: int, config: EncoderConfig,
                        rng: np.random.Generator) -> None:
    """Register all encoder parameters under the ``enc.`` prefix."""
    config.validate()
    scale = 1.0 / np.sqrt(dim)
    for k in range(config.gnn_layers):
        p = f"enc.gnn{k}."
        store.add(p + "w1", rng.normal(scale=scale, size=(dim, 4 * dim)))
        store.add(p + "w2", rng.normal(scale=scale, size=dim))
        store.add(p + "b", np.zeros(()))
        for name in GNN_MATS:
            store.add(p + name, rng.normal(scale=scale, size=(dim, dim)))
    for m in range(config.attention_layers):
        store.add(f"enc.att{m}.w_ic",
                  rng.normal(scale=scale, size=2 * dim))


class TableVars:
    """Lazy leaf Vars for embedding-table rows, one per distinct row.

    With ``named=True`` rows register as tape parameters so gradient checks
    can cover input embeddings.
    """

    def __init__(self, tape: Tape, table: EmbeddingTable, named: bool = False):
        self.tape = tape
        self.table = table
        self.named = named
        self._entity: dict[int, Var] = {}
        self._relation: dict[int, Var] = {}
        self._category: dict[int, Var] = {}
        self._marker: Var | None = None

    def _get(self, cache: dict[int, Var], matrix: Array, idx: int,
             label: str) -> Var:
        if idx not in cache:
            name = f"emb.{label}.{idx}" if self.named else None
            cache[idx] = self.tape.leaf(matrix[idx], name=name)
        return cache[idx]

    def entity(self, eid: int) -> Var:
        return self._get(self._entity, self.table.entity, eid, "entity")

    def relation(self, rid: int) -> Var:
        return self._get(self._relation, self.table.relation, rid, "relation")

    def category(self, cid: int) -> Var:
        return self._get(self._category, self.table.category, cid, "category")

    def marker(self) -> Var:
        if self._marker is None:
            name = "emb.marker" if self.named else None
            self._marker = self.tape.leaf(self.table.start_marker, name=name)
        return self._marker


# ---------------------------------------------------------------------------
# single equations
# ---------------------------------------------------------------------------


def triplet_repr(w1: Var, h_item: Var, h_nbr: Var, h_rel: Var,
                 h_purchase: Var) -> Var:
    """Edge summary with the purchase relation mixed in for shopping context."""
    return ad.sigmoid(ad.matvec(w1, ad.concat(h_item, h_nbr, h_rel, h_purchase)))


def relation_attention(w2: Var, bias: Var, t: Var) -> Var:
    """Scalar semantic-strength weight for one edge, in (0,1)."""
    return ad.sigmoid(ad.add(ad.dot(w2, t), bias))


def _sample_edges(edges: tuple[tuple[int, int], ...], cap: int,
                  seed_material: tuple[int, ...]) -> list[tuple[int, int]]:
    if len(edges) <= cap:
        return list(edges)
    rng = np.random.default_rng(seed_material)
    keep = sorted(rng.choice(len(edges), size=cap, replace=False))
    return [edges[i] for i in keep]


def propagate(layer: Mapping[str, Var], kg: KnowledgeGraph, item: int,
              layer_inputs: Mapping[int, Var], tvars: TableVars,
              neighbor_cap: int, seed: int, layer_index: int) -> Var | None:
    """Attention-weighted message sum over sampled in- and out-edges.

    User neighbors are excluded; relation rows use each edge's own
    direction.  Returns None for an isolated item (callers treat that as a
    zero message).
    """
    h_item = layer_inputs[item]
    h_purchase = tvars.relation(kg.purchase_relation_id)
    terms: list[Var] = []
    for direction, edges, w_key in (
            (0, kg.incoming(item), "w_in"),
            (1, kg.outgoing(item), "w_out")):
        usable = tuple((r, e) for r, e in edges if kg.kind_of(e) != "user")
        for rid, nbr in _sample_edges(usable, neighbor_cap,
                                      (seed, item, layer_index, direction)):
            h_nbr = layer_inputs[nbr]
            h_rel = tvars.relation(rid)
            t = triplet_repr(layer["w1"], h_item, h_nbr, h_rel, h_purchase)
            alpha = relation_attention(layer["w2"], layer["b"], t)
            msg = ad.matvec(layer[w_key], ad.mul(h_nbr, h_rel))
            terms.append(ad.smul(alpha, msg))
    if not terms:
        return None
    acc = terms[0]
    for term in terms[1:]:
        acc = ad.add(acc, term)
    return acc


def gated_update(layer: Mapping[str, Var], message: Var | None,
                 h_prev: Var) -> Var:
    """GRU-style fusion of the neighbor message with the previous state."""
    if message is None:
        message = h_prev.tape.leaf(np.zeros_like(h_prev.value))
    z = ad.sigmoid(ad.add(ad.matvec(layer["w_z1"], message),
                          ad.matvec(layer["w_self"], h_prev)))
    reset = ad.sigmoid(ad.add(ad.matvec(layer["w_v1"], message),
                              ad.matvec(layer["w_v2"], h_prev)))
    candidate = ad.tanh(ad.add(ad.matvec(layer["w_vh1"], message),
                               ad.matvec(layer["w_vh2"],
                                         ad.mul(reset, h_prev))))
    keep = ad.mul(ad.sub(h_prev.tape.leaf(np.ones_like(h_prev.value)), z),
                  h_prev)
    return ad.add(keep, ad.mul(z, candidate))


def category_attention(w_ic: Var, item_vec: Var, category_ids: tuple[int, ...],
                       category_vecs: Mapping[int, Var],
                       slope: float = LEAKY_SLOPE) -> tuple[Var, Var]:
    """Softmax attention over neighboring categories.

    Returns (weights over category_ids, weighted category context vector).
    """
    if not category_ids:
        raise ValueError("category_attention needs a nonempty category set")
    rows = ad.stack([ad.concat(item_vec, category_vecs[c])
                     for c in category_ids])
    scores = ad.leaky_relu(ad.matvec(rows, w_ic), slope=slope)
    weights = ad.softmax(scores)
    cat_matrix = ad.stack([category_vecs[c] for c in category_ids])
    context = ad.vecmat(weights, cat_matrix)
    return weights, context


# ---------------------------------------------------------------------------
# whole-graph encoding
# ---------------------------------------------------------------------------


def encode_items(tape: Tape, params: Mapping[str, Var], kg: KnowledgeGraph,
                 tvars: TableVars, assignment: CategoryAssignment,
                 config: EncoderConfig, seed: int = 0,
                 ) -> tuple[dict[int, Var], dict[int, Var]]:
    """Run the full pipeline for every item.

    Returns (final vectors, propagation-stage vectors).  Layer k always
    reads the neighbors' layer-(k-1) vectors; non-item neighbors contribute
    their raw table rows at every layer.  With trade_off == 0 the final
    vector IS the propagation-stage Var, bit-exactly.
    """
    items = kg.entities_of_kind("item")
    current: dict[int, Var] = {e.id: tvars.entity(e.id) for e in kg.entities}
    for k in range(config.gnn_layers):
        layer = {key: params[f"enc.gnn{k}.{key}"]
                 for key in ("w1", "w2", "b") + GNN_MATS}
        updated: dict[int, Var] = {}
        for item in items:
            msg = propagate(layer, kg, item, current, tvars,
                            config.neighbor_cap, seed, k)
            updated[item] = gated_update(layer, msg, current[item])
        current = dict(current)
        current.update(updated)

    gnn_out = {item: current[item] for item in items}

    neighbor_cats = {item: item_category_neighbors(kg, assignment, item)
                     for item in items}
    cat_vecs: dict[int, Var] = {c: tvars.category(c)
                                for c in range(assignment.n_categories)}
    stage = dict(gnn_out)
    for m in range(config.attention_layers):
        w_ic = params[f"enc.att{m}.w_ic"]
        next_stage: dict[int, Var] = {}
        for item in items:
            _, context = category_attention(w_ic, stage[item],
                                            neighbor_cats[item], cat_vecs)
            next_stage[item] = context
        if m + 1 < config.attention_layers:
            cat_vecs = {c: ad.vmean([next_stage[i]
                                     for i in assignment.members[c]])
                        for c in range(assignment.n_categories)}
        stage = next_stage

    if config.trade_off == 0.0:
        final = dict(gnn_out)
    else:
        final = {item: ad.add(gnn_out[item],
                              ad.scale(stage[item], config.trade_off))
                 for item in items}
    return final, gnn_out


def compute_item_vectors(store: ParamStore, kg: KnowledgeGraph,
                         table: EmbeddingTable,
                         assignment: CategoryAssignment,
                         config: EncoderConfig, seed: int = 0,
                         ) -> dict[int, Array]:
    """Untraced full-graph pass; plain arrays for caching."""
    tape = Tape(trace=False)
    tvars = TableVars(tape, table)
    params = {name: tape.leaf(store[name]) for name in store.names()
              if name.startswith("enc.")}
    final, _ = encode_items(tape, params, kg, tvars, assignment, config, seed)
    return {item: var.value for item, var in final.items()}


class ItemVectorCache:
    """Item vectors stamped with a parameter version; stale reads raise."""

    def __init__(self):
        self.version: int | None = None
        self.vectors: dict[int, Array] = {}

    def refresh(self, version: int, store: ParamStore, kg: KnowledgeGraph,
                table: EmbeddingTable, assignment: CategoryAssignment,
                config: EncoderConfig, seed: int = 0) -> None:
        self.vectors = compute_item_vectors(store, kg, table, assignment,
                                            config, seed)
        self.version = version

    def get(self, item: int, version: int) -> Array:
        if self.version != version:
            raise ValueError("item-vector cache is stale; refresh() first")
        return self.vectors[item]
