"""Dual-agent decision core: states, pruned actions, and shared policies.

Two agents walk in lockstep: one over the category graph, one over the
knowledge graph.  Their recurrent histories are cross-mixed each step, and
the entity head is conditioned on the category agent's chosen action, which
is what makes the counterfactual influence measure well-defined.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tape, Var
from .embeddings import EmbeddingTable
from .graph import CategoryGraph, InteractionSplit, KnowledgeGraph

Array = np.ndarray

START_RELATION = -1  # arrival marker for an agent's initial position

CATEGORY_CAP = 10
ENTITY_CAP = 50


@dataclass(frozen=True)
class CategoryState:
    user: int
    start_category: int
    category: int
    step: int


@dataclass(frozen=True)
class EntityState:
    user: int
    entity: int
    relation: int  # arrival relation, START_RELATION at the start
    step: int
    prev_entity: int | None = None


@dataclass(frozen=True)
class CategoryAction:
    category: int
    is_self_loop: bool = False


@dataclass(frozen=True)
class EntityAction:
    relation: int
    entity: int
    is_self_loop: bool = False


def apply_category_action(state: CategoryState,
                          action: CategoryAction) -> CategoryState:
    return replace(state, category=action.category, step=state.step + 1)


def apply_entity_action(state: EntityState,
                        action: EntityAction) -> EntityState:
    return EntityState(state.user, action.entity, action.relation,
                       state.step + 1,
                       prev_entity=None if action.is_self_loop else state.entity)


# ---------------------------------------------------------------------------
# action pruning
# ---------------------------------------------------------------------------


class ActionPruner:
    """Score-pruned action sets with the self-loop always in front.

    Category neighbors are scored against the user profile (mean vector of
    the user's training items); entity out-edges against the user's own
    row.  Items contribute their encoded vectors, everything else its raw
    table row.  Ties break on ascending ids so pruning is deterministic.
    """

    def __init__(self, kg: KnowledgeGraph, cgraph: CategoryGraph,
                 table: EmbeddingTable, split: InteractionSplit,
                 item_vectors: Mapping[int, Array],
                 category_cap: int = CATEGORY_CAP,
                 entity_cap: int = ENTITY_CAP):
        self.kg = kg
        self.cgraph = cgraph
        self.table = table
        self.item_vectors = item_vectors
        self.category_cap = category_cap
        self.entity_cap = entity_cap
        self._profiles: dict[int, Array] = {}
        for user, items in split.train.items():
            self._profiles[user] = np.mean(
                [self.entity_vector(i) for i in items], axis=0)
        self._category_memo: dict[tuple[int, int], list[CategoryAction]] = {}
        self._entity_memo: dict[tuple, list[EntityAction]] = {}

    def entity_vector(self, eid: int) -> Array:
        if eid in self.item_vectors:
            return self.item_vectors[eid]
        return self.table.entity[eid]

    def user_profile(self, user: int) -> Array:
        return self._profiles[user]

    def category_actions(self, state: CategoryState) -> list[CategoryAction]:
        key = (state.user, state.category)
        memo = self._category_memo.get(key)
        if memo is not None:
            return memo
        profile = self._profiles[state.user]
        scored = []
        for c in self.cgraph.neighbors(state.category):
            if c == state.category:
                continue  # staying put is the self-loop's job
            scored.append((-float(profile @ self.table.category[c]), c))
        scored.sort()
        keep = scored[:self.category_cap - 1]
        actions = ([CategoryAction(state.category, is_self_loop=True)]
                   + [CategoryAction(c) for _, c in keep])
        self._category_memo[key] = actions
        return actions

    def entity_actions(self, state: EntityState) -> list[EntityAction]:
        banned: tuple[int, int] | None = None
        if state.prev_entity is not None and state.relation >= 0:
            banned = (self.kg.inverse_of(state.relation), state.prev_entity)
        key = (state.user, state.entity, banned)
        memo = self._entity_memo.get(key)
        if memo is not None:
            return memo
        user_row = self.table.entity[state.user]
        scored = []
        for r, e in self.kg.outgoing(state.entity):
            if (r, e) == banned:
                continue  # no immediate backtrack through the inverse edge
            scored.append((-float(user_row @ self.entity_vector(e)), r, e))
        scored.sort()
        keep = scored[:self.entity_cap - 1]
        actions = ([EntityAction(START_RELATION, state.entity,
                                 is_self_loop=True)]
                   + [EntityAction(r, e) for _, r, e in keep])
        self._entity_memo[key] = actions
        return actions


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass
class PolicyConfig:
    dim: int
    hidden: int | None = None  # recurrent width, defaults to 2 * dim

    def __post_init__(self):
        if self.hidden is None:
            self.hidden = 2 * self.dim


def init_policy_params(store: ParamStore, config: PolicyConfig,
                       rng: np.random.Generator) -> None:
    """Register all policy parameters under the ``pol.`` prefix."""
    d, h = config.dim, config.hidden
    scale = 1.0 / np.sqrt(h)
    for agent, input_dim in (("c", 2 * d), ("e", 3 * d)):
        for gate, shape in ad.lstm_param_shapes(h, input_dim).items():
            init = (np.zeros(shape) if shape == (h,)
                    else rng.normal(scale=scale, size=shape))
            store.add(f"pol.{agent}.lstm.{gate}", init)
        store.add(f"pol.{agent}.mix", rng.normal(scale=scale, size=(h, 2 * h)))
    store.add("pol.c.w1", rng.normal(scale=scale, size=(h, 2 * d + h)))
    store.add("pol.c.w2", rng.normal(scale=scale, size=(d, h)))
    store.add("pol.e.w1", rng.normal(scale=scale, size=(h, 3 * d + h)))
    store.add("pol.e.w2", rng.normal(scale=scale, size=(2 * d, h)))


# ---------------------------------------------------------------------------
# embedding lookups on a tape
# ---------------------------------------------------------------------------


class VectorSource:
    """Memoized leaf Vars for table rows and encoded item vectors.

    ``item_vectors`` may hold plain arrays (cached encoder output) or Vars
    already living on this tape (end-to-end mode).
    """

    def __init__(self, tape: Tape, table: EmbeddingTable,
                 item_vectors: Mapping[int, Array | Var] | None = None):
        self.tape = tape
        self.table = table
        self.item_vectors = item_vectors or {}
        self._entity: dict[int, Var] = {}
        self._relation: dict[int, Var] = {}
        self._category: dict[int, Var] = {}
        self._marker: Var | None = None
        self._pair: dict[tuple[int, int], Var] = {}
        self._action_matrix: dict[tuple, Var] = {}
        self._category_matrix: dict[tuple, Var] = {}

    def entity(self, eid: int) -> Var:
        if eid not in self._entity:
            vec = self.item_vectors.get(eid)
            if isinstance(vec, Var):
                self._entity[eid] = vec
            elif vec is not None:
                self._entity[eid] = self.tape.leaf(vec)
            else:
                self._entity[eid] = self.tape.leaf(self.table.entity[eid])
        return self._entity[eid]

    def relation(self, rid: int) -> Var:
        if rid == START_RELATION:
            return self.marker()
        if rid not in self._relation:
            self._relation[rid] = self.tape.leaf(self.table.relation[rid])
        return self._relation[rid]

    def category(self, cid: int) -> Var:
        if cid not in self._category:
            self._category[cid] = self.tape.leaf(self.table.category[cid])
        return self._category[cid]

    def marker(self) -> Var:
        if self._marker is None:
            self._marker = self.tape.leaf(self.table.start_marker)
        return self._marker

    def pair(self, rid: int, eid: int) -> Var:
        """[relation row, entity vector] action row, memoized."""
        key = (rid, eid)
        if key not in self._pair:
            self._pair[key] = ad.concat(self.relation(rid), self.entity(eid))
        return self._pair[key]

    def entity_action_matrix(self, actions: Sequence["EntityAction"]) -> Var:
        key = tuple((a.relation, a.entity) for a in actions)
        if key not in self._action_matrix:
            self._action_matrix[key] = ad.stack(
                [self.pair(r, e) for r, e in key])
        return self._action_matrix[key]

    def category_action_matrix(self,
                               actions: Sequence["CategoryAction"]) -> Var:
        key = tuple(a.category for a in actions)
        if key not in self._category_matrix:
            self._category_matrix[key] = ad.stack(
                [self.category(c) for c in key])
        return self._category_matrix[key]


# ---------------------------------------------------------------------------
# cross-mixed recurrent histories
# ---------------------------------------------------------------------------


@dataclass
class HistoryState:
    y_category: Var
    y_entity: Var
    cell_category: Var
    cell_entity: Var


class HistoryEncoder:
    """Two recurrent encoders whose hidden inputs are cross-mixed.

    Step 0 encodes the initial symbols with a zero hidden state.  Later
    steps feed each encoder the mix of both previous hidden vectors and the
    agent's newly visited symbol (zero-padded where step 0 carried the user
    row).  Cell states stay per-agent.
    """

    def __init__(self, tape: Tape, params: Mapping[str, Var], dim: int,
                 hidden: int):
        self.tape = tape
        self.params = params
        self.dim = dim
        self.hidden = hidden
        self._zero_h = tape.leaf(np.zeros(hidden))
        self._zero_pad = tape.leaf(np.zeros(dim))

    def _gates(self, agent: str) -> dict[str, Var]:
        return {g: self.params[f"pol.{agent}.lstm.{g}"] for g in ad.LSTM_GATES}

    def start(self, u0: Var, c0: Var, r0: Var, e0: Var) -> HistoryState:
        y_c, cell_c = ad.lstm_cell(self._zero_h, self._zero_h,
                                   ad.concat(u0, c0), self._gates("c"))
        y_e, cell_e = ad.lstm_cell(self._zero_h, self._zero_h,
                                   ad.concat(u0, r0, e0), self._gates("e"))
        return HistoryState(y_c, y_e, cell_c, cell_e)

    def step_category(self, hist: HistoryState, c_sym: Var) -> tuple[Var, Var]:
        """Category-side half of a step; reads only the previous hiddens."""
        mixed_c = ad.matvec(self.params["pol.c.mix"],
                            ad.concat(hist.y_category, hist.y_entity))
        return ad.lstm_cell(mixed_c, hist.cell_category,
                            ad.concat(self._zero_pad, c_sym),
                            self._gates("c"))

    def step_entity(self, hist: HistoryState, r_sym: Var,
                    e_sym: Var) -> tuple[Var, Var]:
        mixed_e = ad.matvec(self.params["pol.e.mix"],
                            ad.concat(hist.y_entity, hist.y_category))
        return ad.lstm_cell(mixed_e, hist.cell_entity,
                            ad.concat(self._zero_pad, r_sym, e_sym),
                            self._gates("e"))

    def step(self, hist: HistoryState, c_sym: Var, r_sym: Var,
             e_sym: Var) -> HistoryState:
        y_c, cell_c = self.step_category(hist, c_sym)
        y_e, cell_e = self.step_entity(hist, r_sym, e_sym)
        return HistoryState(y_c, y_e, cell_c, cell_e)


def encode_histories(tape: Tape, params: Mapping[str, Var],
                     vectors: VectorSource, dim: int, hidden: int, user: int,
                     categories: Sequence[int],
                     entity_steps: Sequence[tuple[int, int]],
                     ) -> HistoryState:
    """Re-encode a trajectory prefix from scratch.

    ``categories`` lists c_0..c_l; ``entity_steps`` lists (r_0, e_0) ..
    (r_l, e_l) with r_0 = START_RELATION.
    """
    if len(categories) != len(entity_steps) or not categories:
        raise ValueError("prefix must pair every category with an entity step")
    encoder = HistoryEncoder(tape, params, dim, hidden)
    r0, e0 = entity_steps[0]
    hist = encoder.start(vectors.entity(user), vectors.category(categories[0]),
                         vectors.relation(r0), vectors.entity(e0))
    for c, (r, e) in zip(categories[1:], entity_steps[1:]):
        hist = encoder.step(hist, vectors.category(c), vectors.relation(r),
                            vectors.entity(e))
    return hist


# ---------------------------------------------------------------------------
# policy heads
# ---------------------------------------------------------------------------


def category_logits(params: Mapping[str, Var], vectors: VectorSource,
                    state: CategoryState, actions: Sequence[CategoryAction],
                    y_c: Var) -> Var:
    """Scores over pruned category actions; self-loop row = current category."""
    if not actions:
        raise ValueError("category policy needs a nonempty action set")
    x = ad.concat(vectors.entity(state.user), vectors.category(state.category),
                  y_c)
    head = ad.matvec(params["pol.c.w2"],
                     ad.relu(ad.matvec(params["pol.c.w1"], x)))
    return ad.matvec(vectors.category_action_matrix(actions), head)


def entity_logits(params: Mapping[str, Var], vectors: VectorSource,
                  state: EntityState, actions: Sequence[EntityAction],
                  y_e: Var, category_choice: Var) -> Var:
    """Scores over pruned entity actions, conditioned on the category move.

    Action rows are [relation row, destination vector]; the self-loop row
    uses the start marker and the current entity.
    """
    if not actions:
        raise ValueError("entity policy needs a nonempty action set")
    x = ad.concat(vectors.entity(state.entity), vectors.relation(state.relation),
                  y_e, category_choice)
    head = ad.matvec(params["pol.e.w2"],
                     ad.relu(ad.matvec(params["pol.e.w1"], x)))
    return ad.matvec(vectors.entity_action_matrix(actions), head)


def softmax_values(logits: Var) -> Array:
    z = logits.value - np.max(logits.value)
    e = np.exp(z)
    return e / e.sum()


# ---------------------------------------------------------------------------
# counterfactual influence and partner rewards
# ---------------------------------------------------------------------------


def counterfactual_influence(params: Mapping[str, Var],
                             vectors: VectorSource, state: EntityState,
                             actions: Sequence[EntityAction], y_e_value: Array,
                             category_actions: Sequence[CategoryAction],
                             category_probs: Array, chosen_index: int,
                             ) -> float:
    """KL between the factual entity distribution and its category-marginal.

    Evaluated off-tape: the influence value feeds rewards, not gradients.
    ``params`` may be traced Vars; only their values are read.
    """
    tape = Tape(trace=False)
    raw = {name: tape.leaf(v.value) for name, v in params.items()
           if name.startswith("pol.e.")}
    vals = VectorSource(tape, vectors.table,
                        {k: (v.value if isinstance(v, Var) else v)
                         for k, v in vectors.item_vectors.items()})
    y_e = tape.leaf(y_e_value)

    def distribution(cat_action: CategoryAction) -> Array:
        logits = entity_logits(raw, vals, state, actions, y_e,
                               vals.category(cat_action.category))
        return softmax_values(logits)

    per_category = [distribution(a) for a in category_actions]
    factual = per_category[chosen_index]
    marginal = np.zeros_like(factual)
    for p, dist in zip(category_probs, per_category):
        marginal += p * dist
    kl = ad.kl_div(tape.leaf(factual), tape.leaf(marginal))
    # mathematically >= 0; clamp away float noise when the two coincide
    return max(float(kl.value), 0.0)


def partner_rewards(phi: float, user_row: Array, category_row: Array,
                    entity_vec: Array) -> tuple[float, float]:
    """(guidance reward for the entity agent, consistency reward for the
    category agent).

    Guidance squashes the influence through a sigmoid; consistency is the
    cosine of the two agents' state vectors [user, position].  A zero-norm
    state vector yields consistency 0.
    """
    guidance = 1.0 / (1.0 + np.exp(-phi))
    a = np.concatenate([user_row, category_row])
    b = np.concatenate([user_row, entity_vec])
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    consistency = 0.0 if na == 0.0 or nb == 0.0 else float(a @ b / (na * nb))
    return float(guidance), consistency
