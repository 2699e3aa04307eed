"""Episode rollouts, collaborative rewards, and policy-gradient training.

An episode runs both agents for exactly ``max_len`` steps (self-loops
absorb early arrivals).  Per-step rewards combine each agent's terminal
indicator with the partner reward it receives from the other agent; the
update is plain score-function policy gradient with a per-step batch-mean
baseline and an entropy bonus to keep exploration alive on sparse
terminals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from . import policy as pol
from .autodiff import ParamStore, Tape, Var, adam_step
from .embeddings import EmbeddingTable
from .encoder import EncoderConfig, TableVars, compute_item_vectors, encode_items
from .errors import DataError
from .graph import Dataset
from .policy import (ActionPruner, CategoryAction, CategoryState, EntityAction,
                     EntityState, HistoryEncoder, PolicyConfig, VectorSource,
                     apply_category_action, apply_entity_action,
                     counterfactual_influence, partner_rewards, softmax_values)

Array = np.ndarray


@dataclass
class RewardConfig:
    consistency_weight: float = 0.6  # scales the reward the category agent gets
    guidance_weight: float = 0.5     # scales the reward the entity agent gets
    gamma: float = 1.0
    entropy_weight: float = 0.01
    baseline: str = "batch_mean"     # or "none"
    terminal_every_step: bool = True

    def validate(self) -> None:
        if self.consistency_weight < 0 or self.guidance_weight < 0:
            raise DataError("partner reward weights must be nonnegative")
        if not 0.0 < self.gamma <= 1.0:
            raise DataError(f"gamma must be in (0,1], got {self.gamma}")
        if self.baseline not in ("batch_mean", "none"):
            raise DataError(f"unknown baseline mode {self.baseline!r}")


@dataclass
class TrajectoryStep:
    category_actions: list[CategoryAction]
    entity_actions: list[EntityAction]
    category_choice: int
    entity_choice: int
    category_logp: Var
    entity_logp: Var
    category_entropy: Var
    entity_entropy: Var
    category_state: CategoryState  # state after the move
    entity_state: EntityState
    influence: float               # KL of factual vs marginal entity policy
    guidance: float                # partner reward toward the entity agent
    consistency: float             # partner reward toward the category agent


@dataclass
class Trajectory:
    user: int
    start_category: int
    steps: list[TrajectoryStep] = field(default_factory=list)
    terminal_entity: float | None = None
    terminal_category: float | None = None
    rewards_entity: list[float] = field(default_factory=list)
    rewards_category: list[float] = field(default_factory=list)

    @property
    def finalized(self) -> bool:
        return self.terminal_entity is not None

    @property
    def final_entity(self) -> int:
        return self.steps[-1].entity_state.entity

    @property
    def final_category(self) -> int:
        return self.steps[-1].category_state.category


def finalize_rewards(traj: Trajectory, train_items: frozenset[int],
                     train_categories: frozenset[int],
                     config: RewardConfig) -> Trajectory:
    """Fill per-step rewards once the episode is complete.

    The terminal indicators look only at training items; by default they
    are credited at every step so long paths still receive a signal.
    """
    if not traj.steps:
        raise DataError("cannot finalize an empty trajectory")
    if traj.finalized:
        return traj
    traj.terminal_entity = 1.0 if traj.final_entity in train_items else 0.0
    traj.terminal_category = (1.0 if traj.final_category in train_categories
                              else 0.0)
    last = len(traj.steps) - 1
    for i, step in enumerate(traj.steps):
        at_terminal = config.terminal_every_step or i == last
        base_e = traj.terminal_entity if at_terminal else 0.0
        base_c = traj.terminal_category if at_terminal else 0.0
        traj.rewards_entity.append(base_e + config.guidance_weight * step.guidance)
        traj.rewards_category.append(base_c
                                     + config.consistency_weight * step.consistency)
    return traj


def discounted_returns(rewards: Sequence[float], gamma: float) -> list[float]:
    out = [0.0] * len(rewards)
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


def train_category_set(dataset: Dataset, user: int) -> frozenset[int]:
    cats: set[int] = set()
    for item in dataset.split.train_items(user):
        cats |= dataset.assignment.categories_of(item)
    return frozenset(cats)


# ---------------------------------------------------------------------------
# episode runner
# ---------------------------------------------------------------------------


class EpisodeRunner:
    """Runs dual-agent episodes against one tape-bound parameter snapshot.

    Item vectors may be cached arrays (frozen encoder) or, in end-to-end
    mode, Vars produced by the encoder on this same tape so policy
    gradients reach the encoder parameters.
    """

    def __init__(self, tape: Tape, store: ParamStore, dataset: Dataset,
                 table: EmbeddingTable, policy_config: PolicyConfig,
                 item_vectors: Mapping[int, Array] | None = None,
                 encoder_config: EncoderConfig | None = None,
                 encoder_seed: int = 0,
                 category_cap: int = pol.CATEGORY_CAP,
                 entity_cap: int = pol.ENTITY_CAP,
                 params: Mapping[str, Var] | None = None):
        self.tape = tape
        self.dataset = dataset
        self.table = table
        self.config = policy_config
        if params is None:
            params = store.bind(tape, prefix="pol.")
            if item_vectors is None:
                params = {**params, **store.bind(tape, prefix="enc.")}
        self.params = params
        if item_vectors is None:
            if encoder_config is None:
                raise DataError("need cached item vectors or an encoder config")
            enc_params = {k: v for k, v in self.params.items()
                          if k.startswith("enc.")}
            tvars = TableVars(tape, table)
            final, _ = encode_items(tape, enc_params, dataset.kg, tvars,
                                    dataset.assignment, encoder_config,
                                    seed=encoder_seed)
            vectors_map: Mapping[int, Array | Var] = final
            pruner_vectors = {k: v.value for k, v in final.items()}
        else:
            vectors_map = dict(item_vectors)
            pruner_vectors = dict(item_vectors)
        self.vectors = VectorSource(tape, table, vectors_map)
        self.pruner = ActionPruner(dataset.kg, dataset.category_graph, table,
                                   dataset.split, pruner_vectors,
                                   category_cap=category_cap,
                                   entity_cap=entity_cap)
        self.encoder = HistoryEncoder(tape, self.params, policy_config.dim,
                                      policy_config.hidden)

    def start_category(self, user: int, rng: np.random.Generator) -> int:
        cats = sorted(train_category_set(self.dataset, user))
        return int(cats[rng.integers(len(cats))])

    def run(self, user: int, max_len: int, rng: np.random.Generator,
            greedy: bool = False,
            script: Sequence[tuple[int, int]] | None = None) -> Trajectory:
        """Run one episode; ``script`` replays fixed action indices."""
        if not self.dataset.split.train_items(user):
            raise DataError(f"user {user} has no training items")
        if script is not None and len(script) != max_len:
            raise DataError("script length must equal max_len")
        c0 = self.start_category(user, rng)
        traj = Trajectory(user, c0)
        cat_state = CategoryState(user, c0, c0, 0)
        ent_state = EntityState(user, user, pol.START_RELATION, 0)
        hist = self.encoder.start(self.vectors.entity(user),
                                  self.vectors.category(c0),
                                  self.vectors.marker(),
                                  self.vectors.entity(user))
        for i in range(max_len):
            forced = script[i] if script is not None else None
            cat_state, ent_state, hist = self._step(
                traj, cat_state, ent_state, hist, rng, greedy, forced)
        return traj

    def _choose(self, kind: str, state, actions, probs: Array,
                rng: np.random.Generator, greedy: bool) -> int:
        if greedy:
            return int(np.argmax(probs))
        cdf = np.cumsum(probs)
        return int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))

    def _step(self, traj: Trajectory, cat_state: CategoryState,
              ent_state: EntityState, hist: pol.HistoryState,
              rng: np.random.Generator, greedy: bool,
              forced: tuple[int, int] | None = None):
        cat_actions = self.pruner.category_actions(cat_state)
        cat_logits = pol.category_logits(self.params, self.vectors, cat_state,
                                         cat_actions, hist.y_category)
        cat_probs = softmax_values(cat_logits)
        if forced is not None:
            cat_idx = forced[0]
        else:
            cat_idx = self._choose("category", cat_state, cat_actions,
                                   cat_probs, rng, greedy)
        cat_action = cat_actions[cat_idx]

        ent_actions = self.pruner.entity_actions(ent_state)
        ent_logits = pol.entity_logits(self.params, self.vectors, ent_state,
                                       ent_actions, hist.y_entity,
                                       self.vectors.category(cat_action.category))
        ent_probs = softmax_values(ent_logits)
        if forced is not None:
            ent_idx = forced[1]
        else:
            ent_idx = self._choose("entity", ent_state, ent_actions,
                                   ent_probs, rng, greedy)
        ent_action = ent_actions[ent_idx]

        influence = counterfactual_influence(
            self.params, self.vectors, ent_state, ent_actions,
            hist.y_entity.value, cat_actions, cat_probs, cat_idx)

        next_cat = apply_category_action(cat_state, cat_action)
        next_ent = apply_entity_action(ent_state, ent_action)
        ent_vec = self.vectors.entity(next_ent.entity).value
        guidance, consistency = partner_rewards(
            influence, self.table.entity[traj.user],
            self.table.category[next_cat.category], ent_vec)

        traj.steps.append(TrajectoryStep(
            category_actions=cat_actions,
            entity_actions=ent_actions,
            category_choice=cat_idx,
            entity_choice=ent_idx,
            category_logp=ad.log_prob(cat_logits, cat_idx),
            entity_logp=ad.log_prob(ent_logits, ent_idx),
            category_entropy=ad.entropy(cat_logits),
            entity_entropy=ad.entropy(ent_logits),
            category_state=next_cat,
            entity_state=next_ent,
            influence=influence,
            guidance=guidance,
            consistency=consistency,
        ))
        hist = self.encoder.step(
            hist, self.vectors.category(next_cat.category),
            self.vectors.relation(ent_action.relation),
            self.vectors.entity(next_ent.entity))
        return next_cat, next_ent, hist


# ---------------------------------------------------------------------------
# policy-gradient update
# ---------------------------------------------------------------------------


def reinforce_loss(tape: Tape, batch: Sequence[Trajectory],
                   config: RewardConfig) -> Var:
    """Combined two-agent surrogate loss over a finalized batch."""
    if not batch:
        raise DataError("empty batch")
    for traj in batch:
        if not traj.finalized:
            raise DataError("finalize_rewards must run before the update")
    length = len(batch[0].steps)
    returns_e = [discounted_returns(t.rewards_entity, config.gamma)
                 for t in batch]
    returns_c = [discounted_returns(t.rewards_category, config.gamma)
                 for t in batch]
    if config.baseline == "batch_mean":
        base_e = [float(np.mean([r[i] for r in returns_e]))
                  for i in range(length)]
        base_c = [float(np.mean([r[i] for r in returns_c]))
                  for i in range(length)]
    else:
        base_e = [0.0] * length
        base_c = [0.0] * length

    total: Var | None = None
    for t, re_, rc_ in zip(batch, returns_e, returns_c):
        for i, step in enumerate(t.steps):
            term = ad.scale(step.entity_logp, -(re_[i] - base_e[i]))
            term = ad.add(term, ad.scale(step.category_logp,
                                         -(rc_[i] - base_c[i])))
            if config.entropy_weight:
                term = ad.add(term, ad.scale(step.entity_entropy,
                                             -config.entropy_weight))
                term = ad.add(term, ad.scale(step.category_entropy,
                                             -config.entropy_weight))
            total = term if total is None else ad.add(total, term)
    return ad.scale(total, 1.0 / len(batch))


def reinforce_update(tape: Tape, batch: Sequence[Trajectory],
                     store: ParamStore, config: RewardConfig,
                     lr: float) -> float:
    """One Adam step on every parameter bound to the batch tape."""
    loss = reinforce_loss(tape, batch, config)
    grads = tape.backward(loss)
    adam_step(store, grads, lr)
    return float(loss.value)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    mean_return_entity: float
    mean_return_category: float
    hit_rate: float
    loss: float

    def tsv_row(self) -> str:
        return (f"{self.epoch}\t{self.mean_return_entity:.6f}"
                f"\t{self.mean_return_category:.6f}\t{self.hit_rate:.6f}"
                f"\t{self.loss:.6f}")


TRAIN_LOG_HEADER = "epoch\tmean_return_e\tmean_return_c\thit_rate\tloss"


def train_policies(dataset: Dataset, table: EmbeddingTable, store: ParamStore,
                   policy_config: PolicyConfig, reward_config: RewardConfig,
                   encoder_config: EncoderConfig, epochs: int, max_len: int,
                   lr: float, batch_size: int = 32, seed: int = 0,
                   train_encoder: bool = False,
                   category_cap: int = pol.CATEGORY_CAP,
                   entity_cap: int = pol.ENTITY_CAP,
                   ) -> list[EpochStats]:
    """Sampled-episode training, one episode per user per epoch.

    With the encoder frozen (default) item vectors are computed once per
    epoch and treated as constants; in end-to-end mode each batch re-runs
    the encoder on its own tape.  Deterministic under the seed in this
    single-worker form.
    """
    reward_config.validate()
    rng = np.random.default_rng(seed)
    users = [u for u in dataset.split.users()
             if dataset.split.train_items(u)]
    if not users:
        raise DataError("no trainable users in the split")
    stats: list[EpochStats] = []
    for epoch in range(epochs):
        item_vectors = None
        if not train_encoder:
            item_vectors = compute_item_vectors(store, dataset.kg, table,
                                                dataset.assignment,
                                                encoder_config, seed=seed)
        order = [users[i] for i in rng.permutation(len(users))]
        losses: list[float] = []
        returns_e: list[float] = []
        returns_c: list[float] = []
        hits = 0
        for lo in range(0, len(order), batch_size):
            chunk = order[lo:lo + batch_size]
            tape = Tape()
            runner = EpisodeRunner(
                tape, store, dataset, table, policy_config,
                item_vectors=item_vectors,
                encoder_config=None if item_vectors is not None else encoder_config,
                encoder_seed=seed, category_cap=category_cap,
                entity_cap=entity_cap)
            batch = []
            for user in chunk:
                traj = runner.run(user, max_len, rng)
                finalize_rewards(traj, dataset.split.train_items(user),
                                 train_category_set(dataset, user),
                                 reward_config)
                batch.append(traj)
            losses.append(reinforce_update(tape, batch, store, reward_config,
                                           lr))
            for traj in batch:
                returns_e.append(discounted_returns(traj.rewards_entity,
                                                    reward_config.gamma)[0])
                returns_c.append(discounted_returns(traj.rewards_category,
                                                    reward_config.gamma)[0])
                hits += int(traj.terminal_entity == 1.0)
        stats.append(EpochStats(
            epoch=epoch,
            mean_return_entity=float(np.mean(returns_e)),
            mean_return_category=float(np.mean(returns_c)),
            hit_rate=hits / len(order),
            loss=float(np.mean(losses))))
    return stats


def write_train_log(path, stats: Sequence[EpochStats]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(TRAIN_LOG_HEADER + "\n")
        for row in stats:
            fh.write(row.tsv_row() + "\n")
