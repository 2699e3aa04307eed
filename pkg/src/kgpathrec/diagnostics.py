"""Built-in finite-difference battery over small internal fixtures.

Each check compares reverse-mode gradients against central differences at
epsilon 1e-4 and reports the max relative error; 1e-3 is the pass line.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import policy as pol
from . import training as tr
from .autodiff import ParamStore, Tape, gradient_check
from .embeddings import category_means, init_embeddings
from .encoder import (EncoderConfig, GNN_MATS, encode_items, gated_update,
                      init_encoder_params, propagate, category_attention)
from .graph import Dataset
from .synthetic import SynthConfig, generate_synthetic

TOLERANCE = 1e-3
EPSILON = 1e-4


@dataclass
class CheckResult:
    name: str
    max_relative_error: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_relative_error <= self.tolerance


def _tiny_world(seed: int, dim: int, hidden: int):
    res = generate_synthetic(
        SynthConfig(users=1, categories=2, items_per_category=2,
                    planted_pairs=1, min_plant_hops=2, max_hops=3,
                    purchases_per_user=2, mentions_per_user=1, features=1,
                    brands=1, cross_links=2, chain_chaff_features=0),
        seed=seed)
    dataset = Dataset(res.kg, res.assignment, res.split)
    table = init_embeddings(res.kg, res.assignment, dim, seed)
    category_means(table, res.assignment)
    store = ParamStore()
    enc_cfg = EncoderConfig(gnn_layers=2, attention_layers=2, trade_off=0.4)
    init_encoder_params(store, dim, enc_cfg, np.random.default_rng(seed + 1))
    pol_cfg = pol.PolicyConfig(dim, hidden)
    pol.init_policy_params(store, pol_cfg, np.random.default_rng(seed + 2))
    return dataset, table, store, enc_cfg, pol_cfg


class _LeafTable:
    """Embedding rows drawn from gradient-check leaves."""

    def __init__(self, vs):
        self.vs = vs

    def entity(self, eid):
        return self.vs[f"emb.entity.{eid}"]

    def relation(self, rid):
        return self.vs[f"emb.relation.{rid}"]

    def category(self, cid):
        return self.vs[f"emb.category.{cid}"]


def _table_params(table, kg, n_categories):
    params = {}
    for e in kg.entities:
        params[f"emb.entity.{e.id}"] = table.entity[e.id]
    for r in range(kg.n_relations):
        params[f"emb.relation.{r}"] = table.relation[r]
    for c in range(n_categories):
        params[f"emb.category.{c}"] = table.category[c]
    return params


def check_lstm(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    params = {k: rng.normal(scale=0.5, size=shape)
              for k, shape in ad.lstm_param_shapes(3, 2).items()}
    params["h0"] = rng.normal(size=3)
    params["c0"] = rng.normal(size=3)
    params["x"] = rng.normal(size=2)

    def fn(tape, vs):
        h, c = ad.lstm_cell(vs["h0"], vs["c0"], vs["x"],
                            {k: vs[k] for k in ad.LSTM_GATES})
        return ad.mean(ad.concat(h, c))

    return CheckResult("lstm_cell", gradient_check(fn, params, EPSILON))


def check_propagation_layer(seed: int = 0) -> CheckResult:
    dim = 2
    dataset, table, store, enc_cfg, _ = _tiny_world(seed, dim, 3)
    kg = dataset.kg
    item = kg.entities_of_kind("item")[0]
    params = {name: store[name] for name in store.names()
              if name.startswith("enc.gnn0.")}
    params.update(_table_params(table, kg, dataset.assignment.n_categories))

    def fn(tape, vs):
        layer = {key: vs[f"enc.gnn0.{key}"]
                 for key in ("w1", "w2", "b") + GNN_MATS}
        tvars = _LeafTable(vs)
        inputs = {e.id: tvars.entity(e.id) for e in kg.entities}
        msg = propagate(layer, kg, item, inputs, tvars, 100, 0, 0)
        return ad.mean(gated_update(layer, msg, inputs[item]))

    return CheckResult("propagation+gating layer",
                       gradient_check(fn, params, EPSILON))


def check_category_attention(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    dim = 3
    params = {"w_ic": rng.normal(size=2 * dim),
              "item": rng.normal(size=dim)}
    for c in range(3):
        params[f"cat{c}"] = rng.normal(size=dim)

    def fn(tape, vs):
        _, context = category_attention(
            vs["w_ic"], vs["item"], (0, 1, 2),
            {c: vs[f"cat{c}"] for c in range(3)})
        return ad.mean(context)

    return CheckResult("category attention", gradient_check(fn, params, EPSILON))


def check_encoder_pipeline(seed: int = 0) -> CheckResult:
    dim = 2
    dataset, table, store, enc_cfg, _ = _tiny_world(seed, dim, 3)
    kg = dataset.kg
    assert kg.n_entities <= 10
    params = {name: store[name] for name in store.names()
              if name.startswith("enc.")}
    params.update(_table_params(table, kg, dataset.assignment.n_categories))

    def fn(tape, vs):
        final, _ = encode_items(tape, vs, kg, _LeafTable(vs),
                                dataset.assignment, enc_cfg)
        total = None
        for item in sorted(final):
            s = ad.vsum(final[item])
            total = s if total is None else ad.add(total, s)
        return total

    return CheckResult("encoder pipeline", gradient_check(fn, params, EPSILON))


def _policy_world(seed: int):
    dim, hidden = 2, 3
    dataset, table, store, enc_cfg, pol_cfg = _tiny_world(seed, dim, hidden)
    from .encoder import compute_item_vectors
    cache = compute_item_vectors(store, dataset.kg, table, dataset.assignment,
                                 enc_cfg)
    return dataset, table, store, pol_cfg, cache


def check_policy_heads(seed: int = 0) -> CheckResult:
    """Head weights only; recurrent state enters as a fixed input.

    The LSTM cell and the end-to-end loss have their own checks; keeping
    the recurrent weights out avoids near-zero gradient coordinates whose
    finite differences are pure float noise.
    """
    dataset, table, store, pol_cfg, cache = _policy_world(seed)
    user = dataset.split.users()[0]
    head_names = ("pol.c.w1", "pol.c.w2", "pol.e.w1", "pol.e.w2")
    params = {name: store[name] for name in head_names}
    base_tape = Tape()
    runner = tr.EpisodeRunner(base_tape, store, dataset, table, pol_cfg,
                              item_vectors=cache)
    traj = runner.run(user, 1, np.random.default_rng(seed), greedy=True)
    script = [(traj.steps[0].category_choice, traj.steps[0].entity_choice)]

    def fn(tape, vs):
        bound = {name: tape.leaf(store[name]) for name in store.names()
                 if name.startswith("pol.")}
        bound.update(vs)
        r = tr.EpisodeRunner(tape, store, dataset, table, pol_cfg,
                             item_vectors=cache, params=bound)
        t = r.run(user, 1, np.random.default_rng(seed), script=script)
        return ad.add(ad.add(t.steps[0].category_logp,
                             t.steps[0].entity_logp),
                      ad.add(t.steps[0].category_entropy,
                             t.steps[0].entity_entropy))

    return CheckResult("policy heads", gradient_check(fn, params, EPSILON))


def check_reinforce_loss(seed: int = 0) -> CheckResult:
    dataset, table, store, pol_cfg, cache = _policy_world(seed)
    user = dataset.split.users()[0]
    params = {name: store[name] for name in store.names()
              if name.startswith("pol.")}
    base_tape = Tape()
    runner = tr.EpisodeRunner(base_tape, store, dataset, table, pol_cfg,
                              item_vectors=cache)
    base = runner.run(user, 1, np.random.default_rng(seed + 1), greedy=True)
    script = [(base.steps[0].category_choice, base.steps[0].entity_choice)]
    cfg = tr.RewardConfig(entropy_weight=0.01, baseline="none")
    tr.finalize_rewards(base, dataset.split.train_items(user),
                        tr.train_category_set(dataset, user), cfg)
    rewards_e = list(base.rewards_entity)
    rewards_c = list(base.rewards_category)

    def fn(tape, vs):
        r = tr.EpisodeRunner(tape, store, dataset, table, pol_cfg,
                             item_vectors=cache, params=vs)
        t = r.run(user, 1, np.random.default_rng(seed + 1), script=script)
        t.terminal_entity = base.terminal_entity
        t.terminal_category = base.terminal_category
        t.rewards_entity = rewards_e
        t.rewards_category = rewards_c
        return tr.reinforce_loss(tape, [t], cfg)

    return CheckResult("two-agent reinforce loss",
                       gradient_check(fn, params, EPSILON))


def run_gradient_battery(seed: int = 0) -> list[CheckResult]:
    return [
        check_lstm(seed),
        check_propagation_layer(seed),
        check_category_attention(seed),
        check_encoder_pipeline(seed),
        check_policy_heads(seed),
        check_reinforce_loss(seed),
    ]
