from collections import deque

import numpy as np
import pytest

from kgpathrec import policy as pol
from kgpathrec import training as tr
from kgpathrec.autodiff import ParamStore, Tape, gradient_check
from kgpathrec.embeddings import category_means, init_embeddings
from kgpathrec.encoder import EncoderConfig, compute_item_vectors, init_encoder_params
from kgpathrec.errors import DataError
from kgpathrec.graph import Dataset
from kgpathrec.synthetic import SynthConfig, generate_synthetic


def make_world(seed=0, dim=4, hidden=6, users=6):
    res = generate_synthetic(
        SynthConfig(users=users, categories=4, items_per_category=4,
                    planted_pairs=users, min_plant_hops=4, max_hops=6,
                    purchases_per_user=4, chain_chaff_features=2),
        seed=seed)
    dataset = Dataset(res.kg, res.assignment, res.split)
    table = init_embeddings(res.kg, res.assignment, dim, seed)
    category_means(table, res.assignment)
    store = ParamStore()
    encoder_config = EncoderConfig(gnn_layers=1, attention_layers=1,
                                   trade_off=0.4)
    init_encoder_params(store, dim, encoder_config,
                        np.random.default_rng(seed + 1))
    policy_config = pol.PolicyConfig(dim, hidden)
    pol.init_policy_params(store, policy_config,
                           np.random.default_rng(seed + 2))
    return res, dataset, table, store, policy_config, encoder_config


def make_runner(dataset, table, store, policy_config, encoder_config,
                params=None):
    cache = compute_item_vectors(store, dataset.kg, table,
                                 dataset.assignment, encoder_config)
    tape = Tape()
    runner = tr.EpisodeRunner(tape, store, dataset, table, policy_config,
                              item_vectors=cache, params=params)
    return tape, runner


# -- reward assembly -----------------------------------------------------------


def dummy_trajectory(n_steps, guidance, consistency, final_entity=99,
                     final_category=7):
    tape = Tape()
    zero = tape.leaf(np.zeros(()))
    steps = []
    for i in range(n_steps):
        steps.append(tr.TrajectoryStep(
            category_actions=[pol.CategoryAction(final_category, True)],
            entity_actions=[pol.EntityAction(pol.START_RELATION,
                                             final_entity, True)],
            category_choice=0, entity_choice=0,
            category_logp=zero, entity_logp=zero,
            category_entropy=zero, entity_entropy=zero,
            category_state=pol.CategoryState(0, 0, final_category, i + 1),
            entity_state=pol.EntityState(0, final_entity, pol.START_RELATION,
                                         i + 1),
            influence=0.0, guidance=guidance[i], consistency=consistency[i]))
    return tr.Trajectory(0, 0, steps)


def test_rewards_zero_when_no_terminal_and_no_partner():
    traj = dummy_trajectory(3, [0.0, 0.0, 0.0], [0.0, 0.0, 0.0])
    cfg = tr.RewardConfig(consistency_weight=0.6, guidance_weight=0.5)
    tr.finalize_rewards(traj, frozenset({1}), frozenset({0}), cfg)
    assert traj.terminal_entity == 0.0
    assert traj.rewards_entity == [0.0, 0.0, 0.0]


def test_terminal_reward_at_every_step_when_weight_zero():
    traj = dummy_trajectory(4, [0.9, 0.9, 0.9, 0.9], [0.0] * 4,
                            final_entity=5)
    cfg = tr.RewardConfig(guidance_weight=0.0)
    tr.finalize_rewards(traj, frozenset({5}), frozenset(), cfg)
    assert traj.terminal_entity == 1.0
    assert traj.rewards_entity == [1.0, 1.0, 1.0, 1.0]


def test_terminal_only_at_last_step_flag():
    traj = dummy_trajectory(3, [0.0] * 3, [0.0] * 3, final_entity=5)
    cfg = tr.RewardConfig(guidance_weight=0.0, terminal_every_step=False)
    tr.finalize_rewards(traj, frozenset({5}), frozenset(), cfg)
    assert traj.rewards_entity == [0.0, 0.0, 1.0]


def test_category_reward_arithmetic_fixture():
    traj = dummy_trajectory(2, [0.0, 0.0], [0.5, 1.0], final_category=7)
    cfg = tr.RewardConfig(consistency_weight=0.6, guidance_weight=0.0)
    tr.finalize_rewards(traj, frozenset(), frozenset({7}), cfg)
    base = traj.terminal_category
    assert base == 1.0
    assert traj.rewards_category == pytest.approx([base + 0.3, base + 0.6])


def test_finalize_requires_steps():
    cfg = tr.RewardConfig()
    with pytest.raises(DataError):
        tr.finalize_rewards(tr.Trajectory(0, 0, []), frozenset(), frozenset(),
                            cfg)


def test_returns_constant_reward_gamma_one():
    rewards = [0.7] * 5
    returns = tr.discounted_returns(rewards, 1.0)
    assert returns == pytest.approx([(5 - i) * 0.7 for i in range(5)])


def test_returns_discounted():
    returns = tr.discounted_returns([1.0, 1.0], 0.5)
    assert returns == pytest.approx([1.5, 1.0])


# -- rollouts --------------------------------------------------------------------


def test_greedy_rollouts_are_deterministic():
    _, dataset, table, store, pc, ec = make_world()
    user = dataset.split.users()[0]
    paths = []
    for _ in range(2):
        _, runner = make_runner(dataset, table, store, pc, ec)
        traj = runner.run(user, 6, np.random.default_rng(3), greedy=True)
        paths.append([(s.entity_state.relation, s.entity_state.entity)
                      for s in traj.steps])
    assert paths[0] == paths[1]


def test_rollout_has_exact_length():
    _, dataset, table, store, pc, ec = make_world()
    user = dataset.split.users()[0]
    _, runner = make_runner(dataset, table, store, pc, ec)
    traj = runner.run(user, 6, np.random.default_rng(0))
    assert len(traj.steps) == 6
    assert all(np.isfinite(float(s.entity_logp.value)) for s in traj.steps)
    assert all(np.isfinite(float(s.category_logp.value)) for s in traj.steps)


def bfs_path(kg, src, dst, cap):
    seen = {src: None}
    frontier = deque([src])
    while frontier:
        node = frontier.popleft()
        if node == dst:
            break
        for r, nxt in kg.outgoing(node):
            if nxt not in seen:
                seen[nxt] = (node, r)
                frontier.append(nxt)
    path = []
    node = dst
    while seen[node] is not None:
        prev, r = seen[node]
        path.append((r, node))
        node = prev
    return list(reversed(path))


class OraclePolicyRunner(tr.EpisodeRunner):
    """Hand-set choices: walk the planted path, then self-loop."""

    def __init__(self, *args, path=None, **kw):
        super().__init__(*args, **kw)
        self.path = path

    def _choose(self, kind, state, actions, probs, rng, greedy):
        if kind == "category":
            return 0
        pos = state.step
        if pos < len(self.path):
            want = self.path[pos]
            for i, a in enumerate(actions):
                if (a.relation, a.entity) == want:
                    return i
        return 0  # self-loop once the target is reached


def test_oracle_policy_reaches_planted_target():
    res, dataset, table, store, pc, ec = make_world(seed=2)
    user, target = res.planted[0]
    path = bfs_path(dataset.kg, user, target, 6)
    assert 4 <= len(path) <= 6
    cache = compute_item_vectors(store, dataset.kg, table,
                                 dataset.assignment, ec)
    tape = Tape()
    runner = OraclePolicyRunner(tape, store, dataset, table, pc,
                                item_vectors=cache, path=path)
    traj = runner.run(user, 6, np.random.default_rng(0))
    assert traj.final_entity == target
    # the indicator machinery fires against whatever item set it is given
    tr.finalize_rewards(traj, frozenset({target}), frozenset(), tr.RewardConfig())
    assert traj.terminal_entity == 1.0


# -- reinforce update ---------------------------------------------------------------


def test_zero_rewards_zero_entropy_leave_params_unchanged():
    _, dataset, table, store, pc, ec = make_world()
    user = dataset.split.users()[0]
    tape, runner = make_runner(dataset, table, store, pc, ec)
    traj = runner.run(user, 3, np.random.default_rng(1))
    traj.terminal_entity = 0.0
    traj.terminal_category = 0.0
    traj.rewards_entity = [0.0] * 3
    traj.rewards_category = [0.0] * 3
    before = store.copy()
    cfg = tr.RewardConfig(entropy_weight=0.0, baseline="none")
    loss = tr.reinforce_update(tape, [traj], store, cfg, lr=0.1)
    assert loss == 0.0
    for name in store.names():
        assert np.array_equal(store[name], before[name])


def test_single_step_gradient_is_score_function():
    _, dataset, table, store, pc, ec = make_world(seed=1)
    user = dataset.split.users()[0]
    cache = compute_item_vectors(store, dataset.kg, table,
                                 dataset.assignment, ec)

    def run_once():
        tape = Tape()
        runner = tr.EpisodeRunner(tape, store, dataset, table, pc,
                                  item_vectors=cache)
        traj = runner.run(user, 1, np.random.default_rng(5))
        return tape, traj

    tape_a, traj_a = run_once()
    traj_a.terminal_entity = 1.0
    traj_a.terminal_category = 1.0
    traj_a.rewards_entity = [1.0]
    traj_a.rewards_category = [1.0]
    cfg = tr.RewardConfig(entropy_weight=0.0, baseline="none")
    loss = tr.reinforce_loss(tape_a, [traj_a], cfg)
    grads = tape_a.backward(loss)

    from kgpathrec import autodiff as ad
    tape_b, traj_b = run_once()
    direct = tape_b.backward(
        ad.scale(ad.add(traj_b.steps[0].entity_logp,
                        traj_b.steps[0].category_logp), -1.0))
    for name in grads:
        assert np.allclose(grads[name], direct[name], atol=1e-12)


def test_two_agent_loss_passes_finite_difference_check():
    _, dataset, table, store, pc, ec = make_world(seed=3, dim=2, hidden=3)
    user = dataset.split.users()[0]
    cache = compute_item_vectors(store, dataset.kg, table,
                                 dataset.assignment, ec)
    base_tape = Tape()
    base_runner = tr.EpisodeRunner(base_tape, store, dataset, table, pc,
                                   item_vectors=cache)
    base = base_runner.run(user, 1, np.random.default_rng(2), greedy=True)
    script = [(base.steps[0].category_choice, base.steps[0].entity_choice)]
    tr.finalize_rewards(base, dataset.split.train_items(user),
                        tr.train_category_set(dataset, user),
                        tr.RewardConfig())
    rewards_e = list(base.rewards_entity)
    rewards_c = list(base.rewards_category)
    cfg = tr.RewardConfig(entropy_weight=0.01, baseline="none")
    params = {name: store[name] for name in store.names()
              if name.startswith("pol.")}

    def fn(tape, vs):
        runner = tr.EpisodeRunner(tape, store, dataset, table, pc,
                                  item_vectors=cache, params=vs)
        traj = runner.run(user, 1, np.random.default_rng(2), script=script)
        traj.terminal_entity = base.terminal_entity
        traj.terminal_category = base.terminal_category
        traj.rewards_entity = rewards_e
        traj.rewards_category = rewards_c
        return tr.reinforce_loss(tape, [traj], cfg)

    assert gradient_check(fn, params, epsilon=1e-4) < 1e-3


# -- training loop --------------------------------------------------------------------


def test_train_zero_epochs_is_identity():
    _, dataset, table, store, pc, ec = make_world()
    before = store.copy()
    stats = tr.train_policies(dataset, table, store, pc, tr.RewardConfig(),
                              ec, epochs=0, max_len=4, lr=1e-3, seed=0)
    assert stats == []
    for name in store.names():
        assert np.array_equal(store[name], before[name])


def test_training_is_deterministic_under_seed():
    logs = []
    for _ in range(2):
        _, dataset, table, store, pc, ec = make_world(seed=4)
        stats = tr.train_policies(dataset, table, store, pc,
                                  tr.RewardConfig(), ec, epochs=2, max_len=4,
                                  lr=1e-3, batch_size=4, seed=7)
        logs.append([s.tsv_row() for s in stats])
    assert logs[0] == logs[1]


def test_training_smoke_produces_finite_stats(tmp_path):
    _, dataset, table, store, pc, ec = make_world(seed=5)
    stats = tr.train_policies(dataset, table, store, pc, tr.RewardConfig(),
                              ec, epochs=2, max_len=4, lr=1e-3, batch_size=4,
                              seed=1)
    assert len(stats) == 2
    for s in stats:
        assert np.isfinite(s.loss)
        assert 0.0 <= s.hit_rate <= 1.0
    tr.write_train_log(tmp_path / "log.tsv", stats)
    text = (tmp_path / "log.tsv").read_text()
    assert text.startswith(tr.TRAIN_LOG_HEADER)
    assert len(text.strip().splitlines()) == 3


def test_end_to_end_encoder_mode_runs():
    _, dataset, table, store, pc, ec = make_world(seed=6, dim=2, hidden=3,
                                                  users=3)
    before = {n: store[n].copy() for n in store.names()
              if n.startswith("enc.")}
    stats = tr.train_policies(dataset, table, store, pc, tr.RewardConfig(),
                              ec, epochs=1, max_len=3, lr=1e-2, batch_size=3,
                              seed=2, train_encoder=True)
    assert len(stats) == 1
    changed = any(not np.array_equal(store[n], before[n]) for n in before)
    assert changed
