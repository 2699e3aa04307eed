"""Stage wiring shared by the command-line interface and the estimator.

Each stage consumes its predecessor's artifact and a RunConfig; all
randomness flows from the root seed split per stage.
"""

from __future__ import annotations

import numpy as np

from .autodiff import ParamStore
from .config import RunConfig, derive_seed
from .embeddings import (EmbeddingTable, category_means, init_embeddings,
                         train_embeddings)
from .encoder import EncoderConfig, init_encoder_params
from .graph import Dataset
from .inference import RecommendationList, recommend_users
from .metrics import MetricsReport, evaluate_rankings
from .policy import PolicyConfig, init_policy_params
from .training import EpochStats, RewardConfig, train_policies


def encoder_config(config: RunConfig) -> EncoderConfig:
    return EncoderConfig(gnn_layers=config.gnn_layers,
                         attention_layers=config.attention_layers,
                         trade_off=config.trade_off,
                         neighbor_cap=config.neighbor_cap)


def policy_config(config: RunConfig) -> PolicyConfig:
    return PolicyConfig(config.dim, config.hidden_width)


def reward_config(config: RunConfig) -> RewardConfig:
    return RewardConfig(consistency_weight=config.consistency_weight,
                        guidance_weight=config.guidance_weight,
                        gamma=config.gamma,
                        entropy_weight=config.entropy_weight,
                        baseline=config.baseline,
                        terminal_every_step=config.terminal_every_step)


def pretrain(dataset: Dataset, config: RunConfig,
             ) -> tuple[EmbeddingTable, list[float]]:
    """Initialize and pretrain the embedding table; fill category means."""
    seed = derive_seed(config.seed, "pretrain")
    table = init_embeddings(dataset.kg, dataset.assignment, config.dim, seed)
    table, history = train_embeddings(
        dataset.kg, table, epochs=config.pretrain_epochs,
        margin=config.pretrain_margin, lr=config.pretrain_lr,
        negatives_per_positive=config.pretrain_negatives, seed=seed)
    category_means(table, dataset.assignment)
    return table, history


def init_store(dataset: Dataset, config: RunConfig) -> ParamStore:
    store = ParamStore()
    rng = np.random.default_rng(derive_seed(config.seed, "init"))
    init_encoder_params(store, config.dim, encoder_config(config), rng)
    init_policy_params(store, policy_config(config), rng)
    return store


def train(dataset: Dataset, table: EmbeddingTable, config: RunConfig,
          store: ParamStore | None = None,
          ) -> tuple[ParamStore, list[EpochStats]]:
    """Policy-gradient training from a pretrained table."""
    if store is None:
        store = init_store(dataset, config)
    stats = train_policies(
        dataset, table, store, policy_config(config), reward_config(config),
        encoder_config(config), epochs=config.epochs, max_len=config.max_len,
        lr=config.lr, batch_size=config.batch_size,
        seed=derive_seed(config.seed, "train"),
        train_encoder=config.train_encoder,
        category_cap=config.category_cap, entity_cap=config.entity_cap)
    return store, stats


def recommend(dataset: Dataset, table: EmbeddingTable, store: ParamStore,
              config: RunConfig, users=None) -> dict[int, RecommendationList]:
    return recommend_users(
        store, dataset, table, policy_config(config), encoder_config(config),
        users=users, widths=config.widths(), max_len=config.max_len,
        k=config.top_k, encoder_seed=derive_seed(config.seed, "train"),
        category_cap=config.category_cap, entity_cap=config.entity_cap,
        workers=config.workers)


def evaluate(dataset: Dataset, table: EmbeddingTable, store: ParamStore,
             config: RunConfig,
             ) -> tuple[dict[int, RecommendationList], MetricsReport]:
    eligible = [u for u in dataset.split.users() if dataset.split.test_items(u)]
    lists = recommend(dataset, table, store, config, users=eligible)
    rankings = {u: lists[u].items() for u in lists}
    return lists, evaluate_rankings(rankings, dataset.split, config.top_k)
