"""Scikit-learn style front door for the whole pipeline.

``fit`` pretrains embeddings and trains both agents on a dataset;
``recommend``/``predict`` produce top-K lists with explanation paths, and
``score`` reports NDCG on the held-out interactions.  Hyperparameters are
plain constructor arguments, so ``get_params``/``set_params``/``clone``
work the usual way.
"""

from __future__ import annotations

from pathlib import Path

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import pipeline
from .config import RunConfig
from .graph import Dataset, load_dataset
from .inference import RecommendationList
from .metrics import MetricsReport


class KGPathRecommender(BaseEstimator):
    """Explainable top-K recommender over a knowledge graph.

    Parameters mirror RunConfig; see its docstring for ranges.  The fitted
    state is the pretrained embedding table plus the trained parameter
    store, both kept in memory.
    """

    def __init__(self, dim=100, gnn_layers=3, attention_layers=2,
                 trade_off=0.4, neighbor_cap=25, hidden=0, max_len=6,
                 consistency_weight=0.6, guidance_weight=0.5, gamma=1.0,
                 entropy_weight=0.01, baseline="batch_mean",
                 terminal_every_step=True, category_cap=10, entity_cap=50,
                 epochs=50, lr=1e-4, batch_size=32, train_encoder=False,
                 pretrain_epochs=50, pretrain_lr=0.01, pretrain_margin=1.0,
                 pretrain_negatives=1, beam_widths=(), top_k=10, seed=0,
                 workers=1):
        self.dim = dim
        self.gnn_layers = gnn_layers
        self.attention_layers = attention_layers
        self.trade_off = trade_off
        self.neighbor_cap = neighbor_cap
        self.hidden = hidden
        self.max_len = max_len
        self.consistency_weight = consistency_weight
        self.guidance_weight = guidance_weight
        self.gamma = gamma
        self.entropy_weight = entropy_weight
        self.baseline = baseline
        self.terminal_every_step = terminal_every_step
        self.category_cap = category_cap
        self.entity_cap = entity_cap
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.train_encoder = train_encoder
        self.pretrain_epochs = pretrain_epochs
        self.pretrain_lr = pretrain_lr
        self.pretrain_margin = pretrain_margin
        self.pretrain_negatives = pretrain_negatives
        self.beam_widths = beam_widths
        self.top_k = top_k
        self.seed = seed
        self.workers = workers

    def _run_config(self) -> RunConfig:
        return RunConfig(
            dim=self.dim, gnn_layers=self.gnn_layers,
            attention_layers=self.attention_layers, trade_off=self.trade_off,
            neighbor_cap=self.neighbor_cap, hidden=self.hidden,
            max_len=self.max_len,
            consistency_weight=self.consistency_weight,
            guidance_weight=self.guidance_weight, gamma=self.gamma,
            entropy_weight=self.entropy_weight, baseline=self.baseline,
            terminal_every_step=self.terminal_every_step,
            category_cap=self.category_cap, entity_cap=self.entity_cap,
            epochs=self.epochs, lr=self.lr, batch_size=self.batch_size,
            train_encoder=self.train_encoder,
            pretrain_epochs=self.pretrain_epochs,
            pretrain_lr=self.pretrain_lr,
            pretrain_margin=self.pretrain_margin,
            pretrain_negatives=self.pretrain_negatives,
            beam_widths=tuple(self.beam_widths), top_k=self.top_k,
            seed=self.seed, workers=self.workers)

    @staticmethod
    def _as_dataset(data) -> Dataset:
        if isinstance(data, Dataset):
            return data
        if isinstance(data, (str, Path)):
            return load_dataset(data)
        raise TypeError("fit expects a Dataset or a dataset directory path")

    def fit(self, X, y=None) -> "KGPathRecommender":
        """Pretrain embeddings, then train both agents on the dataset."""
        config = self._run_config()
        dataset = self._as_dataset(X)
        table, pretrain_history = pipeline.pretrain(dataset, config)
        store, train_stats = pipeline.train(dataset, table, config)
        self.dataset_ = dataset
        self.config_ = config
        self.table_ = table
        self.store_ = store
        self.pretrain_history_ = pretrain_history
        self.train_stats_ = train_stats
        return self

    def recommend(self, users=None) -> dict[int, RecommendationList]:
        """Top-K recommendations with explanation paths per user id."""
        check_is_fitted(self, "store_")
        return pipeline.recommend(self.dataset_, self.table_, self.store_,
                                  self.config_, users=users)

    def predict(self, X=None) -> list[list[int]]:
        """Ranked item-id lists; X may be an iterable of user ids."""
        users = None if X is None else list(X)
        lists = self.recommend(users)
        return [lists[u].items() for u in sorted(lists)]

    def evaluate(self) -> MetricsReport:
        check_is_fitted(self, "store_")
        _, report = pipeline.evaluate(self.dataset_, self.table_, self.store_,
                                      self.config_)
        return report

    def score(self, X=None, y=None) -> float:
        """NDCG at top_k over users with held-out items."""
        return self.evaluate().ndcg
