"""Run configuration: validated ranges, flat config files, seed splitting.

Defaults follow the tuned values for Beauty-style runs: 3 propagation
layers, 2 attention layers, partner-reward weights 0.6/0.5, hop budget 6,
trade-off 0.4, embedding size 100, action caps 10/50, Adam at 1e-4 for 50
epochs, metrics at top-10.  Precedence is flag > file > default.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError


@dataclass
class RunConfig:
    dim: int = 100
    gnn_layers: int = 3
    attention_layers: int = 2
    trade_off: float = 0.4
    neighbor_cap: int = 25
    hidden: int = 0                 # 0 means 2 * dim
    max_len: int = 6
    consistency_weight: float = 0.6
    guidance_weight: float = 0.5
    gamma: float = 1.0
    entropy_weight: float = 0.01
    baseline: str = "batch_mean"
    terminal_every_step: bool = True
    category_cap: int = 10
    entity_cap: int = 50
    epochs: int = 50
    lr: float = 1e-4
    batch_size: int = 32
    train_encoder: bool = False
    pretrain_epochs: int = 50
    pretrain_lr: float = 0.01
    pretrain_margin: float = 1.0
    pretrain_negatives: int = 1
    split_ratio: float = 0.7
    beam_widths: tuple[int, ...] = ()   # empty means the built-in default
    top_k: int = 10
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        checks = [
            (self.dim >= 1, "dim must be >= 1"),
            (self.gnn_layers >= 1, "gnn_layers must be >= 1"),
            (self.attention_layers >= 1, "attention_layers must be >= 1"),
            (0.0 <= self.trade_off <= 1.0, "trade_off must be in [0,1]"),
            (self.neighbor_cap >= 1, "neighbor_cap must be >= 1"),
            (self.hidden >= 0, "hidden must be >= 0"),
            (1 <= self.max_len <= 20, "max_len must be in [1,20]"),
            (self.consistency_weight >= 0, "consistency_weight must be >= 0"),
            (self.guidance_weight >= 0, "guidance_weight must be >= 0"),
            (0.0 < self.gamma <= 1.0, "gamma must be in (0,1]"),
            (self.entropy_weight >= 0, "entropy_weight must be >= 0"),
            (self.baseline in ("batch_mean", "none"),
             "baseline must be batch_mean or none"),
            (self.category_cap >= 1, "category_cap must be >= 1"),
            (self.entity_cap >= 1, "entity_cap must be >= 1"),
            (self.epochs >= 0, "epochs must be >= 0"),
            (self.lr > 0, "lr must be positive"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.pretrain_epochs >= 0, "pretrain_epochs must be >= 0"),
            (self.pretrain_lr > 0, "pretrain_lr must be positive"),
            (self.pretrain_margin > 0, "pretrain_margin must be positive"),
            (self.pretrain_negatives >= 1, "pretrain_negatives must be >= 1"),
            (0.0 < self.split_ratio < 1.0, "split_ratio must be in (0,1)"),
            (all(w >= 1 for w in self.beam_widths),
             "beam widths must be positive"),
            (self.top_k >= 1, "top_k must be >= 1"),
            (self.workers >= 1, "workers must be >= 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    @property
    def hidden_width(self) -> int:
        return self.hidden if self.hidden else 2 * self.dim

    def widths(self) -> list[int]:
        from .inference import default_widths
        if not self.beam_widths:
            return default_widths(self.max_len)
        if len(self.beam_widths) < self.max_len:
            raise ConfigError("beam_widths shorter than max_len")
        return list(self.beam_widths[:self.max_len])

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        clean = dict(doc)
        if "beam_widths" in clean and clean["beam_widths"] is not None:
            clean["beam_widths"] = tuple(int(w) for w in clean["beam_widths"])
        return cls(**clean)

    def echo(self) -> str:
        pairs = [f"{f.name}={getattr(self, f.name)!r}" for f in fields(self)]
        return "config: " + " ".join(pairs)


def _parse_value(name: str, raw: str):
    raw = raw.strip()
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    if "," in raw:
        return tuple(int(tok) for tok in raw.split(",") if tok.strip())
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def parse_config_file(path: str | Path) -> dict:
    """Flat ``key = value`` lines; '#' starts a comment."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    out: dict = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(),
                                  start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path.name} line {lineno}: expected key = value")
        key, _, raw = line.partition("=")
        out[key.strip()] = _parse_value(key.strip(), raw)
    return out


def resolve_config(file_values: dict | None, flag_values: dict) -> RunConfig:
    """Merge with precedence flag > file > default."""
    merged: dict = {}
    if file_values:
        merged.update(file_values)
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    return RunConfig.from_dict(merged)


def derive_seed(root_seed: int, stage: str) -> int:
    """Stable per-stage split of one root seed."""
    digest = hashlib.sha256(f"{root_seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % (2 ** 31)
