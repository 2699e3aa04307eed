"""Self-describing JSON checkpoints that round-trip float64 bit-exactly.

Two kinds share one format: ``embeddings`` (pretrained table only) and
``model`` (table plus every learnable parameter and its optimizer state).
Loading refuses version or kind mismatches rather than guessing.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import ParamStore
from .embeddings import EmbeddingTable
from .errors import CheckpointError

FORMAT_VERSION = 1


def _encode(arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape),
            "data": base64.b64encode(data.tobytes()).decode("ascii")}


def _decode(doc: dict) -> np.ndarray:
    raw = base64.b64decode(doc["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(doc["shape"]).copy()


@dataclass
class Checkpoint:
    kind: str
    dim: int
    config: dict
    table: EmbeddingTable
    store: ParamStore | None = None


def save_checkpoint(path: str | Path, kind: str, table: EmbeddingTable,
                    config: dict, store: ParamStore | None = None) -> None:
    if kind not in ("embeddings", "model"):
        raise CheckpointError(f"unknown checkpoint kind {kind!r}")
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "dim": table.dim,
        "counts": {
            "entities": int(table.entity.shape[0]),
            "relations": int(table.relation.shape[0]),
            "categories": int(table.category.shape[0]),
        },
        "config": config,
        "embeddings": {
            "entity": _encode(table.entity),
            "relation": _encode(table.relation),
            "category": _encode(table.category),
            "start_marker": _encode(table.start_marker),
        },
    }
    if kind == "model":
        if store is None:
            raise CheckpointError("model checkpoint needs a parameter store")
        doc["params"] = {name: _encode(store[name]) for name in store.names()}
        doc["adam"] = {
            "step": store.step,
            "moment1": {n: _encode(store.moment1[n]) for n in store.names()},
            "moment2": {n: _encode(store.moment2[n]) for n in store.names()},
        }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str | Path,
                    expect_kind: str | None = None) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} does not exist")
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version} does not match "
            f"supported version {FORMAT_VERSION}")
    kind = doc.get("kind")
    if expect_kind is not None and kind != expect_kind:
        raise CheckpointError(
            f"expected a {expect_kind!r} checkpoint, found {kind!r}")
    emb = doc["embeddings"]
    table = EmbeddingTable(int(doc["dim"]), _decode(emb["entity"]),
                           _decode(emb["relation"]), _decode(emb["category"]),
                           _decode(emb["start_marker"]))
    store = None
    if kind == "model":
        store = ParamStore()
        for name, enc in doc["params"].items():
            store.add(name, _decode(enc))
        adam = doc["adam"]
        store.step = int(adam["step"])
        for name in store.names():
            store.moment1[name] = _decode(adam["moment1"][name])
            store.moment2[name] = _decode(adam["moment2"][name])
    return Checkpoint(kind, int(doc["dim"]), dict(doc.get("config", {})),
                      table, store)
