"""Command-line surface: synth, ingest, pretrain, train, recommend,
evaluate, gradcheck.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric divergence.  Every command echoes its resolved configuration and
seed so runs can be reproduced exactly.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, parse_config_file, resolve_config
from .errors import (CheckpointError, ConfigError, DataError, DivergenceError,
                     KgPathRecError)
from .graph import (Dataset, InteractionSplit, KnowledgeGraph, load_dataset,
                    load_entities, save_dataset, split_interactions,
                    load_category_assignment, read_tsv_rows)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGENCE = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _widths(raw: str):
    return tuple(int(tok) for tok in raw.split(",") if tok.strip())


_CONFIG_FLAG_TYPES = {
    "dim": int, "gnn_layers": int, "attention_layers": int,
    "trade_off": float, "neighbor_cap": int, "hidden": int, "max_len": int,
    "consistency_weight": float, "guidance_weight": float, "gamma": float,
    "entropy_weight": float, "baseline": str, "category_cap": int,
    "entity_cap": int, "epochs": int, "lr": float, "batch_size": int,
    "pretrain_epochs": int, "pretrain_lr": float, "pretrain_margin": float,
    "pretrain_negatives": int, "split_ratio": float, "top_k": int,
    "seed": int, "workers": int, "beam_widths": _widths,
}
_CONFIG_BOOL_FLAGS = ("terminal_every_step", "train_encoder")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE",
                        help="flat key = value configuration file")
    for name, typ in _CONFIG_FLAG_TYPES.items():
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name,
                            type=typ, default=None)
    for name in _CONFIG_BOOL_FLAGS:
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name,
                            action=argparse.BooleanOptionalAction,
                            default=None)


def _resolve(args) -> RunConfig:
    file_values = parse_config_file(args.config) if args.config else None
    flags = {name: getattr(args, name)
             for name in (*_CONFIG_FLAG_TYPES, *_CONFIG_BOOL_FLAGS)}
    config = resolve_config(file_values, flags)
    print(config.echo())
    return config


def _load_data(args) -> Dataset:
    return load_dataset(args.data)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    from .synthetic import SynthConfig, generate_synthetic
    config = _resolve(args)
    synth = SynthConfig(
        users=args.users, categories=args.categories,
        items_per_category=args.items_per_category, brands=args.brands,
        features=args.features, purchases_per_user=args.purchases_per_user,
        mentions_per_user=args.mentions_per_user,
        features_per_item=args.features_per_item,
        cross_links=args.cross_links, planted_pairs=args.planted_pairs,
        min_plant_hops=args.min_plant_hops, max_hops=config.max_len,
        chain_chaff_features=args.chain_chaff_features,
        target_ratio=args.target_ratio)
    from .config import derive_seed
    result = generate_synthetic(synth, derive_seed(config.seed, "synth"))
    save_dataset(args.out, result.kg, result.assignment, result.split)
    for key, value in result.report.items():
        print(f"{key}\t{value}")
    print(f"dataset written to {args.out}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    config = _resolve(args)
    entities = load_entities(args.entities)
    by_name = {e.name: e.id for e in entities}

    rel_names: list[str] = []
    rel_ids: dict[str, int] = {}
    non_purchase: list[tuple[int, int, int]] = []
    purchase_pairs: list[tuple[int, int]] = []
    seen_pairs: set[tuple[int, int]] = set()

    def note_purchase(u: int, i: int) -> None:
        if (u, i) not in seen_pairs:
            seen_pairs.add((u, i))
            purchase_pairs.append((u, i))

    triples_path = Path(args.triples)
    seen_triples: set[tuple[int, int, int]] = set()
    for lineno, (head, rel, tail) in enumerate(read_tsv_rows(triples_path, 3),
                                               start=1):
        for name in (head, tail):
            if name not in by_name:
                raise DataError(f"{triples_path.name} line {lineno}: unknown "
                                f"entity {name!r}")
        if rel == "purchase":
            note_purchase(by_name[head], by_name[tail])
            continue
        if rel not in rel_ids:
            rel_ids[rel] = len(rel_names)
            rel_names.append(rel)
        triple = (by_name[head], rel_ids[rel], by_name[tail])
        if triple not in seen_triples:
            seen_triples.add(triple)
            non_purchase.append(triple)

    interactions_path = Path(args.interactions)
    for lineno, (user, item) in enumerate(read_tsv_rows(interactions_path, 2),
                                          start=1):
        for name in (user, item):
            if name not in by_name:
                raise DataError(f"{interactions_path.name} line {lineno}: "
                                f"unknown entity {name!r}")
        note_purchase(by_name[user], by_name[item])

    if "purchase" not in rel_ids:
        rel_ids["purchase"] = len(rel_names)
        rel_names.append("purchase")
    pid = rel_ids["purchase"]

    full = KnowledgeGraph(entities, rel_names,
                          non_purchase + [(u, pid, i)
                                          for u, i in purchase_pairs],
                          "purchase")
    from .config import derive_seed
    split = split_interactions(full, config.split_ratio,
                               derive_seed(config.seed, "split"))
    train_triples = [(u, pid, i) for u in sorted(split.train)
                     for i in split.train[u]]
    train_kg = KnowledgeGraph(entities, rel_names,
                              non_purchase + train_triples, "purchase")
    assignment = load_category_assignment(args.categories, train_kg)
    save_dataset(args.out, train_kg, assignment, split)

    kinds = {k: len(train_kg.entities_of_kind(k))
             for k in ("user", "item", "brand", "feature")}
    print(f"entities\t{train_kg.n_entities}")
    for kind, count in kinds.items():
        print(f"{kind}s\t{count}")
    print(f"interactions\t{len(purchase_pairs)}")
    print(f"triples\t{len(train_kg.triples)}")
    print(f"categories\t{assignment.n_categories}")
    if split.excluded_users:
        print(f"excluded_users\t{len(split.excluded_users)}")
    print(f"dataset written to {args.out}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    from . import pipeline
    config = _resolve(args)
    dataset = _load_data(args)
    table, history = pipeline.pretrain(dataset, config)
    save_checkpoint(args.out, "embeddings", table, config.to_dict())
    if history:
        print(f"pretrain loss: first={history[0]:.4f} last={history[-1]:.4f} "
              f"epochs={len(history)}")
    print(f"embedding checkpoint written to {args.out}")
    return EXIT_OK


def _load_table(args, dataset, config, expect_kind):
    ckpt = load_checkpoint(getattr(args, "checkpoint", None)
                           or args.embeddings, expect_kind=expect_kind)
    if ckpt.dim != config.dim:
        raise CheckpointError(
            f"checkpoint dimension {ckpt.dim} does not match configured dim "
            f"{config.dim}; pass --dim {ckpt.dim}")
    counts = (dataset.kg.n_entities, dataset.kg.n_relations,
              dataset.assignment.n_categories)
    have = (ckpt.table.entity.shape[0], ckpt.table.relation.shape[0],
            ckpt.table.category.shape[0])
    if counts != have:
        raise CheckpointError(
            f"checkpoint shapes {have} do not match the dataset {counts}")
    return ckpt


def cmd_train(args) -> int:
    from . import pipeline
    from .training import write_train_log
    config = _resolve(args)
    dataset = _load_data(args)
    ckpt = _load_table(args, dataset, config, "embeddings")
    store, stats = pipeline.train(dataset, ckpt.table, config)
    save_checkpoint(args.out, "model", ckpt.table, config.to_dict(),
                    store=store)
    log_path = args.log or str(Path(args.out).with_suffix(".log.tsv"))
    write_train_log(log_path, stats)
    if stats:
        print(f"final epoch: hit_rate={stats[-1].hit_rate:.3f} "
              f"loss={stats[-1].loss:.4f}")
    print(f"model checkpoint written to {args.out}")
    print(f"training log written to {log_path}")
    return EXIT_OK


def _load_model(args, dataset, config):
    ckpt = load_checkpoint(args.checkpoint, expect_kind="model")
    if ckpt.dim != config.dim:
        raise CheckpointError(
            f"checkpoint dimension {ckpt.dim} does not match configured dim "
            f"{config.dim}; pass --dim {ckpt.dim}")
    return ckpt


def cmd_recommend(args) -> int:
    from . import pipeline
    from .inference import export_paths
    config = _resolve(args)
    dataset = _load_data(args)
    ckpt = _load_model(args, dataset, config)
    users = None
    if args.users:
        users = [dataset.kg.entity(name).id for name in args.users.split(",")]
    lists = pipeline.recommend(dataset, ckpt.table, ckpt.store, config,
                               users=users)
    export_paths(args.out, dataset.kg, lists, dataset.assignment.names)
    total = sum(len(l.entries) for l in lists.values())
    print(f"{total} recommendations for {len(lists)} users written to "
          f"{args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from . import pipeline
    from .inference import export_paths
    config = _resolve(args)
    dataset = _load_data(args)
    ckpt = _load_model(args, dataset, config)
    lists, report = pipeline.evaluate(dataset, ckpt.table, ckpt.store, config)
    with open(args.report, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.tsv())
    if args.paths:
        export_paths(args.paths, dataset.kg, lists, dataset.assignment.names)
    print(report.table(), end="")
    print(f"metrics report written to {args.report}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .diagnostics import run_gradient_battery
    results = run_gradient_battery(args.seed if args.seed is not None else 0)
    failed = False
    for r in results:
        verdict = "pass" if r.passed else "FAIL"
        print(f"{verdict}  {r.name}: max relative error "
              f"{r.max_relative_error:.3e} (tolerance {r.tolerance:g})")
        failed = failed or not r.passed
    if failed:
        print("gradient check failed", file=sys.stderr)
        return EXIT_DIVERGENCE
    return EXIT_OK


# ---------------------------------------------------------------------------
# wiring
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kgpathrec",
                     description="explainable dual-agent path recommendation "
                                 "over knowledge graphs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic planted dataset")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--users", type=int, default=24)
    p.add_argument("--categories", type=int, default=8)
    p.add_argument("--items-per-category", type=int, default=6)
    p.add_argument("--brands", type=int, default=6)
    p.add_argument("--features", type=int, default=16)
    p.add_argument("--purchases-per-user", type=int, default=6)
    p.add_argument("--mentions-per-user", type=int, default=3)
    p.add_argument("--features-per-item", type=int, default=2)
    p.add_argument("--cross-links", type=int, default=16)
    p.add_argument("--planted-pairs", type=int, default=24)
    p.add_argument("--min-plant-hops", type=int, default=4)
    p.add_argument("--chain-chaff-features", type=int, default=6)
    p.add_argument("--target-ratio", type=float, default=None)
    p.set_defaults(run=cmd_synth)

    p = sub.add_parser("ingest", help="normalize raw TSVs into a dataset dir")
    _add_config_flags(p)
    p.add_argument("--entities", required=True)
    p.add_argument("--triples", required=True)
    p.add_argument("--categories", required=True)
    p.add_argument("--interactions", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(run=cmd_ingest)

    p = sub.add_parser("pretrain", help="pretrain the embedding table")
    _add_config_flags(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="embedding checkpoint path")
    p.set_defaults(run=cmd_pretrain)

    p = sub.add_parser("train", help="train the dual-agent policies")
    _add_config_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--embeddings", required=True,
                   help="embedding checkpoint from pretrain")
    p.add_argument("--out", required=True, help="model checkpoint path")
    p.add_argument("--log", default=None, help="training log TSV path")
    p.set_defaults(run=cmd_train)

    p = sub.add_parser("recommend", help="export top-K paths for users")
    _add_config_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--out", required=True, help="path export TSV")
    p.add_argument("--users", default=None,
                   help="comma-separated user names (default: all)")
    p.set_defaults(run=cmd_recommend)

    p = sub.add_parser("evaluate", help="rank and score held-out items")
    _add_config_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--report", required=True, help="metrics TSV path")
    p.add_argument("--paths", default=None, help="optional path export TSV")
    p.set_defaults(run=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient battery")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(run=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.run(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except KgPathRecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
