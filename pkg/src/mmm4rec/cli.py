"""Command-line entry point: ``python -m mmm4rec <subcommand> ...``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import data as io
from .harness import bench_kernels, truncation_probe, verify_duality
from .metrics import evaluate_model
from .model import ABLATIONS, ModelConfig, apply_ablation, init_params
from .synth import make_corpus, write_corpus
from .tensor import DomainError, ShapeError
from .temporal import OrderingError
from .training import IncompatibleCheckpoint, TrainConfig, run_finetune, run_pretrain, transfer_params

log = logging.getLogger("mmm4rec")

CONTRACT_ERRORS = (io.FormatError, FileNotFoundError, IncompatibleCheckpoint, OrderingError,
                   ShapeError, DomainError, ValueError, IndexError, KeyError)

_MODEL_KEYS = {f.name: f.type for f in dataclasses.fields(ModelConfig)}


def _optional_float(value: str) -> float | None:
    return None if value.lower() == "none" else float(value)


_TRAIN_KEYS = {"lr": float, "batch_size": int, "epochs": int, "pretrain_epochs": int, "patience": int,
               "clip_norm": _optional_float, "threshold": float, "k_core": int}
_TYPES = {"int": int, "float": float, "bool": bool, "str": str}


def _config_schema() -> dict:
    schema = {k: _TYPES[v] if isinstance(v, str) else v for k, v in _MODEL_KEYS.items()}
    schema.update(_TRAIN_KEYS)
    return schema


def load_settings(path) -> tuple[ModelConfig, dict]:
    values = io.parse_config(path, _config_schema()) if path else {}
    model = ModelConfig(**{k: v for k, v in values.items() if k in _MODEL_KEYS})
    train = {k: v for k, v in values.items() if k in _TRAIN_KEYS}
    return model, train


def _train_config(train: dict, cfg: ModelConfig, seed: int, pretrain: bool) -> TrainConfig:
    kw = {k: train[k] for k in ("lr", "batch_size", "patience", "clip_norm", "threshold") if k in train}
    epochs = train.get("pretrain_epochs" if pretrain else "epochs")
    if epochs is not None:
        kw["epochs"] = epochs
    return TrainConfig(tau=cfg.tau, seed=seed, **kw)


def _require(args, *names):
    missing = [f"--{n}" for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"{args.command} needs {', '.join(missing)}")


class UsageError(Exception):
    pass


def _load_prepared(data_dir: Path):
    item_ids = json.loads((data_dir / "item_map.json").read_text())
    catalog = io.load_catalog(data_dir, item_ids)
    return io.load_split(data_dir / "split.json"), catalog


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def cmd_synth(args) -> int:
    _require(args, "out")
    corpus = make_corpus(users=args.users, items=args.items, dim=args.dim, seed=args.seed,
                         generator_seed=args.generator_seed, domain=args.domain)
    write_corpus(corpus, args.out)
    print(f"wrote {len(corpus.records)} interactions over {args.items} items to {args.out}")
    return 0


def cmd_prepare(args) -> int:
    _require(args, "data")
    data_dir = Path(args.data)
    out = Path(args.out) if args.out else data_dir
    out.mkdir(parents=True, exist_ok=True)
    _, train = load_settings(args.config)
    records = io.kcore_filter(io.parse_interactions(data_dir / "interactions.tsv"), train.get("k_core", 5))
    seqs, item_ids = io.build_sequences(records)
    split = io.leave_one_out_split(seqs)
    io.load_catalog(data_dir, item_ids)  # every item must have features
    _write_json(out / "item_map.json", item_ids)
    io.save_split(out / "split.json", split)
    if out != data_dir:
        for name in ("features_v.mmf", "features_t.mmf", "items.idx"):
            (out / name).write_bytes((data_dir / name).read_bytes())
    print(f"{len(seqs)} users, {len(item_ids)} items; train/valid/test = "
          f"{len(split.train)}/{len(split.valid)}/{len(split.test)}")
    return 0


def cmd_pretrain(args) -> int:
    _require(args, "data", "out")
    cfg, train = load_settings(args.config)
    cfg = apply_ablation(cfg, args.ablation)
    split, catalog = _load_prepared(Path(args.data))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    store = init_params(cfg, args.seed, catalog.feature_dims, catalog.num_items)
    history = run_pretrain(split.train, catalog, store, cfg, _train_config(train, cfg, args.seed, True), out)
    print(f"pretrained {len(history)} epochs, final loss {history[-1]['loss']:.4f}")
    return 0


def cmd_finetune(args) -> int:
    _require(args, "data", "out")
    cfg, train = load_settings(args.config)
    cfg = apply_ablation(cfg, args.ablation)
    split, catalog = _load_prepared(Path(args.data))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.checkpoint and args.ablation == "no-pt":
        raise ValueError("the no-pt variant trains from scratch; drop --checkpoint")
    if args.checkpoint:
        store = transfer_params(io.load_checkpoint(args.checkpoint), cfg, args.seed,
                                catalog.feature_dims, catalog.num_items)
    else:
        store = init_params(cfg, args.seed, catalog.feature_dims, catalog.num_items)
    history, conv = run_finetune(split, catalog, store, cfg, _train_config(train, cfg, args.seed, False), out)
    io.save_checkpoint(out / "finetune.mmck", store)
    timing = {"seconds_per_epoch": conv.seconds_per_epoch}
    report = dataclasses.asdict(conv)
    del report["seconds_per_epoch"]
    _write_json(out / "convergence.json", report)
    _write_json(out / "timing.json", timing)
    if split.test:
        rep = evaluate_model(store, cfg, catalog, split.test)
        (out / "eval_report.json").write_text(rep.to_json())
        print(rep.to_json(), end="")
    print(f"best valid NDCG@10 {conv.best_ndcg10:.4f} at epoch {conv.epochs_to_best}")
    return 0


def _model_from_checkpoint(path) -> tuple:
    store = io.load_checkpoint(path)
    return store, ModelConfig(**store.meta["config"])


def cmd_evaluate(args) -> int:
    _require(args, "data", "checkpoint")
    split, catalog = _load_prepared(Path(args.data))
    store, cfg = _model_from_checkpoint(args.checkpoint)
    rep = evaluate_model(store, cfg, catalog, split.test)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "eval_report.json").write_text(rep.to_json())
    print(rep.to_json(), end="")
    return 0


def cmd_verify(args) -> int:
    report = verify_duality(args.seed)
    print(report.summary())
    return 0 if report.passed else 1


def cmd_bench(args) -> int:
    report = bench_kernels(repeats=args.repeats, seed=args.seed)
    doc = report.to_dict()
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        _write_json(Path(args.out) / "bench_report.json", doc)
    for p in report.points:
        print(f"L={p.L:4d} D={p.D:3d} N={p.N:4d}  quadratic {p.quadratic_us:10.1f}us  "
              f"recurrent {p.recurrent_us:10.1f}us  diff {p.max_abs_diff:.1e}  auto={p.selected}")
    ok = report.selector_accuracy >= 0.8 and report.max_abs_diff < 1e-5
    print(f"selector matches faster form on {report.selector_accuracy:.0%} of points; "
          f"max diff {report.max_abs_diff:.1e}: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_probe(args) -> int:
    _require(args, "data", "checkpoint", "out")
    split, catalog = _load_prepared(Path(args.data))
    store, cfg = _model_from_checkpoint(args.checkpoint)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    lengths = [int(x) for x in args.lengths.split(",")]
    rows = truncation_probe(store, cfg, catalog, split.test, lengths, out_csv=Path(args.out) / "truncation.csv")
    for row in rows:
        print(", ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    return 0


COMMANDS = {"synth": cmd_synth, "prepare": cmd_prepare, "pretrain": cmd_pretrain, "finetune": cmd_finetune,
            "evaluate": cmd_evaluate, "verify": cmd_verify, "bench": cmd_bench, "probe": cmd_probe}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmm4rec", description="Multi-modal SSD sequential recommender")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value settings file")
        p.add_argument("--data", help="dataset directory")
        p.add_argument("--checkpoint", help="checkpoint file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--ablation", choices=ABLATIONS, default="full")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "synth":
            p.add_argument("--users", type=int, default=200)
            p.add_argument("--items", type=int, default=100)
            p.add_argument("--dim", type=int, default=32)
            p.add_argument("--generator-seed", type=int, default=1234)
            p.add_argument("--domain", default="", help="prefix for user/item ids")
        if name == "bench":
            p.add_argument("--repeats", type=int, default=5)
        if name == "probe":
            p.add_argument("--lengths", default="1,2,3,5,10,20,50")
    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CONTRACT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())
