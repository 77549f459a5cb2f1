"""Command-line entry point wiring the pipeline stages to files.

Verbs: generate-data, train, build-db, query, eval, ablate. Exit codes:
0 success, 1 usage error, 2 data/config error, 3 runtime failure. Every run
writes a manifest.json (config hash, seed, artifact paths, timestamps) into
the output directory.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import evaluation, trainer
from .backbone import extract, extract_batch
from .dataset import GenConfig, generate, load_dataset, save_dataset
from .errors import DataFormatError, FghashError
from .hash_layer import BitCodeMatrix, binarize, hash_forward, pack_matrix, save_hash_db
from .index import build_index_from_file, query_topk
from .tensor import Tensor, no_grad
from .trainer import TrainConfig, database_codes, load_model


class UsageError(Exception):
    def __init__(self, message: str, parser: argparse.ArgumentParser):
        super().__init__(message)
        self.parser = parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: D102 - argparse hook
        raise UsageError(message, self)


def config_hash(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(canon).hexdigest()


def _write_manifest(out_dir, cfg_hash: str, seed: int, artifacts: dict, started: str) -> None:
    manifest = {
        "config_hash": cfg_hash,
        "seed": seed,
        "artifact_paths": artifacts,
        "started_at": started,
        "finished_at": datetime.now(timezone.utc).isoformat(),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def parse_config(path: str | None, overrides: dict) -> TrainConfig:
    """Merge a flat JSON config file with command-line overrides (flags win)."""
    raw: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"config {path}: invalid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise DataFormatError(f"config {path}: expected a JSON object")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(raw)


def _milestones(text: str) -> tuple[int, ...]:
    if not text.strip():
        return ()
    return tuple(int(tok) for tok in text.split(","))


def _add_train_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file with flat TrainConfig keys")
    p.add_argument("--k", type=int)
    p.add_argument("--r", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--epochs-per-iteration", dest="epochs_per_iteration", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-milestones", dest="lr_milestones", type=_milestones, metavar="I,J,...")
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--n-e", dest="n_e", type=int)
    p.add_argument("--l", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--v-passes", dest="v_passes", type=int)
    p.add_argument("--srem-enabled", dest="srem_enabled", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--normalize-loss", dest="normalize_loss", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument(
        "--v-update-double-weight",
        dest="v_update_double_weight",
        action=argparse.BooleanOptionalAction,
        default=None,
    )


_OVERRIDE_KEYS = [
    "k", "r", "iterations", "epochs_per_iteration", "batch_size", "lr", "lr_milestones",
    "momentum", "weight_decay", "alpha", "beta", "n_e", "l", "epsilon", "seed", "v_passes",
    "srem_enabled", "normalize_loss", "v_update_double_weight",
]


def _overrides(args: argparse.Namespace) -> dict:
    out = {}
    for key in _OVERRIDE_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            out[key] = list(value) if key == "lr_milestones" else value
    return out


def build_parser() -> _Parser:
    parser = _Parser(prog="fghash", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("generate-data", parents=[], help="write a synthetic dataset")
    g.add_argument("--classes", type=int, default=10)
    g.add_argument("--per-class", dest="per_class", type=int, default=64)
    g.add_argument("--height", type=int, default=32)
    g.add_argument("--width", type=int, default=32)
    g.add_argument("--motif-size", dest="motif_size", type=int, default=8)
    g.add_argument("--noise-std", dest="noise_std", type=float, default=0.03)
    g.add_argument("--query-fraction", dest="query_fraction", type=float, default=0.2)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model and learn database codes")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--dump-masks", action="store_true", help="dump erase masks as PGM + JSON")
    _add_train_overrides(t)
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("build-db", help="encode the database split with a trained model")
    b.add_argument("--dataset", required=True)
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build_db)

    q = sub.add_parser("query", help="top-K retrieval for one query-split image")
    q.add_argument("--dataset", required=True)
    q.add_argument("--checkpoint", required=True)
    q.add_argument("--db", required=True)
    q.add_argument("--query-index", dest="query_index", type=int, default=0)
    q.add_argument("--topk", type=int, default=10)
    q.set_defaults(func=cmd_query)

    e = sub.add_parser("eval", help="MAP / precision@10 over the query split")
    e.add_argument("--dataset", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--db", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--cutoff", type=int, default=None)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="grid of train+eval runs over (n_e, l)")
    a.add_argument("--dataset", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--grid", nargs=2, required=True, metavar=("n_e=...", "l=..."))
    _add_train_overrides(a)
    a.set_defaults(func=cmd_ablate)
    return parser


def cmd_generate(args) -> int:
    started = _now()
    cfg = GenConfig(
        classes=args.classes,
        per_class=args.per_class,
        height=args.height,
        width=args.width,
        motif_size=args.motif_size,
        noise_std=args.noise_std,
        query_fraction=args.query_fraction,
    )
    os.makedirs(args.out, exist_ok=True)
    ds = generate(cfg, args.seed)
    path = os.path.join(args.out, "dataset.fghd")
    save_dataset(ds, path)
    payload = {"gen_config": cfg.to_dict(), "seed": args.seed}
    _write_manifest(args.out, config_hash(payload), args.seed, {"dataset": path}, started)
    print(f"wrote {path}: {ds.count} images, {ds.class_count} classes")
    return 0


def _train_once(dataset, config: TrainConfig, out_dir, dump_masks: bool = False):
    os.makedirs(out_dir, exist_ok=True)
    mask_dir = os.path.join(out_dir, "masks") if dump_masks else None
    result = trainer.train(dataset, config, mask_dump_dir=mask_dir)
    ckpt = os.path.join(out_dir, "checkpoint.ckpt")
    db = os.path.join(out_dir, "database.fghv")
    log = os.path.join(out_dir, "train_log.csv")
    trainer.save_model(ckpt, result)
    save_hash_db(db, database_codes(result), dataset.train_labels())
    trainer.write_train_log(log, result.state.loss_log)
    return result, {"checkpoint": ckpt, "database": db, "train_log": log}


def cmd_train(args) -> int:
    started = _now()
    dataset = load_dataset(args.dataset)
    config = parse_config(args.config, _overrides(args))
    _, artifacts = _train_once(dataset, config, args.out, args.dump_masks)
    _write_manifest(args.out, config_hash(config.to_dict()), config.seed, artifacts, started)
    print(f"trained {config.iterations} iterations; artifacts in {args.out}")
    return 0


def cmd_build_db(args) -> int:
    started = _now()
    dataset = load_dataset(args.dataset)
    _, backbone, hash_params = load_model(args.checkpoint)
    os.makedirs(args.out, exist_ok=True)
    train_ids = dataset.train_ids
    codes = np.empty((train_ids.size, hash_params.bits))
    with no_grad():
        for start in range(0, train_ids.size, 256):
            chunk = train_ids[start : start + 256]
            _, z = extract_batch(Tensor(dataset.images[chunk]), backbone)
            codes[start : start + chunk.size] = binarize(hash_forward(z, hash_params))
    path = os.path.join(args.out, "database.fghv")
    save_hash_db(path, BitCodeMatrix(pack_matrix(codes), hash_params.bits), dataset.train_labels())
    payload = {"checkpoint": os.path.abspath(args.checkpoint), "dataset_seed": dataset.seed}
    _write_manifest(args.out, config_hash(payload), dataset.seed, {"database": path}, started)
    print(f"encoded {train_ids.size} database images into {path}")
    return 0


def cmd_query(args) -> int:
    dataset = load_dataset(args.dataset)
    _, backbone, hash_params = load_model(args.checkpoint)
    index = build_index_from_file(args.db)
    query_ids = dataset.query_ids
    if not 0 <= args.query_index < query_ids.size:
        raise DataFormatError(f"query index {args.query_index} out of range [0, {query_ids.size})")
    qid = query_ids[args.query_index]
    with no_grad():
        _, z = extract(dataset.images[qid], backbone)
        code = binarize(hash_forward(z, hash_params))
    print("rank,db_id,distance,label,match")
    qlabel = dataset.labels[qid]
    for rank, (db_id, dist) in enumerate(query_topk(index, code, args.topk), start=1):
        label = int(index.labels[db_id])
        print(f"{rank},{db_id},{dist},{label},{int(label == qlabel)}")
    return 0


def cmd_eval(args) -> int:
    started = _now()
    dataset = load_dataset(args.dataset)
    _, backbone, hash_params = load_model(args.checkpoint)
    index = build_index_from_file(args.db)
    os.makedirs(args.out, exist_ok=True)
    report = evaluation.evaluate(index, backbone, hash_params, dataset, args.cutoff)
    results = os.path.join(args.out, "results.csv")
    summary = os.path.join(args.out, "summary.json")
    payload = {"checkpoint": os.path.abspath(args.checkpoint), "db": os.path.abspath(args.db)}
    seeds = {"dataset": dataset.seed}
    evaluation.write_report(report, results, summary, config_hash(payload), seeds)
    _write_manifest(args.out, config_hash(payload), dataset.seed,
                    {"results": results, "summary": summary}, started)
    print(f"map={report.map:.4f} p@10={report.p_at_10_mean:.4f} over {report.query_ids.size} queries")
    return 0


def _parse_grid_axis(token: str, key: str) -> list[int]:
    prefix = key + "="
    if not token.startswith(prefix):
        raise DataFormatError(f"grid axis must look like {key}=a,b,c; got {token!r}")
    try:
        values = [int(v) for v in token[len(prefix):].split(",") if v]
    except ValueError as exc:
        raise DataFormatError(f"grid axis {token!r}: {exc}") from exc
    if not values:
        raise DataFormatError(f"grid axis {token!r} is empty")
    return values


def cmd_ablate(args) -> int:
    started = _now()
    dataset = load_dataset(args.dataset)
    base = parse_config(args.config, _overrides(args))
    n_e_values = _parse_grid_axis(args.grid[0], "n_e")
    l_values = _parse_grid_axis(args.grid[1], "l")
    os.makedirs(args.out, exist_ok=True)

    rows = []
    for n_e in n_e_values:
        row = []
        for l in l_values:
            cfg = TrainConfig.from_dict({**base.to_dict(), "n_e": n_e, "l": l})
            cell_dir = os.path.join(args.out, f"n_e_{n_e}__l_{l}")
            result, artifacts = _train_once(dataset, cfg, cell_dir)
            index = build_index_from_file(artifacts["database"])
            report = evaluation.evaluate(index, result.state.backbone, result.state.hash_params, dataset)
            row.append(report.map)
            print(f"cell n_e={n_e} l={l}: map={report.map:.4f}")
        rows.append(row)

    grid_path = os.path.join(args.out, "ablate.csv")
    with open(grid_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n_e"] + [f"l={l}" for l in l_values])
        for n_e, row in zip(n_e_values, rows):
            writer.writerow([n_e] + [repr(v) for v in row])
    _write_manifest(args.out, config_hash(base.to_dict()), base.seed, {"grid": grid_path}, started)
    print(f"wrote {grid_path}")
    return 0


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc.parser.format_usage(), file=sys.stderr, end="")
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (FghashError, FileNotFoundError, IsADirectoryError, PermissionError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - exit-code contract
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run(sys.argv[1:]))
