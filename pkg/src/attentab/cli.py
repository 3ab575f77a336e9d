"""Command-line surface: preprocess, train, evaluate, explain, inspect.

One JSON config file can drive a whole run; every flag overrides its config
key (flags > file > defaults). Exit codes: 0 success, 2 usage/config/data
errors, 3 numeric failure during training.

This module must not import numpy at module scope: ATTENTAB_THREADS has to
land in the BLAS thread-count environment variables before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

from .errors import AttentabError, ConfigError, NumericsError

_THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)

DATA_KEYS = {
    "values_csv",
    "labels_csv",
    "target",
    "id_column",
    "drop_threshold",
    "encode_order",
    "impute_strategy",
    "continuous_distinct_threshold",
}
PATH_KEYS = {"schema", "dataset", "model", "history", "metrics"}

DEFAULT_PATHS = {
    "schema": "schema.json",
    "dataset": "dataset.attd",
    "model": "model.attb",
    "history": "history.csv",
    "metrics": "metrics.json",
}

SECTIONS = ("data", "model", "train", "paths")


def _apply_thread_env() -> None:
    raw = os.environ.get("ATTENTAB_THREADS")
    if raw is None:
        return
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"ATTENTAB_THREADS must be a positive integer, got {raw!r}") from None
    for var in _THREAD_ENV_VARS:
        os.environ[var] = str(n)


def load_config_file(path: str | None) -> dict:
    """Read and structurally validate the run config; unknown keys are
    rejected by name so typos cannot silently fall back to defaults."""
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a JSON object")

    from .tabnet import TabNetConfig
    from .train import TrainConfig
    import dataclasses

    allowed = {
        "data": DATA_KEYS,
        "model": {f.name for f in dataclasses.fields(TabNetConfig)},
        "train": {f.name for f in dataclasses.fields(TrainConfig)},
        "paths": PATH_KEYS,
    }
    for section, body in raw.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config key {section!r}")
        if not isinstance(body, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        for key in body:
            if key not in allowed[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
    return raw


def _merged(defaults: dict, file_section: dict, overrides: dict) -> dict:
    out = dict(defaults)
    out.update(file_section)
    out.update({k: v for k, v in overrides.items() if v is not None})
    return out


def _build_model_config(cfg: dict, args):
    from .tabnet import TabNetConfig

    overrides = {
        "n_d": getattr(args, "n_d", None),
        "n_a": getattr(args, "n_a", None),
        "n_steps": getattr(args, "n_steps", None),
        "gamma_relax": getattr(args, "gamma_relax", None),
        "lambda_sparse": getattr(args, "lambda_sparse", None),
        "embed_dims": getattr(args, "embed_dim", None),
        "virtual_batch": getattr(args, "virtual_batch", None),
        "seed": getattr(args, "seed", None),
    }
    model_cfg = TabNetConfig(**_merged(asdict(TabNetConfig()), cfg.get("model", {}), overrides))
    model_cfg.validate()
    return model_cfg


def _build_train_config(cfg: dict, args):
    from .train import TrainConfig

    overrides = {
        "loss_kind": getattr(args, "loss", None),
        "focal_gamma": getattr(args, "gamma", None),
        "alpha_mode": getattr(args, "alpha", None),
        "max_epochs": getattr(args, "max_epochs", None),
        "batch_size": getattr(args, "batch_size", None),
        "learning_rate": getattr(args, "lr", None),
        "patience": getattr(args, "patience", None),
        "min_delta": getattr(args, "min_delta", None),
        "val_fraction": getattr(args, "val_fraction", None),
        "f1_average": getattr(args, "f1_average", None),
        "seed": getattr(args, "seed", None),
    }
    train_cfg = TrainConfig(**_merged(asdict(TrainConfig()), cfg.get("train", {}), overrides))
    train_cfg.validate()
    return train_cfg


def _path(cfg: dict, args, flag: str, key: str) -> str:
    v = getattr(args, flag, None)
    if v is not None:
        return v
    return cfg.get("paths", {}).get(key, DEFAULT_PATHS[key])


# ---------------------------------------------------------------- commands


def cmd_preprocess(args, cfg: dict) -> int:
    from . import data as data_mod

    section = cfg.get("data", {})
    values_path = args.values or section.get("values_csv")
    labels_path = args.labels or section.get("labels_csv")
    if not values_path or not labels_path:
        raise ConfigError("preprocess needs --values and --labels (or data.values_csv/labels_csv)")
    id_column = args.id_column or section.get("id_column", "id")

    values = data_mod.load_csv(values_path)
    labels = data_mod.load_csv(labels_path)
    target = args.target or section.get("target")
    if target is None:
        candidates = [c for c in labels.columns if c != id_column]
        if len(candidates) != 1:
            raise ConfigError(
                f"cannot infer target from labels columns {labels.columns}; pass --target"
            )
        target = candidates[0]

    table = data_mod.join_on_id(values, labels, key=id_column)
    schema = data_mod.fit_schema(
        table,
        target,
        args.drop_threshold if args.drop_threshold is not None else section.get("drop_threshold", 0.5),
        encode_order=args.encode_order or section.get("encode_order", "first-appearance"),
        impute_strategy=args.impute_strategy or section.get("impute_strategy", "mode"),
        id_columns=(id_column,),
        continuous_distinct_threshold=(
            args.distinct_threshold
            if args.distinct_threshold is not None
            else section.get("continuous_distinct_threshold", 100)
        ),
    )
    dataset = data_mod.encode(table, schema)

    out_schema = _path(cfg, args, "out_schema", "schema")
    out_dataset = _path(cfg, args, "out_dataset", "dataset")
    schema.save(out_schema)
    data_mod.save_dataset(out_dataset, dataset)
    print(data_mod.inspect(dataset))
    print(f"\nschema -> {out_schema}\ndataset -> {out_dataset}")
    return 0


def _log_record(record) -> None:
    print(
        f"epoch {record.epoch:>4}  train_loss {record.train_loss:.6f}  "
        f"val_loss {record.val_loss:.6f}  val_acc {record.val_acc:.4f}  "
        f"val_f1 {record.val_f1:.4f}  lr {record.lr:.6g}"
    )


def cmd_train(args, cfg: dict) -> int:
    from . import data as data_mod
    from . import tabnet as tabnet_mod
    from . import train as train_mod
    from .container import atomic_write_text

    dataset = data_mod.load_dataset(_path(cfg, args, "dataset", "dataset"))
    model_cfg = _build_model_config(cfg, args)
    train_cfg = _build_train_config(cfg, args)

    split = data_mod.stratified_split(dataset, train_cfg.val_fraction, train_cfg.seed)
    model = tabnet_mod.TabNetClassifier(model_cfg, dataset.schema)
    report = train_mod.fit(model, dataset, split, train_cfg, log_fn=_log_record)

    out_model = _path(cfg, args, "out_model", "model")
    out_history = _path(cfg, args, "out_history", "history")
    out_metrics = _path(cfg, args, "out_metrics", "metrics")
    tabnet_mod.save_model(out_model, model)
    report.save_history(out_history)
    metrics = report.metrics_dict()
    atomic_write_text(out_metrics, json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    print(json.dumps(metrics, sort_keys=True))
    print(f"model -> {out_model}\nhistory -> {out_history}\nmetrics -> {out_metrics}")
    return 0


def _load_pair(args, cfg: dict):
    from . import data as data_mod
    from . import tabnet as tabnet_mod

    model = tabnet_mod.load_model(_path(cfg, args, "model", "model"))
    dataset = data_mod.load_dataset(_path(cfg, args, "dataset", "dataset"))
    if model.schema.hash() != dataset.schema.hash():
        raise ConfigError(
            "model and dataset were built from different schemas "
            f"({model.schema.hash()[:12]} vs {dataset.schema.hash()[:12]})"
        )
    return model, dataset


def _split_indices(model, dataset, split_name: str):
    import numpy as np

    from . import data as data_mod

    if split_name == "all":
        return np.arange(dataset.n_rows)
    train_cfg = (model.train_info or {}).get("train_config")
    if not train_cfg:
        raise ConfigError("model carries no training info; only --split all is available")
    split = data_mod.stratified_split(dataset, train_cfg["val_fraction"], train_cfg["seed"])
    return split.train_indices if split_name == "train" else split.val_indices


def cmd_evaluate(args, cfg: dict) -> int:
    from . import train as train_mod

    model, dataset = _load_pair(args, cfg)
    indices = _split_indices(model, dataset, args.split)
    info = model.train_info or {}
    loss_spec = info.get("loss") or {"kind": "cce"}
    f1_average = info.get("train_config", {}).get("f1_average", "macro")
    loss, acc, f1 = train_mod.evaluate(model, dataset, indices, loss_spec, f1_average)
    print(
        json.dumps(
            {
                "split": args.split,
                "n_rows": int(indices.size),
                "loss": loss,
                "accuracy": acc,
                "f1": f1,
            },
            sort_keys=True,
        )
    )
    return 0


def cmd_explain(args, cfg: dict) -> int:
    model, dataset = _load_pair(args, cfg)
    report = model.explain(dataset.features)
    top = report.top(args.top_k)
    width = max([len("feature")] + [len(name) for name, _ in top])
    print(f"{'rank':<6}{'feature':<{width + 2}}importance")
    for rank, (name, share) in enumerate(top, start=1):
        print(f"{rank:<6}{name:<{width + 2}}{share:.6f}")
    if args.instances:
        print()
        for b in range(min(args.instances, report.instance_importance.shape[0])):
            row = report.instance_importance[b]
            order = sorted(
                range(len(report.feature_names)),
                key=lambda j: (-row[j], report.feature_names[j]),
            )[:3]
            parts = ", ".join(f"{report.feature_names[j]} {row[j]:.4f}" for j in order)
            print(f"instance {b}: {parts}")
    return 0


def cmd_inspect(args, cfg: dict) -> int:
    from . import data as data_mod

    dataset = data_mod.load_dataset(_path(cfg, args, "dataset", "dataset"))
    print(data_mod.inspect(dataset))
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attentab",
        description="Attentive tabular learning: sparsemax-masked decision steps over embedded features.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    pre = sub.add_parser("preprocess", help="fit a schema and encode CSVs into a dataset container")
    pre.add_argument("--config")
    pre.add_argument("--values", help="values CSV path")
    pre.add_argument("--labels", help="labels CSV path")
    pre.add_argument("--target", help="label column name (inferred from labels CSV when unambiguous)")
    pre.add_argument("--id-column", dest="id_column")
    pre.add_argument("--drop-threshold", dest="drop_threshold", type=float)
    pre.add_argument("--encode-order", dest="encode_order", choices=["first-appearance", "alphabetical"])
    pre.add_argument("--impute-strategy", dest="impute_strategy", choices=["mode", "median"])
    pre.add_argument("--distinct-threshold", dest="distinct_threshold", type=int)
    pre.add_argument("--out-schema", dest="out_schema")
    pre.add_argument("--out-dataset", dest="out_dataset")

    tr = sub.add_parser("train", help="train a model on an encoded dataset")
    tr.add_argument("--config")
    tr.add_argument("--dataset")
    tr.add_argument("--out-model", dest="out_model")
    tr.add_argument("--out-history", dest="out_history")
    tr.add_argument("--out-metrics", dest="out_metrics")
    tr.add_argument("--loss", choices=["cce", "balanced", "focal"])
    tr.add_argument("--gamma", type=float, help="focal focusing exponent")
    tr.add_argument("--alpha", choices=["auto", "uniform"], help="class-weight mode")
    tr.add_argument("--max-epochs", dest="max_epochs", type=int)
    tr.add_argument("--batch-size", dest="batch_size", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--patience", type=int)
    tr.add_argument("--min-delta", dest="min_delta", type=float)
    tr.add_argument("--seed", type=int, help="sets both the model and training seeds")
    tr.add_argument("--n-steps", dest="n_steps", type=int)
    tr.add_argument("--n-d", dest="n_d", type=int)
    tr.add_argument("--n-a", dest="n_a", type=int)
    tr.add_argument("--gamma-relax", dest="gamma_relax", type=float)
    tr.add_argument("--lambda-sparse", dest="lambda_sparse", type=float)
    tr.add_argument("--embed-dim", dest="embed_dim", type=int)
    tr.add_argument("--virtual-batch", dest="virtual_batch", type=int)
    tr.add_argument("--val-fraction", dest="val_fraction", type=float)
    tr.add_argument("--f1-average", dest="f1_average", choices=["macro", "weighted"])

    ev = sub.add_parser("evaluate", help="print loss/accuracy/F1 of a model on a dataset split")
    ev.add_argument("--config")
    ev.add_argument("--model")
    ev.add_argument("--dataset")
    ev.add_argument("--split", choices=["train", "val", "all"], default="val")

    ex = sub.add_parser("explain", help="print ranked global feature importances")
    ex.add_argument("--config")
    ex.add_argument("--model")
    ex.add_argument("--dataset")
    ex.add_argument("--top-k", dest="top_k", type=int, default=5)
    ex.add_argument("--instances", type=int, default=0, help="also print top features for the first N rows")

    ins = sub.add_parser("inspect", help="print the summary of an encoded dataset")
    ins.add_argument("--config")
    ins.add_argument("--dataset")

    return parser


_HANDLERS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "explain": cmd_explain,
    "inspect": cmd_inspect,
}


def main(argv: list[str] | None = None) -> int:
    try:
        _apply_thread_env()
        args = build_parser().parse_args(argv)
        cfg = load_config_file(args.config)
        return _HANDLERS[args.command](args, cfg)
    except NumericsError as exc:
        where = f" (epoch {exc.epoch})" if exc.epoch is not None else ""
        print(f"error: {exc}{where}", file=sys.stderr)
        return 3
    except (AttentabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
