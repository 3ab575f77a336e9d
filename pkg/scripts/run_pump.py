#!/usr/bin/env python3
"""Water-pump status experiment: preprocess the pump CSV pair, train one
model per requested loss, and report validation accuracy, macro F1, and the
top global feature importances.

Dataset: the DrivenData competition "Pump it Up: Data Mining the Water
Table" (https://www.drivendata.org/competitions/7/). The files sit behind a
free registration, so there is no automatic download. After registering,
fetch the two training-set CSVs and place them at:

    <data-dir>/training_set_values.csv   (59,400 rows, 40 columns)
    <data-dir>/training_set_labels.csv   (id, status_group)

Then run, for example:

    python3 scripts/run_pump.py --data-dir data/pump --loss both

With the pump files in place the acceptance tests covering this dataset run
too: ATTENTAB_PUMP_DIR=data/pump pytest tests/test_acceptance.py.
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from attentab.data import encode, fit_schema, join_on_id, load_csv, stratified_split
from attentab.errors import AttentabError
from attentab.tabnet import TabNetClassifier, TabNetConfig, save_model
from attentab.train import TrainConfig, evaluate, fit, resolve_loss_spec


def train_arm(kind: str, ds, split, args, out_dir: Path) -> dict:
    model = TabNetClassifier(TabNetConfig(seed=args.seed), ds.schema)
    cfg = TrainConfig(
        max_epochs=args.max_epochs, loss_kind=kind, focal_gamma=args.gamma,
        alpha_mode="auto", seed=args.seed,
    )
    t0 = time.perf_counter()
    report = fit(
        model, ds, split, cfg,
        log_fn=lambda r: print(
            f"[{kind}] epoch {r.epoch:>3}  val_loss {r.val_loss:.4f}  "
            f"val_acc {r.val_acc:.4f}", flush=True,
        ),
    )
    dt = time.perf_counter() - t0
    counts = np.bincount(
        ds.labels[split.train_indices], minlength=len(ds.schema.labels)
    )
    loss, acc, f1 = evaluate(
        model, ds, split.val_indices, resolve_loss_spec(cfg, counts)
    )
    save_model(str(out_dir / f"pump_{kind}.attb"), model)
    report.save_history(str(out_dir / f"pump_{kind}_history.csv"))

    rep = model.explain(ds.features[split.val_indices])
    top = rep.top(args.top_k)
    return {
        "loss_kind": kind, "val_loss": loss, "val_acc": acc, "val_f1": f1,
        "best_epoch": report.best_epoch, "seconds": round(dt, 1),
        "top_features": top,
    }


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--data-dir", default="data/pump")
    parser.add_argument("--out-dir", default="runs/pump")
    parser.add_argument("--loss", choices=["cce", "focal", "both"], default="both")
    parser.add_argument("--gamma", type=float, default=2.0)
    parser.add_argument("--max-epochs", type=int, default=120)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--val-fraction", type=float, default=0.2)
    parser.add_argument("--top-k", type=int, default=10)
    args = parser.parse_args()

    data_dir = Path(args.data_dir)
    values_path = data_dir / "training_set_values.csv"
    labels_path = data_dir / "training_set_labels.csv"
    if not (values_path.exists() and labels_path.exists()):
        print(
            f"pump CSVs not found under {data_dir}; see the module docstring "
            "for how to obtain them", file=sys.stderr,
        )
        return 2

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        table = join_on_id(load_csv(str(values_path)), load_csv(str(labels_path)))
        schema = fit_schema(table, "status_group")
        ds = encode(table, schema)
        split = stratified_split(ds, args.val_fraction, seed=args.seed)
        print(f"rows {ds.features.shape[0]}, encoded width {ds.features.shape[1]}, "
              f"classes {ds.schema.labels}")

        kinds = ["cce", "focal"] if args.loss == "both" else [args.loss]
        results = [train_arm(kind, ds, split, args, out_dir) for kind in kinds]
    except AttentabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    print(f"\n{'loss':<8}{'val_acc':<10}{'macro_f1':<10}{'best_epoch':<12}seconds")
    for r in results:
        print(
            f"{r['loss_kind']:<8}{r['val_acc']:<10.4f}{r['val_f1']:<10.4f}"
            f"{r['best_epoch']:<12}{r['seconds']}"
        )
    for r in results:
        print(f"\ntop features ({r['loss_kind']}):")
        for rank, (name, share) in enumerate(r["top_features"], start=1):
            print(f"  {rank:<4}{name:<28}{share:.4f}")

    (out_dir / "pump_results.json").write_text(json.dumps(results, indent=2) + "\n")
    print(f"\nresults -> {out_dir / 'pump_results.json'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
