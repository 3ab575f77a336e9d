"""CSV ingestion and the tabular preprocessing pipeline: schema inference,
dropping columns that are mostly missing, most-frequent imputation, label
encoding, class statistics, and stratified train/validation splitting.

A fitted :class:`FeatureSchema` is immutable in practice: encoding the same
table twice yields identical matrices, and the schema serializes to JSON
(and back) without loss.
"""

from __future__ import annotations

import csv
import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .container import DATASET_MAGIC, atomic_write_text, read_container, write_container
from .errors import (
    ConfigError,
    EncodingError,
    IngestionError,
    LabelError,
    SchemaError,
    SplitError,
)

MISSING_TOKENS = frozenset({"", "NaN", "nan"})

KIND_CATEGORICAL = "categorical"
KIND_CONTINUOUS = "continuous"
KIND_TARGET = "target"
KIND_DROP = "drop"


@dataclass
class RawTable:
    """Header plus string rows; missing cells are ``None``."""

    columns: list[str]
    rows: list[list[str | None]]

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> list[str | None]:
        try:
            j = self.columns.index(name)
        except ValueError:
            raise SchemaError(f"column {name!r} not present in table") from None
        return [row[j] for row in self.rows]


def load_csv(path: str) -> RawTable:
    """Read an RFC 4180 CSV with a header row into a RawTable.

    Empty cells and the literals "NaN"/"nan" become missing. Ragged rows
    raise an ingestion error naming the offending line.
    """
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: file is empty, expected a header row") from None
        rows: list[list[str | None]] = []
        for row in reader:
            if len(row) != len(header):
                raise IngestionError(
                    f"{path}: line {reader.line_num} has {len(row)} fields, "
                    f"expected {len(header)}"
                )
            rows.append([None if cell in MISSING_TOKENS else cell for cell in row])
    return RawTable(columns=header, rows=rows)


def join_on_id(values: RawTable, labels: RawTable, key: str = "id") -> RawTable:
    """Inner-join a labels table onto a values table by a shared key column.

    Row order follows the values table; every value row must have exactly one
    matching label row.
    """
    if key not in values.columns or key not in labels.columns:
        raise IngestionError(f"join key {key!r} must appear in both tables")
    label_cols = [c for c in labels.columns if c != key]
    key_j = labels.columns.index(key)
    by_key: dict[str | None, list[str | None]] = {}
    for row in labels.rows:
        k = row[key_j]
        if k in by_key:
            raise IngestionError(f"duplicate {key}={k!r} in labels table")
        by_key[k] = [row[j] for j in range(len(row)) if j != key_j]
    vkey_j = values.columns.index(key)
    joined_rows = []
    for row in values.rows:
        k = row[vkey_j]
        if k not in by_key:
            raise IngestionError(f"{key}={k!r} has no matching label row")
        joined_rows.append(list(row) + by_key[k])
    return RawTable(columns=values.columns + label_cols, rows=joined_rows)


@dataclass
class ColumnSchema:
    name: str
    kind: str
    cardinality: int | None = None
    encoding: dict[str, int] | None = None
    imputation: str | None = None
    missing_fraction: float = 0.0
    drop_reason: str | None = None
    inferred_kind: str | None = None

    def decode(self, code: int) -> str:
        """Inverse of the encoding map (observed values only)."""
        if self.encoding is None:
            raise EncodingError(f"column {self.name!r} has no encoding")
        for value, c in self.encoding.items():
            if c == code:
                return value
        raise EncodingError(f"column {self.name!r}: code {code} not in encoding")


@dataclass
class FeatureSchema:
    """Per-column metadata fitted from a training table."""

    columns: list[ColumnSchema]
    target: str
    labels: list[str]
    drop_threshold: float = 0.5
    encode_order: str = "first-appearance"
    impute_strategy: str = "mode"
    id_columns: list[str] = field(default_factory=lambda: ["id"])
    continuous_distinct_threshold: int = 100

    def feature_columns(self) -> list[ColumnSchema]:
        """Active model inputs, in table order."""
        return [c for c in self.columns if c.kind in (KIND_CATEGORICAL, KIND_CONTINUOUS)]

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "labels": self.labels,
            "drop_threshold": self.drop_threshold,
            "encode_order": self.encode_order,
            "impute_strategy": self.impute_strategy,
            "id_columns": self.id_columns,
            "continuous_distinct_threshold": self.continuous_distinct_threshold,
            "columns": [
                {
                    "name": c.name,
                    "kind": c.kind,
                    "cardinality": c.cardinality,
                    "encoding": c.encoding,
                    "imputation": c.imputation,
                    "missing_fraction": c.missing_fraction,
                    "drop_reason": c.drop_reason,
                    "inferred_kind": c.inferred_kind,
                }
                for c in self.columns
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        return cls(
            columns=[ColumnSchema(**c) for c in d["columns"]],
            target=d["target"],
            labels=list(d["labels"]),
            drop_threshold=d["drop_threshold"],
            encode_order=d["encode_order"],
            impute_strategy=d["impute_strategy"],
            id_columns=list(d["id_columns"]),
            continuous_distinct_threshold=d["continuous_distinct_threshold"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def save(self, path: str) -> None:
        atomic_write_text(path, self.to_json() + "\n")

    @classmethod
    def load(cls, path: str) -> "FeatureSchema":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def hash(self) -> str:
        """Stable digest used to pair models with the datasets they expect."""
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _looks_float_formatted(value: str) -> bool:
    return any(ch in value for ch in ".eE")


def _parses_finite_float(value: str) -> bool:
    try:
        f = float(value)
    except ValueError:
        return False
    return np.isfinite(f)


def _infer_kind(values: list[str | None], distinct_threshold: int) -> str:
    """Continuous iff every present value parses as a finite float and the
    column either uses decimal/scientific notation somewhere or has more
    distinct values than the threshold; categorical otherwise."""
    present = [v for v in values if v is not None]
    if not present:
        return KIND_CATEGORICAL
    if not all(_parses_finite_float(v) for v in present):
        return KIND_CATEGORICAL
    if any(_looks_float_formatted(v) for v in present):
        return KIND_CONTINUOUS
    if len(set(present)) > distinct_threshold:
        return KIND_CONTINUOUS
    return KIND_CATEGORICAL


def _modal_value(present: list[str], order: list[str]) -> str:
    counts = Counter(present)
    best = max(counts.values())
    for v in order:  # deterministic tie-break: first appearance wins
        if counts[v] == best:
            return v
    raise AssertionError("unreachable")


def fit_schema(
    table: RawTable,
    target_column: str,
    drop_threshold: float = 0.5,
    *,
    encode_order: str = "first-appearance",
    impute_strategy: str = "mode",
    id_columns: tuple[str, ...] = ("id",),
    continuous_distinct_threshold: int = 100,
) -> FeatureSchema:
    """Fit per-column metadata from a training table.

    Columns whose missing fraction exceeds ``drop_threshold`` are dropped.
    Remaining columns with missing values get an imputation value: the modal
    value under the ``mode`` strategy, or the median (continuous columns
    only) under ``median``. Categorical encodings are assigned by first
    appearance, or alphabetically when ``encode_order="alphabetical"``.
    """
    if target_column not in table.columns:
        raise SchemaError(f"target column {target_column!r} not found in table")
    if encode_order not in ("first-appearance", "alphabetical"):
        raise ConfigError(f"unknown encode_order {encode_order!r}")
    if impute_strategy not in ("mode", "median"):
        raise ConfigError(f"unknown impute_strategy {impute_strategy!r}")
    if table.n_rows == 0:
        raise SchemaError("cannot fit a schema on an empty table")

    columns: list[ColumnSchema] = []
    for name in table.columns:
        values = table.column(name)
        n_missing = sum(1 for v in values if v is None)
        missing_fraction = n_missing / len(values)
        present = [v for v in values if v is not None]

        if name == target_column:
            if n_missing:
                raise SchemaError(f"target column {name!r} has {n_missing} missing values")
            columns.append(ColumnSchema(name=name, kind=KIND_TARGET))
            continue
        if name in id_columns:
            columns.append(
                ColumnSchema(
                    name=name,
                    kind=KIND_DROP,
                    missing_fraction=missing_fraction,
                    drop_reason="identifier column",
                )
            )
            continue

        kind = _infer_kind(values, continuous_distinct_threshold)
        if not present:
            import logging

            logging.getLogger(__name__).warning(
                "column %r has no observed values; dropping it", name
            )
            columns.append(
                ColumnSchema(
                    name=name,
                    kind=KIND_DROP,
                    missing_fraction=1.0,
                    drop_reason="all values missing",
                    inferred_kind=kind,
                )
            )
            continue
        if missing_fraction > drop_threshold:
            columns.append(
                ColumnSchema(
                    name=name,
                    kind=KIND_DROP,
                    missing_fraction=missing_fraction,
                    drop_reason=(
                        f"missing fraction {missing_fraction:.4f} exceeds "
                        f"threshold {drop_threshold}"
                    ),
                    inferred_kind=kind,
                )
            )
            continue

        first_seen: list[str] = []
        seen = set()
        for v in present:
            if v not in seen:
                seen.add(v)
                first_seen.append(v)

        imputation = None
        if n_missing:
            if impute_strategy == "median" and kind == KIND_CONTINUOUS:
                med = float(np.median([float(v) for v in present]))
                imputation = repr(med)
            else:
                imputation = _modal_value(present, first_seen)

        if kind == KIND_CONTINUOUS:
            columns.append(
                ColumnSchema(
                    name=name,
                    kind=kind,
                    imputation=imputation,
                    missing_fraction=missing_fraction,
                )
            )
        else:
            ordered = sorted(first_seen) if encode_order == "alphabetical" else first_seen
            encoding = {v: i for i, v in enumerate(ordered)}
            columns.append(
                ColumnSchema(
                    name=name,
                    kind=kind,
                    cardinality=len(encoding),
                    encoding=encoding,
                    imputation=imputation,
                    missing_fraction=missing_fraction,
                )
            )

    observed_labels = sorted(set(table.column(target_column)))  # type: ignore[arg-type]
    return FeatureSchema(
        columns=columns,
        target=target_column,
        labels=observed_labels,
        drop_threshold=drop_threshold,
        encode_order=encode_order,
        impute_strategy=impute_strategy,
        id_columns=list(id_columns),
        continuous_distinct_threshold=continuous_distinct_threshold,
    )


@dataclass
class EncodedDataset:
    """Fully numeric dataset: categorical codes and floats, plus labels."""

    features: np.ndarray  # [N, n_active] float64; codes stored as whole floats
    labels: np.ndarray  # [N] int64
    class_counts: np.ndarray  # [C] int64
    schema: FeatureSchema

    @property
    def n_rows(self) -> int:
        return int(self.features.shape[0])

    @property
    def n_classes(self) -> int:
        return len(self.schema.labels)


def encode(table: RawTable, schema: FeatureSchema) -> EncodedDataset:
    """Apply a fitted schema: impute, encode categoricals, map labels.

    Unseen categorical values map to a reserved code equal to the fitted
    cardinality. No missing values survive (asserted by construction).
    """
    active = schema.feature_columns()
    n = table.n_rows
    features = np.empty((n, len(active)), dtype=np.float64)
    for j, col in enumerate(active):
        values = table.column(col.name)
        out = features[:, j]
        if col.kind == KIND_CONTINUOUS:
            for i, v in enumerate(values):
                if v is None:
                    v = col.imputation
                    if v is None:
                        raise EncodingError(
                            f"column {col.name!r}: missing value but no imputation fitted"
                        )
                try:
                    out[i] = float(v)
                except ValueError:
                    raise EncodingError(
                        f"column {col.name!r}: cannot parse {v!r} as a number"
                    ) from None
        else:
            enc = col.encoding or {}
            reserved = col.cardinality
            for i, v in enumerate(values):
                if v is None:
                    v = col.imputation
                    if v is None:
                        raise EncodingError(
                            f"column {col.name!r}: missing value but no imputation fitted"
                        )
                out[i] = enc.get(v, reserved)

    if not np.all(np.isfinite(features)):
        raise EncodingError("non-finite values survived encoding")

    label_to_code = {name: i for i, name in enumerate(schema.labels)}
    labels = np.empty(n, dtype=np.int64)
    for i, v in enumerate(table.column(schema.target)):
        if v is None or v not in label_to_code:
            raise LabelError(f"unknown label {v!r} at row {i}")
        labels[i] = label_to_code[v]
    class_counts = np.bincount(labels, minlength=len(schema.labels)).astype(np.int64)
    return EncodedDataset(
        features=features, labels=labels, class_counts=class_counts, schema=schema
    )


@dataclass
class Split:
    """Disjoint train/validation index sets covering the dataset."""

    train_indices: np.ndarray
    val_indices: np.ndarray


def stratified_split(dataset: EncodedDataset, val_fraction: float = 0.2, seed: int = 42) -> Split:
    """Per-class shuffled partition; deterministic under the seed."""
    if not 0 < val_fraction < 1:
        raise ConfigError(f"val_fraction must be in (0, 1), got {val_fraction}")
    rng = np.random.default_rng(seed)
    train_parts, val_parts = [], []
    for c in range(dataset.n_classes):
        members = np.flatnonzero(dataset.labels == c)
        if members.size < 2:
            raise SplitError(
                f"class {dataset.schema.labels[c]!r} has {members.size} member(s); "
                "need at least 2 to split"
            )
        perm = rng.permutation(members)
        n_val = int(members.size * val_fraction + 0.5)
        n_val = min(max(n_val, 1), members.size - 1)
        val_parts.append(perm[:n_val])
        train_parts.append(perm[n_val:])
    return Split(
        train_indices=np.sort(np.concatenate(train_parts)),
        val_indices=np.sort(np.concatenate(val_parts)),
    )


def inspect(dataset: EncodedDataset) -> str:
    """Human-readable dataset summary: sizes, per-column metadata, and the
    class distribution."""
    schema = dataset.schema
    feature_cols = [c for c in schema.columns if c.kind != KIND_TARGET]
    kinds = Counter(c.inferred_kind or c.kind for c in feature_cols if c.drop_reason != "identifier column")
    active = schema.feature_columns()
    dropped = [c for c in feature_cols if c.kind == KIND_DROP]
    rule_dropped = [c for c in dropped if c.drop_reason != "identifier column"]
    with_missing = [c for c in feature_cols if c.missing_fraction > 0]

    lines = [
        f"rows: {dataset.n_rows}",
        f"feature columns: {len(feature_cols)} total, {len(active)} active, "
        f"{len(rule_dropped)} dropped by missing-data rule, "
        f"{len(dropped) - len(rule_dropped)} excluded identifiers",
        f"inferred kinds (before drops): {kinds.get(KIND_CATEGORICAL, 0)} categorical, "
        f"{kinds.get(KIND_CONTINUOUS, 0)} continuous",
        f"columns containing missing data: {len(with_missing)}",
        "",
        f"{'column':<28}{'kind':<14}{'cardinality':<13}{'missing':<10}note",
    ]
    for c in schema.columns:
        if c.kind == KIND_TARGET:
            continue
        card = "" if c.cardinality is None else str(c.cardinality)
        note = ""
        if c.drop_reason:
            note = f"dropped: {c.drop_reason}"
        elif c.imputation is not None:
            note = f"imputed with {c.imputation!r}"
        lines.append(
            f"{c.name:<28}{c.kind:<14}{card:<13}{c.missing_fraction:<10.2%}{note}"
        )
    lines.append("")
    lines.append("label distribution:")
    total = dataset.n_rows
    for name, count in zip(schema.labels, dataset.class_counts):
        lines.append(f"  {name:<32}{count:>8}  {count / total:.2%}")
    return "\n".join(lines)


def save_dataset(path: str, dataset: EncodedDataset) -> None:
    header = {
        "format": "attentab-dataset",
        "version": 1,
        "schema": dataset.schema.to_dict(),
        "schema_hash": dataset.schema.hash(),
        "n_rows": dataset.n_rows,
        "n_features": int(dataset.features.shape[1]),
    }
    arrays = [
        ("features", dataset.features),
        ("labels", dataset.labels.astype(np.float64)),
        ("class_counts", dataset.class_counts.astype(np.float64)),
    ]
    write_container(path, DATASET_MAGIC, header, arrays)


def load_dataset(path: str) -> EncodedDataset:
    header, arrays = read_container(path, DATASET_MAGIC)
    schema = FeatureSchema.from_dict(header["schema"])
    return EncodedDataset(
        features=arrays["features"],
        labels=arrays["labels"].astype(np.int64),
        class_counts=arrays["class_counts"].astype(np.int64),
        schema=schema,
    )
