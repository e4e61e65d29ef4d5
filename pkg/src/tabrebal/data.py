"""Dataset ingestion, variable metadata, encoding, and stratified folds.

Raw CSVs are encoded into a dense [0, 1] matrix: categoricals one-hot,
binaries as a single 0/1 column, numericals min-max scaled. A metadata
sidecar declares every variable's kind up front, so binary-vs-categorical
intent is never guessed from the data.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DecodeError,
    DegenerateLabels,
    InsufficientClassRows,
    SchemaError,
    ShapeError,
)

KINDS = ("categorical", "binary", "numerical")


@dataclass(frozen=True)
class VariableMeta:
    """Declared type and encoding parameters of one raw column.

    categories: ordered category labels (categorical only; fixes one-hot order).
    values: the two raw values mapped to 0/1 (binary only).
    scale_min/scale_max: original numeric range (numerical only); a constant
    column keeps scale_min == scale_max and encodes to 0 everywhere.
    """

    name: str
    kind: str
    categories: tuple[str, ...] = ()
    values: tuple[str, str] | None = None
    scale_min: float = 0.0
    scale_max: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"variable {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical" and len(self.categories) < 3:
            raise SchemaError(
                f"variable {self.name!r}: categorical needs >= 3 categories "
                f"(got {len(self.categories)}); declare 2-valued variables as binary"
            )
        if self.kind == "numerical" and self.scale_max < self.scale_min:
            raise SchemaError(f"variable {self.name!r}: scale_max < scale_min")

    @property
    def width(self) -> int:
        return len(self.categories) if self.kind == "categorical" else 1

    def to_obj(self) -> dict:
        obj: dict = {"name": self.name, "kind": self.kind, "width": self.width}
        if self.kind == "categorical":
            obj["categories"] = list(self.categories)
        elif self.kind == "binary":
            obj["values"] = list(self.values) if self.values else None
        else:
            obj["scale_min"] = self.scale_min
            obj["scale_max"] = self.scale_max
        return obj

    @classmethod
    def from_obj(cls, obj: dict) -> "VariableMeta":
        kind = obj["kind"]
        return cls(
            name=obj["name"],
            kind=kind,
            categories=tuple(obj.get("categories") or ()),
            values=tuple(obj["values"]) if obj.get("values") else None,
            scale_min=float(obj.get("scale_min", 0.0)),
            scale_max=float(obj.get("scale_max", 1.0)),
        )


def total_width(meta: list[VariableMeta]) -> int:
    return sum(v.width for v in meta)


def variable_slices(meta: list[VariableMeta]) -> list[slice]:
    """Column slice of each variable's block in the encoded matrix."""
    out, start = [], 0
    for v in meta:
        out.append(slice(start, start + v.width))
        start += v.width
    return out


def encoded_column_names(meta: list[VariableMeta]) -> list[str]:
    names: list[str] = []
    for v in meta:
        if v.kind == "categorical":
            names.extend(f"{v.name}={c}" for c in v.categories)
        else:
            names.append(v.name)
    return names


@dataclass
class Dataset:
    """Encoded feature matrix in [0, 1] plus binary labels (1 = minority)."""

    name: str
    features: np.ndarray
    labels: np.ndarray
    meta: list[VariableMeta]
    label_name: str = "label"
    positive_class: str = "1"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ShapeError(f"features must be 2-D, got {self.features.shape}")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ShapeError("features and labels disagree on row count")
        if self.features.shape[1] != total_width(self.meta):
            raise SchemaError(
                f"metadata widths sum to {total_width(self.meta)} but features have "
                f"{self.features.shape[1]} columns"
            )

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def width(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> tuple[int, int]:
        """(negative, positive) row counts."""
        pos = int(np.sum(self.labels == 1))
        return self.n_rows - pos, pos

    def subset(self, indices: np.ndarray, name: str | None = None) -> "Dataset":
        return Dataset(
            name=name or self.name,
            features=self.features[indices],
            labels=self.labels[indices],
            meta=self.meta,
            label_name=self.label_name,
            positive_class=self.positive_class,
        )


@dataclass
class FoldSplit:
    """Stratified fold assignment plus per-fold generator-validation subsets."""

    fold_count: int
    assignments: np.ndarray
    validation_fraction: float
    validation_sets: tuple[np.ndarray, ...] = field(default=())

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def validation_indices(self, fold: int) -> np.ndarray:
        return self.validation_sets[fold]

    def train_main_indices(self, fold: int) -> np.ndarray:
        """Training part minus the generator-validation subset."""
        val = set(self.validation_sets[fold].tolist())
        train = self.train_indices(fold)
        return np.array([i for i in train if i not in val], dtype=np.int64)


# -- metadata / CSV ingestion ----------------------------------------------------


def read_metadata(source: str | Path | dict) -> dict:
    if isinstance(source, dict):
        obj = source
    else:
        with open(source, encoding="utf-8") as fh:
            obj = json.load(fh)
    for key in ("label", "variables"):
        if key not in obj:
            raise SchemaError(f"metadata is missing required key {key!r}")
    if "positive_class" not in obj:
        raise SchemaError("metadata is missing required key 'positive_class'")
    return obj


def _read_csv(source: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(source, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{source}: CSV is empty") from None
        rows = []
        for i, row in enumerate(reader):
            if len(row) != len(header):
                raise SchemaError(f"{source}: row {i + 2} has {len(row)} cells, header has {len(header)}")
            rows.append(row)
    return header, rows


def load_raw(csv_source: str | Path, metadata_source: str | Path | dict,
             name: str | None = None) -> Dataset:
    """Read a raw CSV plus metadata JSON and return the encoded Dataset.

    Missing values and unknown categories raise DecodeError naming the
    offending row/column; metadata/CSV column mismatches raise SchemaError.
    """
    meta_obj = read_metadata(metadata_source)
    header, rows = _read_csv(csv_source)
    label_col = str(meta_obj["label"])
    declared = [str(v["name"]) for v in meta_obj["variables"]]

    expected = set(declared) | {label_col}
    actual = set(header)
    if expected != actual:
        missing = sorted(expected - actual)
        extra = sorted(actual - expected)
        raise SchemaError(
            f"metadata/CSV column mismatch: missing from CSV {missing}, undeclared {extra}"
        )
    if len(set(header)) != len(header):
        raise SchemaError("CSV header contains duplicate column names")

    col_index = {c: i for i, c in enumerate(header)}
    n = len(rows)
    columns = {c: [row[col_index[c]] for row in rows] for c in header}

    def cell_error(column: str, row_idx: int, message: str) -> DecodeError:
        return DecodeError(f"column {column!r}, row {row_idx + 2}: {message}")

    variables: list[VariableMeta] = []
    blocks: list[np.ndarray] = []
    for var in meta_obj["variables"]:
        vname, kind = str(var["name"]), str(var["kind"])
        raw = columns[vname]
        for i, cell in enumerate(raw):
            if cell == "":
                raise cell_error(vname, i, "missing value (imputation is out of scope)")
        if kind == "categorical":
            cats = tuple(str(c) for c in var.get("categories") or sorted(set(raw)))
            vm = VariableMeta(name=vname, kind="categorical", categories=cats)
            index = {c: j for j, c in enumerate(cats)}
            block = np.zeros((n, len(cats)))
            for i, cell in enumerate(raw):
                if cell not in index:
                    raise cell_error(vname, i, f"unknown category {cell!r}")
                block[i, index[cell]] = 1.0
        elif kind == "binary":
            values = var.get("values")
            observed = sorted(set(raw))
            if values is None:
                values = observed
            values = [str(v) for v in values]
            if len(values) != 2:
                raise SchemaError(
                    f"variable {vname!r}: binary needs exactly 2 values, got {values}"
                )
            vm = VariableMeta(name=vname, kind="binary", values=(values[0], values[1]))
            mapping = {values[0]: 0.0, values[1]: 1.0}
            block = np.zeros((n, 1))
            for i, cell in enumerate(raw):
                if cell not in mapping:
                    raise cell_error(vname, i, f"unknown binary value {cell!r}")
                block[i, 0] = mapping[cell]
        elif kind == "numerical":
            vals = np.empty(n)
            for i, cell in enumerate(raw):
                try:
                    vals[i] = float(cell)
                except ValueError:
                    raise cell_error(vname, i, f"not a number: {cell!r}") from None
                if not np.isfinite(vals[i]):
                    raise cell_error(vname, i, f"non-finite value: {cell!r}")
            lo, hi = float(vals.min()), float(vals.max())
            vm = VariableMeta(name=vname, kind="numerical", scale_min=lo, scale_max=hi)
            block = (vals - lo).reshape(-1, 1)
            if hi > lo:
                block = block / (hi - lo)
            else:
                block = np.zeros((n, 1))  # constant column maps to 0
        else:
            raise SchemaError(f"variable {vname!r}: unknown kind {kind!r}")
        variables.append(vm)
        blocks.append(block)

    positive = str(meta_obj["positive_class"])
    labels = np.array([1 if cell == positive else 0 for cell in columns[label_col]], dtype=np.int64)

    features = np.concatenate(blocks, axis=1) if blocks else np.zeros((n, 0))
    return Dataset(
        name=name or Path(str(csv_source)).stem,
        features=features,
        labels=labels,
        meta=variables,
        label_name=label_col,
        positive_class=positive,
    )


def decode_rows(rows: np.ndarray, meta: list[VariableMeta]) -> list[dict[str, object]]:
    """Map encoded rows back to raw values (inverse of the encoding)."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if rows.shape[1] != total_width(meta):
        raise ShapeError(f"row width {rows.shape[1]} != metadata width {total_width(meta)}")
    out = []
    for row in rows:
        record: dict[str, object] = {}
        start = 0
        for v in meta:
            block = row[start:start + v.width]
            if v.kind == "categorical":
                record[v.name] = v.categories[int(np.argmax(block))]
            elif v.kind == "binary":
                pair = v.values or ("0", "1")
                record[v.name] = pair[1] if block[0] >= 0.5 else pair[0]
            else:
                record[v.name] = v.scale_min + float(block[0]) * (v.scale_max - v.scale_min)
            start += v.width
        out.append(record)
    return out


# -- core operations --------------------------------------------------------------


def compute_ir(labels: np.ndarray) -> float:
    """Imbalance ratio |minority| / |majority|, in (0, 1]."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise DegenerateLabels("labels are empty")
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2:
        raise DegenerateLabels(f"labels contain a single class ({classes[0]!r})")
    return float(counts.min() / counts.max())


def make_folds(dataset: Dataset, fold_count: int, validation_fraction: float = 0.1,
               seed: int = 0) -> FoldSplit:
    """Stratified fold assignment, deterministic in ``seed``.

    Within each fold's training part a stratified ``validation_fraction``
    subset is reserved for generative-model monitoring.
    """
    if fold_count < 2:
        raise InsufficientClassRows(f"fold_count must be >= 2, got {fold_count}")
    labels = dataset.labels
    assignments = np.empty(dataset.n_rows, dtype=np.int64)
    rng = np.random.default_rng([int(seed), 0x5F0])
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        if len(idx) < fold_count:
            raise InsufficientClassRows(
                f"class {cls} has {len(idx)} rows, fewer than fold_count={fold_count}"
            )
        perm = rng.permutation(idx)
        assignments[perm] = np.arange(len(perm)) % fold_count

    validation_sets = []
    for fold in range(fold_count):
        val_rng = np.random.default_rng([int(seed), 0xA1, fold])
        train = np.flatnonzero(assignments != fold)
        chosen: list[int] = []
        for cls in (0, 1):
            cls_idx = train[labels[train] == cls]
            k = int(round(validation_fraction * len(cls_idx)))
            if k > 0:
                chosen.extend(val_rng.permutation(cls_idx)[:k].tolist())
        validation_sets.append(np.array(sorted(chosen), dtype=np.int64))

    return FoldSplit(
        fold_count=fold_count,
        assignments=assignments,
        validation_fraction=validation_fraction,
        validation_sets=tuple(validation_sets),
    )


def discretize(rows: np.ndarray, meta: list[VariableMeta]) -> np.ndarray:
    """Map soft generator outputs to valid encodings.

    Categorical blocks become one-hot at their argmax (lowest index wins
    ties), binaries round at 0.5, numericals clamp to [0, 1]. Idempotent.
    """
    arr = np.atleast_2d(np.asarray(rows, dtype=np.float64)).copy()
    if arr.shape[1] != total_width(meta):
        raise ShapeError(f"row width {arr.shape[1]} != metadata width {total_width(meta)}")
    for v, sl in zip(meta, variable_slices(meta)):
        block = arr[:, sl]
        if v.kind == "categorical":
            hot = np.zeros_like(block)
            hot[np.arange(len(block)), np.argmax(block, axis=1)] = 1.0
            arr[:, sl] = hot
        elif v.kind == "binary":
            arr[:, sl] = (block >= 0.5).astype(np.float64)
        else:
            arr[:, sl] = np.clip(block, 0.0, 1.0)
    if np.asarray(rows).ndim == 1:
        return arr[0]
    return arr


def validate_rows(rows: np.ndarray, meta: list[VariableMeta], atol: float = 1e-9) -> bool:
    """Check the Dataset encoding invariants on a batch of rows."""
    arr = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if arr.shape[1] != total_width(meta):
        return False
    for v, sl in zip(meta, variable_slices(meta)):
        block = arr[:, sl]
        if v.kind == "categorical":
            if not np.all(np.isin(block, (0.0, 1.0))):
                return False
            if not np.allclose(block.sum(axis=1), 1.0, atol=atol):
                return False
        elif v.kind == "binary":
            if not np.all(np.isin(block, (0.0, 1.0))):
                return False
        else:
            if block.min() < -atol or block.max() > 1.0 + atol:
                return False
    return True


# -- encoded persistence -----------------------------------------------------------


def augmented_metadata(dataset: Dataset) -> dict:
    return {
        "label": dataset.label_name,
        "positive_class": dataset.positive_class,
        "name": dataset.name,
        "variables": [v.to_obj() for v in dataset.meta],
    }


def save_encoded(dataset: Dataset, out_dir: str | Path) -> tuple[Path, Path]:
    """Persist encoded CSV (floats + label column) and augmented metadata."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "encoded.csv"
    meta_path = out / "metadata.json"
    names = encoded_column_names(dataset.meta) + [dataset.label_name]
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for row, label in zip(dataset.features, dataset.labels):
            writer.writerow([format(x, ".17g") for x in row] + [int(label)])
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(augmented_metadata(dataset), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, meta_path


def load_encoded(csv_source: str | Path, metadata_source: str | Path | dict) -> Dataset:
    meta_obj = read_metadata(metadata_source)
    variables = [VariableMeta.from_obj(v) for v in meta_obj["variables"]]
    header, rows = _read_csv(csv_source)
    label_col = str(meta_obj["label"])
    expected = encoded_column_names(variables) + [label_col]
    if header != expected:
        raise SchemaError(
            f"encoded CSV header does not match metadata (expected {expected[:3]}..., got {header[:3]}...)"
        )
    data = np.array([[float(c) for c in row] for row in rows], dtype=np.float64)
    if data.size == 0:
        data = data.reshape(0, len(expected))
    return Dataset(
        name=str(meta_obj.get("name", Path(str(csv_source)).stem)),
        features=data[:, :-1],
        labels=data[:, -1].astype(np.int64),
        meta=variables,
        label_name=label_col,
        positive_class=str(meta_obj["positive_class"]),
    )


def with_label_variable(meta: list[VariableMeta], name: str = "__label__") -> list[VariableMeta]:
    """Metadata with the class label appended as one extra binary variable."""
    return list(meta) + [VariableMeta(name=name, kind="binary", values=("0", "1"))]
