"""Tabular datasets: column schemas, CSV loading, editing, and encoding."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    EmptyDataset,
    IndexOutOfRange,
    InvalidConfig,
    MissingHeader,
    SchemaMismatch,
)

log = logging.getLogger(__name__)

NUMERIC = "numeric"
CATEGORICAL = "categorical"


@dataclass
class ColumnSchema:
    """One column of a tabular dataset.

    ``mutable_for_counterfactuals`` marks whether counterfactual search may
    change the column; ``protected`` marks sensitive attributes, which are
    additionally held fixed during counterfactual search.
    """

    name: str
    kind: str
    levels: tuple[str, ...] = ()
    mutable_for_counterfactuals: bool = True
    protected: bool = False

    def __post_init__(self) -> None:
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise InvalidConfig(f"column '{self.name}': unknown kind '{self.kind}'")
        self.levels = tuple(str(v) for v in self.levels)
        if self.kind == CATEGORICAL:
            if not self.levels:
                raise InvalidConfig(f"categorical column '{self.name}' needs at least one level")
            if len(set(self.levels)) != len(self.levels):
                raise InvalidConfig(f"categorical column '{self.name}' has duplicate levels")
        elif self.levels:
            raise InvalidConfig(f"numeric column '{self.name}' must not declare levels")

    def parse_cell(self, raw: str, row: int | None = None) -> Any:
        """Parse a CSV cell, raising :class:`SchemaMismatch` with position info."""
        raw = raw.strip()
        if self.kind == NUMERIC:
            try:
                return float(raw)
            except ValueError:
                raise SchemaMismatch(
                    f"row {row}: cell '{raw}' in column '{self.name}' is not numeric",
                    row=row, column=self.name,
                ) from None
        if raw not in self.levels:
            raise SchemaMismatch(
                f"row {row}: value '{raw}' not in levels of column '{self.name}'",
                row=row, column=self.name,
            )
        return raw

    def validate_value(self, value: Any, row: int | None = None) -> Any:
        if self.kind == NUMERIC:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise SchemaMismatch(
                    f"column '{self.name}' expects a number, got {value!r}",
                    row=row, column=self.name,
                )
            return float(value)
        value = str(value)
        if value not in self.levels:
            raise SchemaMismatch(
                f"value '{value}' not in levels of column '{self.name}'",
                row=row, column=self.name,
            )
        return value


class Dataset:
    """Validated tabular data with a designated categorical target column."""

    def __init__(self, schema: Sequence[ColumnSchema], rows: Iterable[Sequence[Any]], target: str):
        self.schema = list(schema)
        names = [c.name for c in self.schema]
        if len(set(names)) != len(names):
            raise InvalidConfig("duplicate column names in schema")
        if target not in names:
            raise InvalidConfig(f"target column '{target}' not in schema")
        self.target = target
        if self.target_column.kind != CATEGORICAL:
            raise InvalidConfig("target column must be categorical")
        self.rows: list[tuple] = []
        for i, row in enumerate(rows):
            self.rows.append(self.validate_row(row, row_index=i))

    @property
    def target_column(self) -> ColumnSchema:
        return next(c for c in self.schema if c.name == self.target)

    @property
    def feature_columns(self) -> list[ColumnSchema]:
        return [c for c in self.schema if c.name != self.target]

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.schema]

    def column(self, name: str) -> ColumnSchema:
        for c in self.schema:
            if c.name == name:
                return c
        raise SchemaMismatch(f"unknown column '{name}'", column=name)

    def validate_row(self, values: Sequence[Any] | Mapping[str, Any], row_index: int | None = None) -> tuple:
        if isinstance(values, Mapping):
            missing = [c.name for c in self.schema if c.name not in values]
            if missing:
                raise SchemaMismatch(
                    f"row is missing column '{missing[0]}'", row=row_index, column=missing[0]
                )
            extra = [k for k in values if k not in self.column_names]
            if extra:
                raise SchemaMismatch(f"row has unknown column '{extra[0]}'", row=row_index, column=extra[0])
            values = [values[c.name] for c in self.schema]
        values = list(values)
        if len(values) != len(self.schema):
            raise SchemaMismatch(
                f"row {row_index}: expected {len(self.schema)} values, got {len(values)}",
                row=row_index,
            )
        return tuple(c.validate_value(v, row=row_index) for c, v in zip(self.schema, values))

    def validate_feature_row(self, values: Mapping[str, Any]) -> dict[str, Any]:
        """Validate a target-less row (the shape predictions take)."""
        out: dict[str, Any] = {}
        for col in self.feature_columns:
            if col.name not in values:
                raise SchemaMismatch(f"row is missing column '{col.name}'", column=col.name)
            out[col.name] = col.validate_value(values[col.name])
        extra = [k for k in values if k not in {c.name for c in self.feature_columns}]
        if extra:
            raise SchemaMismatch(f"row has unknown column '{extra[0]}'", column=extra[0])
        return out

    def row_as_dict(self, index: int, include_target: bool = True) -> dict[str, Any]:
        row = self.rows[index]
        return {
            c.name: v for c, v in zip(self.schema, row) if include_target or c.name != self.target
        }

    def labels(self) -> list[str]:
        i = self.column_names.index(self.target)
        return [row[i] for row in self.rows]

    # --- edits (carry Update semantics when exposed as block methods) ---

    def add_row(self, values: Sequence[Any] | Mapping[str, Any]) -> None:
        self.rows.append(self.validate_row(values))

    def update_cell(self, row: int, column: str, value: Any) -> None:
        if not 0 <= row < len(self.rows):
            raise IndexOutOfRange(f"row index {row} out of range (n={len(self.rows)})")
        col = self.column(column)
        if isinstance(value, str) and col.kind == NUMERIC:
            value = col.parse_cell(value, row=row)
        value = col.validate_value(value, row=row)
        idx = self.column_names.index(column)
        cells = list(self.rows[row])
        cells[idx] = value
        self.rows[row] = tuple(cells)

    def delete_row(self, row: int) -> None:
        if not 0 <= row < len(self.rows):
            raise IndexOutOfRange(f"row index {row} out of range (n={len(self.rows)})")
        del self.rows[row]

    def state_items(self) -> dict:
        return {"rows": [list(r) for r in self.rows], "target": self.target}


def edit_dataset(dataset: Dataset, edit: Mapping[str, Any]) -> dict:
    """Apply one edit described as ``{"op": ..., ...}`` and acknowledge it."""
    op = edit.get("op")
    if op == "add_row":
        dataset.add_row(edit["values"])
    elif op == "update_cell":
        dataset.update_cell(int(edit["row"]), str(edit["column"]), edit["value"])
    elif op == "delete_row":
        dataset.delete_row(int(edit["row"]))
    else:
        raise InvalidConfig(f"unknown edit op '{op}'")
    return {"ok": True, "rows": len(dataset.rows)}


def load_dataset_csv(source: str | Path | bytes, schema: Sequence[ColumnSchema], target: str) -> Dataset:
    """Load a comma-separated file whose header must equal the schema names.

    Cells parse per column kind; the first unparseable cell aborts the load
    with its row index and column name.
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    else:
        text = Path(source).read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise MissingHeader("CSV input is empty") from None
    names = [c.name for c in schema]
    header = [h.strip() for h in header]
    if header != names:
        raise SchemaMismatch(f"CSV header {header} does not match schema columns {names}", row=0)
    rows = []
    for i, record in enumerate(reader, start=1):
        if not record:
            continue
        if len(record) != len(schema):
            raise SchemaMismatch(f"row {i}: expected {len(schema)} cells, got {len(record)}", row=i)
        rows.append(tuple(col.parse_cell(cell, row=i) for col, cell in zip(schema, record)))
    return Dataset(schema, rows, target)


def dataset_to_csv(dataset: Dataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(dataset.column_names)
    for row in dataset.rows:
        writer.writerow([f"{v:g}" if isinstance(v, float) else v for v in row])
    return buf.getvalue()


# --- encoding -----------------------------------------------------------------


@dataclass
class FeatureGroup:
    """Encoded representation of one original (pre-encoding) column."""

    column: str
    kind: str
    indices: tuple[int, ...]
    levels: tuple[str, ...] = ()


@dataclass
class EncodedMatrix:
    """Dataset features as a numeric matrix plus the recipe to encode new rows.

    Numeric columns are standardized with the population convention
    (divide by n); categoricals become full one-hot groups in declared level
    order. Zero-variance numeric columns are dropped and recorded in
    ``warnings``.
    """

    matrix: np.ndarray
    feature_names: list[str]
    groups: list[FeatureGroup]
    means: dict[str, float]
    stds: dict[str, float]
    warnings: list[str] = field(default_factory=list)
    columns: list[ColumnSchema] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def encode_row(self, values: Mapping[str, Any]) -> np.ndarray:
        vec = np.zeros(self.n_features, dtype=float)
        for group in self.groups:
            col = next(c for c in self.columns if c.name == group.column)
            if group.column not in values:
                raise SchemaMismatch(f"row is missing column '{group.column}'", column=group.column)
            value = col.validate_value(values[group.column])
            if group.kind == NUMERIC:
                vec[group.indices[0]] = (value - self.means[group.column]) / self.stds[group.column]
            else:
                vec[group.indices[group.levels.index(value)]] = 1.0
        return vec

    def decode_row(self, vec: Sequence[float]) -> dict[str, Any]:
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.n_features,):
            raise SchemaMismatch(f"expected vector of length {self.n_features}")
        out: dict[str, Any] = {}
        for group in self.groups:
            if group.kind == NUMERIC:
                out[group.column] = float(
                    vec[group.indices[0]] * self.stds[group.column] + self.means[group.column]
                )
            else:
                onehot = vec[list(group.indices)]
                out[group.column] = group.levels[int(np.argmax(onehot))]
        return out

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "means": dict(self.means),
            "stds": dict(self.stds),
            "groups": [
                {"column": g.column, "kind": g.kind, "indices": list(g.indices), "levels": list(g.levels)}
                for g in self.groups
            ],
        }


def encode(dataset: Dataset) -> EncodedMatrix:
    """Encode a dataset's feature columns; the target column is excluded."""
    if not dataset.rows:
        raise EmptyDataset("cannot encode an empty dataset")
    columns = dataset.feature_columns
    n = len(dataset.rows)
    col_values = {
        c.name: [row[dataset.column_names.index(c.name)] for row in dataset.rows] for c in columns
    }
    feature_names: list[str] = []
    groups: list[FeatureGroup] = []
    means: dict[str, float] = {}
    stds: dict[str, float] = {}
    warnings: list[str] = []
    parts: list[np.ndarray] = []
    for col in columns:
        values = col_values[col.name]
        if col.kind == NUMERIC:
            arr = np.asarray(values, dtype=float)
            mean = float(arr.mean())
            std = float(arr.std())  # population convention
            if std == 0.0:
                msg = f"column '{col.name}' has zero variance; dropped from encoding"
                warnings.append(msg)
                log.warning(msg)
                continue
            means[col.name] = mean
            stds[col.name] = std
            groups.append(FeatureGroup(col.name, NUMERIC, (len(feature_names),)))
            feature_names.append(col.name)
            parts.append(((arr - mean) / std).reshape(-1, 1))
        else:
            start = len(feature_names)
            onehot = np.zeros((n, len(col.levels)))
            index_of = {lvl: j for j, lvl in enumerate(col.levels)}
            for i, v in enumerate(values):
                onehot[i, index_of[v]] = 1.0
            groups.append(
                FeatureGroup(col.name, CATEGORICAL, tuple(range(start, start + len(col.levels))), col.levels)
            )
            feature_names.extend(f"{col.name}={lvl}" for lvl in col.levels)
            parts.append(onehot)
    matrix = np.hstack(parts) if parts else np.zeros((n, 0))
    return EncodedMatrix(
        matrix=matrix,
        feature_names=feature_names,
        groups=groups,
        means=means,
        stds=stds,
        warnings=warnings,
        columns=[c for c in columns],
    )
