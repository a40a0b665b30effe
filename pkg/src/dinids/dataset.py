"""NetFlow v2 CSV ingestion, feature selection, scaling and deterministic sampling."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

from dinids.errors import DataError, NumericInputError, RowError, SchemaError, ShapeError

log = logging.getLogger(__name__)

BENIGN_LABEL = "Benign"
MAX_BAD_ROW_FRACTION = 0.001
COLUMN_TYPES = ("numeric", "categorical", "label")
COLUMN_ROLES = ("feature", "identifier", "label")
MATRIX_MAGIC = "DINIDS-MATRIX 1"


@dataclass(frozen=True)
class SchemaColumn:
    name: str
    type: str
    role: str


@dataclass(frozen=True)
class Schema:
    columns: tuple

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names in schema")
        if len(self.class_columns) != 1:
            raise SchemaError("schema needs exactly one column of type 'label' holding the class name")

    @classmethod
    def parse(cls, text: str) -> "Schema":
        cols = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 3 or parts[1] not in COLUMN_TYPES or parts[2] not in COLUMN_ROLES:
                raise SchemaError(f"schema line {lineno}: expected 'name,type,role', got {line!r}")
            cols.append(SchemaColumn(*parts))
        return cls(tuple(cols))

    @classmethod
    def load(cls, path=None) -> "Schema":
        if path is None:
            return default_schema()
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    @property
    def names(self):
        return [c.name for c in self.columns]

    @property
    def feature_names(self):
        return [c.name for c in self.columns if c.role == "feature"]

    @property
    def identifier_names(self):
        return [c.name for c in self.columns if c.role == "identifier"]

    @property
    def class_columns(self):
        return [c.name for c in self.columns if c.type == "label"]

    @property
    def class_column(self) -> str:
        return self.class_columns[0]

    @property
    def numeric_names(self):
        # every column that must parse as a number
        return [c.name for c in self.columns if c.role != "identifier" and c.type != "label"]


def default_schema() -> Schema:
    text = resources.files("dinids").joinpath("schemas/nfv2.schema").read_text(encoding="utf-8")
    return Schema.parse(text)


@dataclass
class DatasetMeta:
    name: str
    n_flows: int
    benign_fraction: float
    attack_class_counts: dict = field(default_factory=dict)

    @classmethod
    def from_labels(cls, name, labels) -> "DatasetMeta":
        counts = Counter(labels)
        n = len(labels)
        benign = counts.pop(BENIGN_LABEL, 0)
        return cls(name, n, benign / n if n else 0.0, dict(sorted(counts.items())))

    @property
    def n_attack_classes(self) -> int:
        return len(self.attack_class_counts)

    def to_dict(self):
        return {
            "name": self.name,
            "n_flows": self.n_flows,
            "benign_fraction": self.benign_fraction,
            "attack_class_counts": self.attack_class_counts,
        }


@dataclass(eq=False)
class FlowTable:
    frame: pd.DataFrame
    schema: Schema
    meta: DatasetMeta
    row_numbers: np.ndarray | None = None  # 0-based data-row index in the source file

    def __len__(self):
        return len(self.frame)

    @property
    def labels(self) -> np.ndarray:
        return self.frame[self.schema.class_column].to_numpy()

    @property
    def binary_label(self) -> np.ndarray:
        if "binary_label" not in self.frame:
            raise DataError("labels have not been binarized")
        return self.frame["binary_label"].to_numpy()

    def take(self, idx) -> "FlowTable":
        idx = np.asarray(idx)
        frame = self.frame.iloc[idx].reset_index(drop=True)
        meta = DatasetMeta.from_labels(self.meta.name, frame[self.schema.class_column].tolist())
        rows = None if self.row_numbers is None else self.row_numbers[idx]
        return FlowTable(frame, self.schema, meta, rows)


@dataclass(eq=False)
class FeatureMatrix:
    values: np.ndarray
    column_names: list

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.column_names):
            raise ShapeError(f"matrix shape {self.values.shape} does not match {len(self.column_names)} column names")
        if not np.all(np.isfinite(self.values)):
            raise NumericInputError("feature matrix contains NaN or infinite values")

    @property
    def shape(self):
        return self.values.shape

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class ScalerParams:
    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        if self.minimum.shape != self.maximum.shape or np.any(self.minimum > self.maximum):
            raise ValueError("scaler bounds must have equal shapes and min <= max")


# ---------------------------------------------------------------- loading


def check_header(path, schema: Schema):
    header = pd.read_csv(path, nrows=0).columns.tolist()
    missing = [c for c in schema.names if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing columns {', '.join(missing)}")
    return header


def _to_float(col: pd.Series) -> np.ndarray:
    # numpy's str->float cast is correctly rounded; pandas' fast parser is not
    raw = col.to_numpy(dtype=object)
    try:
        return np.asarray(raw, dtype=str).astype(np.float64)
    except ValueError:
        out = np.empty(len(raw))
        for i, v in enumerate(raw):
            try:
                out[i] = float(v)
            except (TypeError, ValueError):
                out[i] = np.nan
        return out


def _parse_chunk(chunk: pd.DataFrame, schema: Schema):
    numeric = pd.DataFrame({c: _to_float(chunk[c]) for c in schema.numeric_names}, index=chunk.index)
    numeric[~np.isfinite(numeric.to_numpy())] = np.nan
    cls = chunk[schema.class_column]
    bad = numeric.isna().any(axis=1).to_numpy() | cls.isna().to_numpy() | (cls.astype(str).str.strip() == "").to_numpy()
    frame = chunk.copy()
    frame[schema.numeric_names] = numeric.astype(np.float64)
    return frame, bad


def load_netflow_csv(path, schema: Schema | None = None, chunksize=200_000, rows=None, name=None) -> FlowTable:
    """Stream a NetFlow CSV into a :class:`FlowTable`.

    ``rows`` optionally restricts the result to these 0-based data-row indices
    (row order in the file is preserved). Malformed rows are dropped with a
    warning naming their file line; more than 0.1% malformed rows aborts.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such dataset file: {path}")
    schema = schema or default_schema()
    check_header(path, schema)
    wanted = None if rows is None else np.unique(np.asarray(rows, dtype=np.int64))

    parts, kept_rows, bad_lines = [], [], []
    n_seen = 0
    reader = pd.read_csv(path, usecols=schema.names, dtype=str, chunksize=chunksize, keep_default_na=False, na_values=[""])
    for chunk in reader:
        index = np.arange(n_seen, n_seen + len(chunk))
        n_seen += len(chunk)
        if wanted is not None:
            sel = np.isin(index, wanted)
            chunk, index = chunk[sel], index[sel]
            if len(chunk) == 0:
                continue
        frame, bad = _parse_chunk(chunk, schema)
        bad_lines.extend((index[bad] + 2).tolist())  # +1 header, +1 one-based
        parts.append(frame[~bad])
        kept_rows.append(index[~bad])

    denom = n_seen if wanted is None else len(wanted)
    if bad_lines:
        preview = ", ".join(map(str, bad_lines[:10]))
        log.warning("%s: dropped %d malformed rows (lines %s%s)", path.name, len(bad_lines), preview,
                    ", ..." if len(bad_lines) > 10 else "")
        if len(bad_lines) > MAX_BAD_ROW_FRACTION * max(denom, 1):
            raise RowError(f"{path}: {len(bad_lines)} of {denom} rows are malformed (first at line {bad_lines[0]})")

    frame = pd.concat(parts, ignore_index=True) if parts else pd.DataFrame(columns=schema.names)
    frame = frame[schema.names]
    meta = DatasetMeta.from_labels(name or path.stem, frame[schema.class_column].tolist())
    table = FlowTable(frame, schema, meta, np.concatenate(kept_rows) if kept_rows else np.zeros(0, np.int64))
    return binarize_labels(table)


def read_class_labels(path, schema: Schema | None = None, chunksize=1_000_000) -> np.ndarray:
    """Only the class-name column, for sampling plans over large files."""
    schema = schema or default_schema()
    check_header(path, schema)
    col = schema.class_column
    out = [c[col].to_numpy() for c in pd.read_csv(path, usecols=[col], dtype=str, chunksize=chunksize,
                                                  keep_default_na=False)]
    return np.concatenate(out) if out else np.zeros(0, dtype=object)


def sample_netflow_csv(path, n, seed, schema: Schema | None = None, name=None) -> FlowTable:
    """Stratified ``n``-row sample of a large CSV in two streaming passes."""
    labels = read_class_labels(path, schema)
    binary = (labels != BENIGN_LABEL).astype(np.int64)
    idx = stratified_indices(binary, n, seed)
    return load_netflow_csv(path, schema, rows=idx, name=name)


def binarize_labels(table: FlowTable) -> FlowTable:
    """``binary_label`` is 0 for the literal class name "Benign" and 1 for everything else."""
    labels = table.frame[table.schema.class_column]
    empty = labels.isna() | (labels.astype(str).str.strip() == "")
    if empty.any():
        first = int(np.flatnonzero(empty.to_numpy())[0])
        raise RowError(f"empty class label in row {first}")
    table.frame["binary_label"] = (labels != BENIGN_LABEL).astype(np.int64).to_numpy()
    return table


def select_features(table: FlowTable) -> FeatureMatrix:
    names = table.schema.feature_names
    dropped = set(table.schema.identifier_names) | {c.name for c in table.schema.columns if c.role == "label"}
    if dropped & set(names):
        raise SchemaError("feature columns overlap identifier/label columns")
    values = table.frame[names].to_numpy(dtype=np.float64)
    return FeatureMatrix(values, list(names))


# ---------------------------------------------------------------- scaling


def fit_scaler(x) -> ScalerParams:
    values = x.values if isinstance(x, FeatureMatrix) else np.asarray(x, dtype=np.float64)
    if values.ndim != 2 or len(values) == 0:
        raise DataError("scaler needs a non-empty 2-D matrix")
    return ScalerParams(values.min(axis=0), values.max(axis=0))


def apply_scaler(params: ScalerParams, x):
    """Min-max scale and clip to [0, 1]; constant columns map to 0."""
    is_fm = isinstance(x, FeatureMatrix)
    values = x.values if is_fm else np.asarray(x, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != len(params.minimum):
        raise ShapeError(f"scaler was fit on {len(params.minimum)} columns, got shape {values.shape}")
    span = params.maximum - params.minimum
    safe = np.where(span > 0, span, 1.0)
    out = np.clip((values - params.minimum) / safe, 0.0, 1.0)
    out[:, span == 0] = 0.0
    return FeatureMatrix(out, x.column_names) if is_fm else out


# ---------------------------------------------------------------- sampling


def largest_remainder(counts, n):
    """Split ``n`` across classes proportionally to ``counts`` (Hamilton's method)."""
    counts = np.asarray(counts, dtype=np.int64)
    total = counts.sum()
    quotas = counts * n / total
    alloc = np.floor(quotas).astype(np.int64)
    order = np.argsort(-(quotas - alloc), kind="stable")
    alloc[order[: n - alloc.sum()]] += 1
    return alloc


def stratified_indices(labels, n, seed) -> np.ndarray:
    labels = np.asarray(labels)
    if n > len(labels):
        raise ValueError(f"cannot sample {n} rows from {len(labels)}")
    if n < 0:
        raise ValueError("sample size must be non-negative")
    classes, inverse = np.unique(labels, return_inverse=True)
    alloc = largest_remainder(np.bincount(inverse), n)
    rng = np.random.default_rng(seed)
    picked = [rng.choice(np.flatnonzero(inverse == k), size=a, replace=False) for k, a in enumerate(alloc)]
    return np.sort(np.concatenate(picked))


def stratified_sample(table: FlowTable, n, seed) -> FlowTable:
    return table.take(stratified_indices(table.binary_label, n, seed))


def split_indices(n, fraction, seed):
    """``(train_idx, test_idx)`` with ``floor(n * fraction)`` test rows, each sorted."""
    if not 0 < fraction < 1:
        raise ValueError("split fraction must lie strictly between 0 and 1")
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(np.floor(n * fraction))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def split(table: FlowTable, fraction, seed):
    tr, te = split_indices(len(table), fraction, seed)
    return table.take(tr), table.take(te)


# ---------------------------------------------------------------- matrix files


def write_matrix(path, values, column_names=None):
    """Text header (n, d, column names) followed by little-endian float64 rows."""
    values = np.ascontiguousarray(values, dtype="<f8")
    if values.ndim == 1:
        values = values[None, :] if column_names is not None else values[:, None]
    n, d = values.shape
    names = list(column_names) if column_names is not None else [f"c{i}" for i in range(d)]
    if len(names) != d or any("," in c or "\n" in c for c in names):
        raise ShapeError("column names must match the column count and contain no commas/newlines")
    header = f"{MATRIX_MAGIC}\nn={n}\nd={d}\ncolumns={','.join(names)}\nEND\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(values.tobytes())


def read_matrix(path):
    """Inverse of :func:`write_matrix`; returns ``(values, column_names)``."""
    with open(path, "rb") as fh:
        fields = {}
        first = fh.readline().decode("ascii").rstrip("\n")
        if first != MATRIX_MAGIC:
            raise SchemaError(f"{path}: not a matrix file")
        while True:
            line = fh.readline().decode("ascii").rstrip("\n")
            if line == "END":
                break
            if not line:
                raise SchemaError(f"{path}: truncated header")
            key, _, val = line.partition("=")
            fields[key] = val
        n, d = int(fields["n"]), int(fields["d"])
        names = fields["columns"].split(",") if d else []
        payload = fh.read()
    if len(payload) != n * d * 8:
        raise SchemaError(f"{path}: expected {n * d * 8} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype="<f8").reshape(n, d).astype(np.float64), names
