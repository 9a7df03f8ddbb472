"""Tabular dataset container, CSV loading, folds, and numeric encoding.

A dataset is a target column plus typed feature columns. Numeric columns
are float64 with NaN for missing entries; categorical columns are int
codes into a sorted vocabulary with -1 for missing. The class column is
always categorical and rows with a missing class are dropped at load
time.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .seeding import rng_from

MISSING_TOKENS = frozenset({"", "?", "NA"})

MIN_INSTANCES = 300
MAX_INSTANCES = 5000
MAX_ATTRIBUTES = 1000


@dataclass
class Column:
    """One feature column: numeric or categorical."""

    name: str
    kind: str  # "numeric" | "categorical"
    values: np.ndarray  # float64 (NaN missing) or int64 codes (-1 missing)
    vocabulary: tuple = ()  # sorted category labels, categorical only

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise ValueError(f"bad column kind: {self.kind}")

    @property
    def missing_mask(self) -> np.ndarray:
        if self.kind == "numeric":
            return np.isnan(self.values)
        return self.values < 0

    def take(self, idx: np.ndarray) -> "Column":
        return Column(self.name, self.kind, self.values[idx], self.vocabulary)


@dataclass
class Dataset:
    """Feature columns plus an integer-coded class target."""

    dataset_id: str
    columns: list[Column]
    target: np.ndarray  # int64 codes into class_labels, never missing
    class_labels: tuple
    n_dropped_rows: int = 0

    @property
    def n_rows(self) -> int:
        return int(self.target.shape[0])

    @property
    def n_features(self) -> int:
        return len(self.columns)

    @property
    def n_classes(self) -> int:
        return len(self.class_labels)

    def numeric_columns(self) -> list[Column]:
        return [c for c in self.columns if c.kind == "numeric"]

    def categorical_columns(self) -> list[Column]:
        return [c for c in self.columns if c.kind == "categorical"]

    def subset(self, idx: np.ndarray) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.dataset_id,
            [c.take(idx) for c in self.columns],
            self.target[idx],
            self.class_labels,
            self.n_dropped_rows,
        )


def _is_float_token(tok: str) -> bool:
    try:
        float(tok)
        return True
    except ValueError:
        return False


def _parse_column(name: str, raw: list[str]) -> Column:
    """Infer a column's type from its non-missing tokens.

    Numeric if every observed token parses as a float, else categorical
    with a sorted vocabulary of the distinct observed tokens.
    """
    observed = [t for t in raw if t not in MISSING_TOKENS]
    if observed and all(_is_float_token(t) for t in observed):
        vals = np.array(
            [float(t) if t not in MISSING_TOKENS else np.nan for t in raw],
            dtype=np.float64,
        )
        return Column(name, "numeric", vals)
    vocab = tuple(sorted(set(observed)))
    index = {v: i for i, v in enumerate(vocab)}
    codes = np.array(
        [index[t] if t not in MISSING_TOKENS else -1 for t in raw], dtype=np.int64
    )
    return Column(name, "categorical", codes, vocab)


def from_rows(
    dataset_id: str, header: list[str], rows: list[list[str]], target_column: str
) -> Dataset:
    """Build a Dataset from parsed CSV cells (all cells as stripped strings)."""
    if target_column not in header:
        raise ValueError(f"target column {target_column!r} not in header")
    tgt_pos = header.index(target_column)
    keep = [r for r in rows if r[tgt_pos] not in MISSING_TOKENS]
    n_dropped = len(rows) - len(keep)

    target_raw = [r[tgt_pos] for r in keep]
    class_labels = tuple(sorted(set(target_raw)))
    index = {v: i for i, v in enumerate(class_labels)}
    target = np.array([index[t] for t in target_raw], dtype=np.int64)

    columns = []
    for j, name in enumerate(header):
        if j == tgt_pos:
            continue
        columns.append(_parse_column(name, [r[j] for r in keep]))
    return Dataset(dataset_id, columns, target, class_labels, n_dropped)


def load_csv(path_or_buffer, dataset_id: str, target_column: str) -> Dataset:
    """Load a headered CSV. Missing cells are '', '?' or 'NA'."""
    if hasattr(path_or_buffer, "read"):
        text = path_or_buffer.read()
    else:
        with open(path_or_buffer, "r", encoding="utf-8") as fh:
            text = fh.read()
    reader = csv.reader(io.StringIO(text))
    table = [[cell.strip() for cell in row] for row in reader if row]
    if not table:
        raise ValueError("empty CSV")
    header, rows = table[0], table[1:]
    width = len(header)
    for i, r in enumerate(rows):
        if len(r) != width:
            raise ValueError(f"row {i + 2} has {len(r)} cells, expected {width}")
    return from_rows(dataset_id, header, rows, target_column)


def check_eligibility(ds: Dataset) -> list[str]:
    """Reasons the dataset falls outside the supported envelope (empty = ok)."""
    problems = []
    if ds.n_rows < MIN_INSTANCES:
        problems.append(f"too few instances: {ds.n_rows} < {MIN_INSTANCES}")
    if ds.n_rows > MAX_INSTANCES:
        problems.append(f"too many instances: {ds.n_rows} > {MAX_INSTANCES}")
    if ds.n_features > MAX_ATTRIBUTES:
        problems.append(f"too many attributes: {ds.n_features} > {MAX_ATTRIBUTES}")
    if ds.n_classes < 2:
        problems.append(f"needs at least 2 classes, found {ds.n_classes}")
    return problems


def stratified_folds(target: np.ndarray, n_folds: int, seed: int) -> np.ndarray:
    """Assign each row a fold id in [0, n_folds) balancing class counts.

    Rows of each class are shuffled, then dealt round-robin onto folds.
    The dealing position carries over between classes so small classes do
    not all pile onto fold 0.
    """
    target = np.asarray(target)
    rng = rng_from(seed, "folds")
    assign = np.empty(target.shape[0], dtype=np.int64)
    cursor = 0
    for cls in np.unique(target):
        idx = np.flatnonzero(target == cls)
        idx = idx[rng.permutation(idx.shape[0])]
        for i in idx:
            assign[i] = cursor % n_folds
            cursor += 1
    return assign


def bootstrap_indices(n_rows: int, seed: int) -> np.ndarray:
    """Sample n_rows row indices with replacement."""
    rng = rng_from(seed, "bootstrap")
    return rng.integers(0, n_rows, size=n_rows)


@dataclass
class EncodedView:
    """Fixed-width numeric matrix view of a dataset partition.

    Numeric columns are standardized by the fitted mean and population
    standard deviation (zero-variance columns map to all zeros) with
    missing entries imputed at the fitted mean, i.e. 0 after scaling.
    Categorical columns are one-hot over the fitted vocabulary, all
    zeros when missing. Fit on training rows, apply to any rows.
    """

    means: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sds: np.ndarray = field(default_factory=lambda: np.zeros(0))
    n_numeric: int = 0
    cat_widths: tuple = ()
    width: int = 0


def fit_encoder(ds: Dataset) -> EncodedView:
    numeric = ds.numeric_columns()
    means = np.zeros(len(numeric))
    sds = np.zeros(len(numeric))
    for i, col in enumerate(numeric):
        vals = np.sort(col.values[~np.isnan(col.values)])
        if vals.size:
            means[i] = vals.mean()
            sds[i] = vals.std()
    widths = tuple(len(c.vocabulary) for c in ds.categorical_columns())
    return EncodedView(means, sds, len(numeric), widths, int(len(numeric) + sum(widths)))


def encode(ds: Dataset, enc: EncodedView) -> np.ndarray:
    """Apply a fitted encoder, returning an (n_rows, enc.width) float matrix."""
    out = np.zeros((ds.n_rows, enc.width))
    numeric = ds.numeric_columns()
    for i, col in enumerate(numeric):
        sd = enc.sds[i]
        if sd > 0:
            scaled = (col.values - enc.means[i]) / sd
            out[:, i] = np.where(np.isnan(col.values), 0.0, scaled)
    offset = enc.n_numeric
    for col, width in zip(ds.categorical_columns(), enc.cat_widths):
        codes = col.values
        valid = (codes >= 0) & (codes < width)
        rows = np.flatnonzero(valid)
        out[rows, offset + codes[rows]] = 1.0
        offset += width
    return out
