"""CSV ingestion, preprocessing and stratified fold plans."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

NUMERIC = "numeric"
CATEGORICAL = "categorical"
LABEL = "label"
INDICATOR = "indicator"  # one-hot output column; never rescaled
KINDS = (NUMERIC, CATEGORICAL, LABEL)

MISSING_TOKENS = frozenset({"", "NA"})


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class Column:
    name: str
    kind: str


@dataclass(frozen=True)
class Schema:
    columns: tuple[Column, ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate column names in schema: {dup}")
        for c in self.columns:
            if c.kind not in KINDS:
                raise SchemaError(f"column {c.name!r}: unknown kind {c.kind!r}")
        n_label = sum(c.kind == LABEL for c in self.columns)
        if n_label != 1:
            raise SchemaError(f"schema needs exactly one label column, found {n_label}")
        if len(self.columns) < 2:
            raise SchemaError("schema needs at least one feature column")

    @property
    def label(self) -> Column:
        return next(c for c in self.columns if c.kind == LABEL)

    @property
    def features(self) -> list[Column]:
        return [c for c in self.columns if c.kind != LABEL]

    @classmethod
    def from_records(cls, records) -> "Schema":
        return cls(tuple(Column(str(r["name"]), str(r["kind"])) for r in records))

    def to_records(self) -> list[dict]:
        return [{"name": c.name, "kind": c.kind} for c in self.columns]


def load_schema(path) -> Schema:
    """Read a schema document: a JSON list of ``{"name", "kind"}`` objects."""
    with open(path) as fh:
        doc = json.load(fh)
    if isinstance(doc, dict):
        doc = doc["columns"]
    return Schema.from_records(doc)


def infer_schema(path, label: str | None = None) -> Schema:
    """Guess a schema from a CSV: ``label`` (default: last column) is the label,
    columns whose non-missing tokens all parse as floats are numeric."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    label = header[-1] if label is None else label
    if label not in header:
        raise SchemaError(f"label column {label!r} not in header")
    cols = []
    for j, name in enumerate(header):
        if name == label:
            cols.append(Column(name, LABEL))
            continue
        kind = NUMERIC
        for r in rows:
            tok = r[j].strip()
            if tok in MISSING_TOKENS:
                continue
            try:
                float(tok)
            except ValueError:
                kind = CATEGORICAL
                break
        cols.append(Column(name, kind))
    return Schema(tuple(cols))


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus ground-truth labels.

    ``kinds`` gives the kind of each column of ``X``. While a column is still
    categorical its values are level ids into ``levels[name]``; after one-hot
    expansion every column is numeric. Missing numeric entries are NaN.
    """

    X: np.ndarray
    y: np.ndarray
    class_names: tuple[str, ...]
    feature_names: tuple[str, ...]
    kinds: tuple[str, ...]
    levels: dict = field(default_factory=dict)
    name: str = ""

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return replace(self, X=self.X[rows], y=self.y[rows])


def load_csv(path, schema: Schema, name: str | None = None) -> Dataset:
    """Load a headed, comma-separated UTF-8 file according to ``schema``.

    Labels are factorized to ids in lexicographic order of the label strings;
    categorical columns become level ids (levels sorted lexicographically) and
    a missing categorical token becomes its own ``"NA"`` level. Numeric blanks
    and ``NA`` are kept as NaN for :func:`preprocess` to impute.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such data file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    if len(set(header)) != len(header):
        dup = sorted({h for h in header if header.count(h) > 1})
        raise SchemaError(f"{path}: duplicated header names {dup}")
    known = {c.name for c in schema.columns}
    unknown = [h for h in header if h not in known]
    if unknown:
        raise SchemaError(f"{path}: columns not in schema: {unknown}")
    absent = [c.name for c in schema.columns if c.name not in header]
    if absent:
        raise SchemaError(f"{path}: schema columns missing from file: {absent}")
    for lineno, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields, got {len(r)}")
    if not rows:
        raise SchemaError(f"{path}: no data rows")

    pos = {h: j for j, h in enumerate(header)}
    label_tokens = [r[pos[schema.label.name]].strip() for r in rows]
    if any(t in MISSING_TOKENS for t in label_tokens):
        raise SchemaError(f"{path}: missing label values")
    class_names = tuple(sorted(set(label_tokens)))
    class_id = {c: i for i, c in enumerate(class_names)}
    y = np.array([class_id[t] for t in label_tokens], dtype=np.int64)

    feats = schema.features
    X = np.empty((len(rows), len(feats)), dtype=float)
    levels = {}
    for j, col in enumerate(feats):
        tokens = [r[pos[col.name]].strip() for r in rows]
        if col.kind == NUMERIC:
            for i, tok in enumerate(tokens):
                if tok in MISSING_TOKENS:
                    X[i, j] = np.nan
                    continue
                try:
                    X[i, j] = float(tok)
                except ValueError:
                    raise SchemaError(
                        f"{path}:{i + 2}: non-numeric token {tok!r} in numeric column {col.name!r}"
                    ) from None
        else:
            tokens = ["NA" if t in MISSING_TOKENS else t for t in tokens]
            lv = tuple(sorted(set(tokens)))
            idx = {v: k for k, v in enumerate(lv)}
            X[:, j] = [idx[t] for t in tokens]
            levels[col.name] = lv

    return Dataset(
        X=X,
        y=y,
        class_names=class_names,
        feature_names=tuple(c.name for c in feats),
        kinds=tuple(c.kind for c in feats),
        levels=levels,
        name=name if name is not None else path.stem,
    )


def preprocess(ds: Dataset, scale_numeric: bool = False, one_hot: bool = True,
               impute_zero: bool = False) -> Dataset:
    """Impute, one-hot encode and standardize.

    Order: missing numeric entries become 0 (``impute_zero``), categorical
    columns expand to one indicator column per level (``one_hot``), then
    numeric columns are standardized with the population standard deviation
    (``scale_numeric``); constant columns map to all zeros. Indicator columns
    are never rescaled.
    """
    X = ds.X.copy()
    num = np.array([k == NUMERIC for k in ds.kinds], dtype=bool)
    if impute_zero:
        block = X[:, num]
        block[np.isnan(block)] = 0.0
        X[:, num] = block
    if np.isnan(X).any():
        raise ValueError(f"{ds.name}: missing numeric values remain; use impute_zero=True")

    names, kinds, cols = [], [], []
    for j, (name, kind) in enumerate(zip(ds.feature_names, ds.kinds)):
        if kind == CATEGORICAL and one_hot:
            lv = ds.levels[name]
            ids = X[:, j].astype(np.int64)
            for k, level in enumerate(lv):
                cols.append((ids == k).astype(float))
                names.append(f"{name}={level}")
                kinds.append(INDICATOR)
        else:
            col = X[:, j]
            if kind == NUMERIC and scale_numeric:
                col = _standardize(col)
            cols.append(col)
            names.append(name)
            kinds.append(kind)
    Xo = np.column_stack(cols) if cols else np.empty((ds.n, 0))
    levels = {} if one_hot else dict(ds.levels)
    return replace(ds, X=Xo, feature_names=tuple(names), kinds=tuple(kinds), levels=levels)


def _standardize(col: np.ndarray) -> np.ndarray:
    mu = col.mean()
    sd = col.std()
    if sd == 0.0 or not np.isfinite(sd):
        return np.zeros_like(col)
    return (col - mu) / sd


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[tuple[np.ndarray, np.ndarray], ...]
    seed: int

    @property
    def k(self) -> int:
        return len(self.folds)


def stratified_kfold(ds_or_y, k: int = 5, seed: int = 0) -> FoldPlan:
    """Stratified K-fold plan.

    Within each class the rows are shuffled and dealt round-robin to the
    folds; the dealing position carries over from one class to the next so
    fold sizes stay balanced too.
    """
    y = ds_or_y.y if isinstance(ds_or_y, Dataset) else np.asarray(ds_or_y)
    names = ds_or_y.class_names if isinstance(ds_or_y, Dataset) else None
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(y), dtype=np.int64)
    offset = 0
    for c in np.unique(y):
        members = np.flatnonzero(y == c)
        if len(members) < k:
            label = repr(names[c]) if names is not None else int(c)
            raise ValueError(f"class {label} has {len(members)} members, fewer than k={k}")
        members = members[rng.permutation(len(members))]
        fold_of[members] = (offset + np.arange(len(members))) % k
        offset = (offset + len(members)) % k
    folds = []
    for f in range(k):
        test = np.flatnonzero(fold_of == f)
        train = np.flatnonzero(fold_of != f)
        folds.append((train, test))
    return FoldPlan(tuple(folds), seed)


def stratified_subsample(y, cap: int, seed: int = 0) -> np.ndarray:
    """Sorted row indices of a class-proportional subsample of size ``cap``
    (all rows when ``len(y) <= cap``)."""
    y = np.asarray(y)
    n = len(y)
    if n <= cap:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(y, return_counts=True)
    quota = np.floor(counts * cap / n).astype(int)
    # largest remainders get the leftover slots
    rem = counts * cap / n - quota
    for c in np.argsort(-rem, kind="stable")[: cap - quota.sum()]:
        quota[c] += 1
    keep = []
    for c, q in zip(classes, quota):
        members = np.flatnonzero(y == c)
        keep.append(rng.choice(members, size=q, replace=False))
    return np.sort(np.concatenate(keep))
