"""Tabular datasets: schema, CSV ingestion, encoding, confidential-property
computation, and the sampling/splitting used throughout the pipeline.

Categorical cells are stored as integer codes into the schema vocabulary,
numeric cells as float64. Datasets are immutable once encoded; every
operation returning a dataset builds a new one.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, IngestionError

CATEGORICAL = "categorical"
NUMERIC = "numeric"


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    categories: tuple = ()

    def __post_init__(self):
        if self.kind not in (CATEGORICAL, NUMERIC):
            raise ConfigError(f"column {self.name}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL and not self.categories:
            raise ConfigError(f"column {self.name}: categorical vocabulary is empty")
        object.__setattr__(self, "categories", tuple(self.categories))


@dataclass(frozen=True)
class Schema:
    columns: tuple
    label_column: str
    property_column: str

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate column names in schema")
        for need in (self.label_column, self.property_column):
            if need not in names:
                raise ConfigError(f"schema has no column named {need!r}")
        if self.column(self.label_column).kind != CATEGORICAL:
            raise ConfigError("label column must be categorical")

    def column(self, name) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise ConfigError(f"no column named {name!r}")

    @property
    def attribute_columns(self):
        return tuple(c for c in self.columns if c.name != self.label_column)

    @property
    def n_label_classes(self):
        return len(self.column(self.label_column).categories)

    def feature_width(self):
        w = 0
        for c in self.attribute_columns:
            w += len(c.categories) if c.kind == CATEGORICAL else 1
        return w

    def to_dict(self):
        return {
            "columns": [
                {"name": c.name, "kind": c.kind, "categories": list(c.categories)}
                for c in self.columns
            ],
            "label_column": self.label_column,
            "property_column": self.property_column,
        }

    @classmethod
    def from_dict(cls, doc):
        cols = tuple(
            Column(d["name"], d["kind"], tuple(d.get("categories", ())))
            for d in doc["columns"]
        )
        return cls(cols, doc["label_column"], doc["property_column"])


def load_schema(path) -> Schema:
    with open(path) as fh:
        return Schema.from_dict(json.load(fh))


def save_schema(schema: Schema, path):
    with open(path, "w") as fh:
        json.dump(schema.to_dict(), fh, indent=1)


@dataclass(frozen=True)
class PropertySpec:
    """Which attribute is confidential and how its rate is binned.

    The aggregate is the fraction of rows whose property column equals
    positive_category. Bins are right-open intervals partitioning [0, 1];
    the final bin is closed at 1.
    """

    column: str
    positive_category: str
    bins: tuple

    def __post_init__(self):
        bins = tuple((float(lo), float(hi)) for lo, hi in self.bins)
        object.__setattr__(self, "bins", bins)
        if len(bins) < 2:
            raise ConfigError("need at least two property bins")
        if bins[0][0] != 0.0 or bins[-1][1] != 1.0:
            raise ConfigError("bins must cover [0, 1]")
        for (a, b), (c, d) in zip(bins, bins[1:]):
            if b != c:
                raise ConfigError("bins must be contiguous")
            if a >= b or c >= d:
                raise ConfigError("bins must be non-empty intervals")

    @property
    def n_classes(self):
        return len(self.bins)

    def bin_index(self, value: float) -> int:
        for i, (lo, hi) in enumerate(self.bins):
            if lo <= value < hi:
                return i
        return len(self.bins) - 1  # value == 1.0 lands in the closed last bin

    def to_dict(self):
        return {
            "column": self.column,
            "positive_category": self.positive_category,
            "bins": [list(b) for b in self.bins],
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["column"], doc["positive_category"],
                   tuple(tuple(b) for b in doc["bins"]))


@dataclass
class EncodeStats:
    means: dict
    stds: dict
    zero_variance: tuple = ()


class TabularDataset:
    """Columnar dataset; optionally carries an encoded feature matrix."""

    def __init__(self, schema: Schema, columns: dict, features=None, labels=None,
                 encode_stats: EncodeStats | None = None):
        self.schema = schema
        self._cols = columns
        lengths = {len(v) for v in columns.values()}
        if len(lengths) != 1:
            raise ConfigError("ragged columns")
        self.n_rows = lengths.pop()
        if self.n_rows < 1:
            raise ConfigError("dataset must have at least one row")
        self.features = features
        self.labels = labels
        self.encode_stats = encode_stats

    def __len__(self):
        return self.n_rows

    @property
    def is_encoded(self):
        return self.features is not None

    def column(self, name) -> np.ndarray:
        return self._cols[name]

    def row(self, i) -> dict:
        out = {}
        for c in self.schema.columns:
            v = self._cols[c.name][i]
            out[c.name] = c.categories[int(v)] if c.kind == CATEGORICAL else float(v)
        return out

    def copy_columns(self) -> dict:
        return {k: v.copy() for k, v in self._cols.items()}

    def subset(self, indices) -> "TabularDataset":
        """Rows at the given indices; encoded matrices are sliced along."""
        idx = np.asarray(indices, dtype=np.int64)
        cols = {k: v[idx] for k, v in self._cols.items()}
        feats = self.features[idx] if self.is_encoded else None
        labs = self.labels[idx] if self.is_encoded else None
        return TabularDataset(self.schema, cols, feats, labs, self.encode_stats)

    def to_csv(self, path, delimiter=";"):
        names = [c.name for c in self.schema.columns]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, delimiter=delimiter)
            wr.writerow(names)
            for i in range(self.n_rows):
                r = self.row(i)
                wr.writerow([r[n] if isinstance(r[n], str) else repr(r[n]) for n in names])


def load_csv(path, schema: Schema, delimiter=";") -> TabularDataset:
    """Read and validate a delimited file against the schema.

    Raises IngestionError naming the offending row and column for missing
    headers, unknown categories, and unparsable numerics. Row order is
    preserved.
    """
    cat_index = {
        c.name: {cat: i for i, cat in enumerate(c.categories)}
        for c in schema.columns if c.kind == CATEGORICAL
    }
    raw = {c.name: [] for c in schema.columns}
    with open(path, newline="") as fh:
        rd = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip().strip('"') for h in next(rd)]
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        pos = {}
        for c in schema.columns:
            if c.name not in header:
                raise IngestionError(f"{path}: missing column {c.name!r} in header")
            pos[c.name] = header.index(c.name)
        for rownum, rec in enumerate(rd):
            if not rec:
                continue
            for c in schema.columns:
                val = rec[pos[c.name]].strip().strip('"')
                if c.kind == CATEGORICAL:
                    code = cat_index[c.name].get(val)
                    if code is None:
                        raise IngestionError(
                            f"{path}: row {rownum}, column {c.name!r}: "
                            f"unknown category {val!r}"
                        )
                    raw[c.name].append(code)
                else:
                    try:
                        raw[c.name].append(float(val))
                    except ValueError:
                        raise IngestionError(
                            f"{path}: row {rownum}, column {c.name!r}: "
                            f"unparsable numeric {val!r}"
                        ) from None
    cols = {}
    for c in schema.columns:
        dtype = np.int64 if c.kind == CATEGORICAL else np.float64
        cols[c.name] = np.asarray(raw[c.name], dtype=dtype)
    return TabularDataset(schema, cols)


def encode(dataset: TabularDataset, stats_from: TabularDataset | None = None) -> TabularDataset:
    """One-hot categoricals, standardize numerics, map labels to class ids.

    Feature layout follows schema column order, then vocabulary order, so
    two datasets with the same schema encode identically. Standardization
    statistics come from this dataset unless stats_from supplies an already
    encoded sibling (used when perturbed rows must live in the parent's
    feature space). Zero-variance numerics encode as constant zero and are
    flagged.
    """
    schema = dataset.schema
    if stats_from is not None:
        if stats_from.encode_stats is None:
            raise ConfigError("stats_from dataset is not encoded")
        stats = stats_from.encode_stats
    else:
        means, stds, flat = {}, {}, []
        for c in schema.attribute_columns:
            if c.kind == NUMERIC:
                vals = dataset.column(c.name)
                mu = float(vals.mean())
                sd = float(vals.std())
                means[c.name] = mu
                stds[c.name] = sd
                if sd == 0.0:
                    flat.append(c.name)
        stats = EncodeStats(means, stds, tuple(flat))

    n = dataset.n_rows
    blocks = []
    for c in schema.attribute_columns:
        if c.kind == CATEGORICAL:
            codes = dataset.column(c.name)
            block = np.zeros((n, len(c.categories)))
            block[np.arange(n), codes] = 1.0
            blocks.append(block)
        else:
            vals = dataset.column(c.name)
            sd = stats.stds[c.name]
            if sd == 0.0:
                blocks.append(np.zeros((n, 1)))
            else:
                blocks.append(((vals - stats.means[c.name]) / sd)[:, None])
    features = np.ascontiguousarray(np.hstack(blocks))
    labels = dataset.column(schema.label_column).astype(np.int64)
    return TabularDataset(schema, dict(dataset._cols), features, labels, stats)


def compute_property(dataset: TabularDataset, spec: PropertySpec):
    """Rate of the positive category in the property column, and its bin."""
    col = dataset.schema.column(spec.column)
    if col.kind != CATEGORICAL:
        raise ConfigError(f"property column {spec.column!r} must be categorical")
    if spec.positive_category not in col.categories:
        raise ConfigError(
            f"{spec.positive_category!r} is not a category of {spec.column!r}"
        )
    positive = col.categories.index(spec.positive_category)
    value = float(np.mean(dataset.column(spec.column) == positive))
    return value, spec.bin_index(value)


def split_provider_adversary(dataset: TabularDataset, n_provider: int, seed: int):
    """Disjoint (provider, adversary) partition, deterministic per seed."""
    if not (0 < n_provider < dataset.n_rows):
        raise ConfigError(
            f"n_provider must be in (0, {dataset.n_rows}), got {n_provider}"
        )
    perm = np.random.default_rng(seed).permutation(dataset.n_rows)
    return dataset.subset(perm[:n_provider]), dataset.subset(perm[n_provider:])


def sample_subset(dataset: TabularDataset, n: int, seed: int) -> TabularDataset:
    """n distinct rows drawn without replacement, deterministic per seed."""
    if not (0 < n <= dataset.n_rows):
        raise ConfigError(f"subset size must be in (0, {dataset.n_rows}], got {n}")
    idx = np.random.default_rng(seed).choice(dataset.n_rows, size=n, replace=False)
    return dataset.subset(idx)
