"""Dataset perturbation operators with a changed-cell budget.

Four operators: shuffle or mutate the confidential-property attribute, each
optionally extended to m extra categorical attributes. "Budget" counts
cells (row x column entries) that differ between the original and the
perturbed dataset; each operator keeps that count at or below delta.
Shuffles permute values within a column, so every shuffled column keeps its
multiset of values and the property value is preserved exactly.
"""

from dataclasses import dataclass

import numpy as np

from .data import CATEGORICAL, TabularDataset
from .errors import ConfigError

SHUFFLE_PROPERTY = "shuffle-property"
SHUFFLE_MULTI = "shuffle-multi"
MUTATE_PROPERTY = "mutate-property"
MUTATE_MULTI = "mutate-multi"
ALL_KINDS = (SHUFFLE_PROPERTY, SHUFFLE_MULTI, MUTATE_PROPERTY, MUTATE_MULTI)


@dataclass(frozen=True)
class PerturbationKind:
    kind: str
    m: int = 2  # extra attributes touched by the -multi variants

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise ConfigError(f"unknown perturbation kind {self.kind!r}")
        if self.is_multi and self.m < 1:
            raise ConfigError("multi perturbations need m >= 1")

    @property
    def is_multi(self):
        return self.kind in (SHUFFLE_MULTI, MUTATE_MULTI)

    @property
    def is_shuffle(self):
        return self.kind in (SHUFFLE_PROPERTY, SHUFFLE_MULTI)


@dataclass
class PerturbResult:
    perturbed: TabularDataset
    changed_rows: np.ndarray      # indices into the original dataset
    z_original: TabularDataset | None   # original versions of changed rows
    z_perturbed: TabularDataset | None  # perturbed versions, row-aligned
    changed_cells: int


def _candidate_extra_columns(ds: TabularDataset, property_column: str):
    out = []
    for c in ds.schema.attribute_columns:
        if c.kind == CATEGORICAL and c.name != property_column and len(c.categories) > 1:
            out.append(c.name)
    return out


def perturb(ds: TabularDataset, kind: PerturbationKind, delta: int, seed: int) -> PerturbResult:
    """Apply one perturbation operator under the cell budget delta."""
    if delta < 1:
        raise ConfigError("perturbation budget delta must be >= 1")
    prop_name = ds.schema.property_column
    prop_col = ds.schema.column(prop_name)
    if prop_col.kind != CATEGORICAL:
        raise ConfigError("property column must be categorical")
    if len(prop_col.categories) < 2:
        raise ConfigError("property column needs at least two categories")

    rng = np.random.default_rng(seed)
    columns = [prop_name]
    if kind.is_multi:
        extras = _candidate_extra_columns(ds, prop_name)
        if kind.m > len(extras):
            raise ConfigError(
                f"m={kind.m} exceeds the {len(extras)} available extra attributes"
            )
        pick = rng.choice(len(extras), size=kind.m, replace=False)
        columns += [extras[i] for i in sorted(pick)]

    per_col = max(1, delta // len(columns))
    new_cols = ds.copy_columns()
    n = ds.n_rows
    changed_cells = 0
    for name in columns:
        size = int(rng.integers(min(2, per_col), per_col + 1))
        size = min(size, n)
        rows = rng.choice(n, size=size, replace=False)
        col = new_cols[name]
        if kind.is_shuffle:
            col[rows] = col[rows][rng.permutation(size)]
        else:
            vocab = len(ds.schema.column(name).categories)
            # uniform draw over the other categories of each selected cell
            shift = rng.integers(1, vocab, size=size)
            col[rows] = (col[rows] + shift) % vocab
        changed_cells += int(np.sum(col[rows] != ds.column(name)[rows]))

    assert changed_cells <= delta, "budget accounting broke"
    perturbed = TabularDataset(ds.schema, new_cols)

    diff = np.zeros(n, dtype=bool)
    for name in columns:
        diff |= new_cols[name] != ds.column(name)
    changed = np.flatnonzero(diff)
    z_orig = ds.subset(changed) if changed.size else None
    z_pert = perturbed.subset(changed) if changed.size else None
    return PerturbResult(perturbed, changed, z_orig, z_pert, changed_cells)
