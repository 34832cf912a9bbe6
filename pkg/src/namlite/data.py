"""Column schemas, quantile binning, and integer bin encoding.

Tables enter as any mapping of column name to a value sequence (a plain
dict or a pandas DataFrame both work through ``.items()``). Every feature
is discretized to integer bin indices before modeling; index 0 is reserved
for missing values in all features.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "MISSING_TOKENS",
    "KINDS",
    "FeatureSchema",
    "BinMap",
    "BinnedMatrix",
    "infer_schema",
    "apply_schema_override",
    "fit_bins",
    "transform",
    "split_folds",
    "read_csv",
    "default_min_samples_per_bin",
]

# Tokens treated as missing, matched case-insensitively after stripping.
MISSING_TOKENS = frozenset({"", "na", "nan", "null"})

KINDS = ("continuous", "categorical", "binary")


@dataclass(frozen=True)
class FeatureSchema:
    """Name and kind of one input column."""

    name: str
    kind: str

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        return cls(str(d["name"]), str(d["kind"]))


@dataclass(frozen=True)
class BinMap:
    """Learned discretization of one feature.

    Continuous features store ascending distinct ``edges``; value v maps to
    bin 1 + #{edges < v}. Categorical features store the ordered category
    list; category i maps to bin 1 + i. Bin 0 is always the missing bin.
    """

    feature: str
    kind: str
    edges: tuple[float, ...] = ()
    categories: tuple[str, ...] = ()

    @property
    def n_bins(self) -> int:
        """Number of observed-value bins, excluding the missing bin."""
        if self.kind == "continuous":
            return len(self.edges) + 1
        return len(self.categories)

    @property
    def total_bins(self) -> int:
        return self.n_bins + 1

    def label(self, index: int) -> str:
        """Human-readable label for one bin index."""
        if index == 0:
            return "missing"
        if self.kind == "continuous":
            lo = "-inf" if index == 1 else _fmt(self.edges[index - 2])
            hi = "inf" if index == self.n_bins else _fmt(self.edges[index - 1])
            close = "]" if index < self.n_bins else ")"
            return f"({lo}, {hi}{close}"
        return self.categories[index - 1]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "kind": self.kind,
            "edges": [float(e) for e in self.edges],
            "categories": list(self.categories),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BinMap":
        return cls(
            feature=str(d["feature"]),
            kind=str(d["kind"]),
            edges=tuple(float(e) for e in d["edges"]),
            categories=tuple(str(c) for c in d["categories"]),
        )


@dataclass(frozen=True)
class BinnedMatrix:
    """Integer-coded design matrix plus the maps that produced it."""

    codes: np.ndarray  # (n_samples, n_features) int64
    bin_maps: tuple[BinMap, ...]

    @property
    def columns(self) -> tuple[str, ...]:
        return tuple(bm.feature for bm in self.bin_maps)

    @property
    def n_samples(self) -> int:
        return int(self.codes.shape[0])

    @property
    def total_bins(self) -> np.ndarray:
        return np.array([bm.total_bins for bm in self.bin_maps], dtype=np.int64)


def _fmt(x: float) -> str:
    return f"{x:.6g}"


# --- table access -----------------------------------------------------------


def table_items(table) -> list[tuple[str, list]]:
    """Normalize a table-like object to [(name, values)] with equal lengths."""
    if not hasattr(table, "items"):
        raise DataError(
            "expected a mapping of column name -> values (dict or DataFrame), "
            f"got {type(table).__name__}"
        )
    out = []
    for name, vals in table.items():
        out.append((str(name), list(vals)))
    if out:
        n = len(out[0][1])
        for name, vals in out:
            if len(vals) != n:
                raise DataError(
                    f"column {name!r} has {len(vals)} values, expected {n}"
                )
    return out


def _parse_numeric(values: list) -> np.ndarray | None:
    """Parse a column to float64 with NaN for missing, or None if non-numeric."""
    try:
        arr = np.asarray(values)
    except Exception:
        arr = np.asarray(values, dtype=object)
    if arr.dtype.kind in "fiub":
        return arr.astype(np.float64)
    out = np.empty(len(values), dtype=np.float64)
    for i, v in enumerate(values):
        if v is None:
            out[i] = np.nan
            continue
        if isinstance(v, str):
            tok = v.strip()
            if tok.lower() in MISSING_TOKENS:
                out[i] = np.nan
                continue
            try:
                out[i] = float(tok)
            except ValueError:
                return None
            continue
        try:
            out[i] = float(v)
        except (TypeError, ValueError):
            return None
    return out


def _first_bad_token(values: list) -> str:
    for v in values:
        if v is None or not isinstance(v, str):
            continue
        tok = v.strip()
        if tok.lower() in MISSING_TOKENS:
            continue
        try:
            float(tok)
        except ValueError:
            return tok
    return "?"


def _category_keys(values: list, numeric: np.ndarray | None) -> list:
    """Canonical per-row category keys; None marks missing."""
    if numeric is not None:
        return [None if math.isnan(x) else repr(x) for x in numeric.tolist()]
    keys = []
    for v in values:
        if v is None:
            keys.append(None)
            continue
        if isinstance(v, float) and math.isnan(v):
            keys.append(None)
            continue
        tok = str(v).strip()
        keys.append(None if tok.lower() in MISSING_TOKENS else tok)
    return keys


# --- schema -----------------------------------------------------------------


def infer_schema(table) -> list[FeatureSchema]:
    """Infer a kind for every column.

    A column is numeric iff every non-missing value parses as a float.
    Exactly two distinct non-missing values make a column binary; otherwise
    numeric columns are continuous and the rest categorical.
    """
    schema = []
    for name, vals in table_items(table):
        numeric = _parse_numeric(vals)
        if numeric is not None:
            nonmiss = numeric[~np.isnan(numeric)]
            if nonmiss.size == 0:
                raise DataError(f"column {name!r} has no non-missing values")
            distinct = np.unique(nonmiss).size
            kind = "binary" if distinct == 2 else "continuous"
        else:
            keys = [k for k in _category_keys(vals, None) if k is not None]
            if not keys:
                raise DataError(f"column {name!r} has no non-missing values")
            kind = "binary" if len(set(keys)) == 2 else "categorical"
        schema.append(FeatureSchema(name, kind))
    return schema


def apply_schema_override(
    schema: list[FeatureSchema], kinds: dict[str, str]
) -> list[FeatureSchema]:
    """Replace inferred kinds with user-supplied ones."""
    by_name = {fs.name: fs for fs in schema}
    for name, kind in kinds.items():
        if name not in by_name:
            raise ConfigError(f"schema override names unknown column {name!r}")
        if kind not in KINDS:
            raise ConfigError(
                f"unknown kind {kind!r} for column {name!r}; expected one of {KINDS}"
            )
    return [
        FeatureSchema(fs.name, kinds.get(fs.name, fs.kind)) for fs in schema
    ]


# --- binning ----------------------------------------------------------------


def default_min_samples_per_bin(n_samples: int) -> int:
    return min(50, math.ceil(0.01 * n_samples))


def _continuous_edges(
    x: np.ndarray, max_bins: int, min_samples_per_bin: int
) -> tuple[float, ...]:
    qs = np.arange(1, max_bins) / max_bins
    edges = np.unique(np.quantile(x, qs))
    while edges.size > 0:
        idx = np.searchsorted(edges, x, side="left")
        counts = np.bincount(idx, minlength=edges.size + 1)
        b = int(np.argmin(counts))
        if counts[b] >= min_samples_per_bin:
            break
        # Merge the under-filled bin into its right neighbor; the last bin
        # merges left instead.
        drop = b - 1 if b == edges.size else b
        edges = np.delete(edges, drop)
    return tuple(float(e) for e in edges)


def fit_bins(
    table,
    schema: list[FeatureSchema],
    max_bins: int = 32,
    min_samples_per_bin: int | None = None,
) -> list[BinMap]:
    """Learn per-feature bin maps from training data.

    Continuous features get quantile edges at i/max_bins which are then
    merged until every bin holds at least ``min_samples_per_bin`` training
    values. Categorical and binary features get one bin per distinct value.
    """
    if max_bins < 2:
        raise ConfigError(f"max_bins must be >= 2, got {max_bins}")
    cols = dict(table_items(table))
    n = len(next(iter(cols.values()))) if cols else 0
    if n == 0:
        raise DataError("cannot fit bins on an empty table")
    if min_samples_per_bin is None:
        min_samples_per_bin = default_min_samples_per_bin(n)
    maps = []
    for fs in schema:
        if fs.name not in cols:
            raise DataError(f"schema column {fs.name!r} not present in table")
        vals = cols[fs.name]
        if fs.kind == "continuous":
            numeric = _parse_numeric(vals)
            if numeric is None:
                raise DataError(
                    f"column {fs.name!r} declared continuous but token "
                    f"{_first_bad_token(vals)!r} does not parse as a number"
                )
            x = numeric[~np.isnan(numeric)]
            if x.size == 0:
                raise DataError(f"column {fs.name!r} has no non-missing values")
            if not np.all(np.isfinite(x)):
                raise DataError(f"column {fs.name!r} contains non-finite values")
            if x.size < min_samples_per_bin:
                raise DataError(
                    f"column {fs.name!r} has {x.size} non-missing values, "
                    f"fewer than min_samples_per_bin={min_samples_per_bin}"
                )
            edges = _continuous_edges(x, max_bins, min_samples_per_bin)
            maps.append(BinMap(fs.name, fs.kind, edges=edges))
        elif fs.kind in ("categorical", "binary"):
            keys = [k for k in _category_keys(vals, _parse_numeric(vals)) if k is not None]
            if not keys:
                raise DataError(f"column {fs.name!r} has no non-missing values")
            cats = tuple(sorted(set(keys)))
            if fs.kind == "binary" and len(cats) != 2:
                raise DataError(
                    f"column {fs.name!r} declared binary but has {len(cats)} "
                    "distinct values"
                )
            maps.append(BinMap(fs.name, fs.kind, categories=cats))
        else:
            raise ConfigError(f"unknown kind {fs.kind!r} for column {fs.name!r}")
    return maps


def transform(table, bin_maps: list[BinMap]) -> BinnedMatrix:
    """Encode a table to bin indices using previously fitted maps.

    Missing values map to 0. Categories unseen during fitting also map to
    0; they carry no information the model was trained on.
    """
    cols = dict(table_items(table))
    lengths = {len(v) for v in cols.values()}
    n = lengths.pop() if lengths else 0
    codes = np.zeros((n, len(bin_maps)), dtype=np.int64)
    for j, bm in enumerate(bin_maps):
        if bm.feature not in cols:
            raise DataError(f"column {bm.feature!r} missing from table")
        vals = cols[bm.feature]
        if bm.kind == "continuous":
            numeric = _parse_numeric(vals)
            if numeric is None:
                raise DataError(
                    f"column {bm.feature!r} is continuous but token "
                    f"{_first_bad_token(vals)!r} does not parse as a number"
                )
            if np.any(np.isinf(numeric)):
                raise DataError(f"column {bm.feature!r} contains non-finite values")
            miss = np.isnan(numeric)
            edges = np.asarray(bm.edges, dtype=np.float64)
            idx = 1 + np.searchsorted(edges, np.where(miss, 0.0, numeric), side="left")
            codes[:, j] = np.where(miss, 0, idx)
        else:
            lookup = {c: i + 1 for i, c in enumerate(bm.categories)}
            keys = _category_keys(vals, _parse_numeric(vals))
            codes[:, j] = [0 if k is None else lookup.get(k, 0) for k in keys]
    return BinnedMatrix(codes=codes, bin_maps=tuple(bin_maps))


# --- validation folds -------------------------------------------------------


def split_folds(
    n_samples: int, n_val_splits: int, seed: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Deterministic (train_idx, val_idx) pairs with disjoint validation folds.

    Validation folds partition range(n_samples); their sizes differ by at
    most one. The same (n_samples, n_val_splits, seed) always yields the
    same folds.
    """
    if n_val_splits < 2:
        raise ConfigError(f"n_val_splits must be >= 2, got {n_val_splits}")
    if n_val_splits > n_samples:
        raise DataError(
            f"n_val_splits={n_val_splits} exceeds n_samples={n_samples}"
        )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_samples)
    parts = np.array_split(perm, n_val_splits)
    folds = []
    for i, part in enumerate(parts):
        val = np.sort(part)
        train = np.sort(np.concatenate([p for k, p in enumerate(parts) if k != i]))
        folds.append((train, val))
    return folds


# --- CSV --------------------------------------------------------------------


def read_csv(path) -> dict[str, list[str]]:
    """Read an RFC-4180 CSV into an ordered column dict of raw strings."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = rows[0]
    seen = set()
    for name in header:
        if name in seen:
            raise DataError(f"{path}: duplicate column name {name!r}")
        seen.add(name)
    cols: dict[str, list[str]] = {name: [] for name in header}
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(
                f"{path}: row {r} has {len(row)} cells, expected {len(header)}"
            )
        for name, cell in zip(header, row):
            cols[name].append(cell)
    return cols
