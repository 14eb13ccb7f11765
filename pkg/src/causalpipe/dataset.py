"""Typed rectangular data with missing-value masks."""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "ColumnType",
    "Dataset",
    "DataError",
    "load_csv",
    "save_csv",
    "parse_schema",
    "read_schema",
    "rescale_outcome",
    "unscale_effect",
    "make_censoring",
    "MISSING_TOKENS",
]

MISSING_TOKENS = ("", "NA")
_TYPE_RE = re.compile(r"^(continuous|binary|categorical|ordinal)(?:\((\d+)\))?$")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class ColumnType:
    kind: str
    levels: int | None = None

    def __post_init__(self):
        if self.kind not in ("continuous", "binary", "categorical", "ordinal"):
            raise DataError(f"unknown column type {self.kind!r}")
        if self.kind == "binary" and self.levels not in (None, 2):
            raise DataError("binary columns have two levels")
        if self.kind in ("categorical", "ordinal") and (self.levels is None or self.levels < 2):
            raise DataError(f"{self.kind} needs a level count >= 2")

    @classmethod
    def parse(cls, text: str) -> "ColumnType":
        m = _TYPE_RE.match(text.strip())
        if not m:
            raise DataError(f"cannot parse column type {text!r}")
        kind, k = m.groups()
        return cls(kind, int(k) if k else None)

    @property
    def discrete(self) -> bool:
        return self.kind != "continuous"

    @property
    def n_levels(self) -> int | None:
        return 2 if self.kind == "binary" else self.levels

    def validate(self, values: np.ndarray, name: str = "") -> None:
        v = values[~np.isnan(values)]
        if self.kind == "continuous":
            if not np.all(np.isfinite(v)):
                raise DataError(f"column {name!r}: non-finite value")
            return
        k = self.n_levels
        if np.any(v != np.round(v)) or np.any(v < 0) or np.any(v > k - 1):
            raise DataError(f"column {name!r}: values must be integers in 0..{k - 1}")

    def __str__(self) -> str:
        return self.kind if self.kind in ("continuous", "binary") else f"{self.kind}({self.levels})"


CONTINUOUS = ColumnType("continuous")
BINARY = ColumnType("binary")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-typed table; missing cells are NaN.

    ``bounds`` records the original (min, max) of rescaled columns.
    """

    names: tuple[str, ...]
    types: tuple[ColumnType, ...]
    values: np.ndarray
    bounds: Mapping[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        names = tuple(self.names)
        types = tuple(self.types)
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim != 2:
            values = values.reshape(len(values), -1) if values.size else values.reshape(0, len(names))
        if len(set(names)) != len(names):
            raise DataError("duplicate column names")
        if len(types) != len(names) or values.shape[1] != len(names):
            raise DataError("names, types and values disagree in width")
        for j, (n, t) in enumerate(zip(names, types)):
            t.validate(values[:, j], n)
        for n, (lo, hi) in dict(self.bounds).items():
            if n not in names:
                raise DataError(f"bounds for unknown column {n!r}")
            col = values[:, names.index(n)]
            col = col[~np.isnan(col)]
            if col.size and (col.min() < 0 or col.max() > 1):
                raise DataError(f"rescaled column {n!r} leaves [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "types", types)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "bounds", dict(self.bounds))

    @classmethod
    def from_columns(cls, columns: Mapping[str, Sequence[float]], types: Mapping[str, ColumnType | str] | None = None):
        names = list(columns)
        arr = np.column_stack([np.asarray(columns[n], dtype=float) for n in names]) if names else np.zeros((0, 0))
        types = types or {}
        ts = []
        for j, n in enumerate(names):
            t = types.get(n, "auto")
            ts.append(_infer_type(arr[:, j]) if t == "auto" else (ColumnType.parse(t) if isinstance(t, str) else t))
        return cls(tuple(names), tuple(ts), arr)

    # -- access ------------------------------------------------------------
    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def __len__(self) -> int:
        return self.n_rows

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"unknown column {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.index(name)]

    def columns(self, names: Iterable[str]) -> np.ndarray:
        idx = [self.index(n) for n in names]
        return self.values[:, idx]

    def type_of(self, name: str) -> ColumnType:
        return self.types[self.index(name)]

    @property
    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.values)

    def missing_counts(self) -> dict[str, int]:
        counts = self.missing_mask.sum(axis=0)
        return {n: int(c) for n, c in zip(self.names, counts)}

    def has_missing(self, names: Iterable[str] | None = None) -> bool:
        if names is None:
            return bool(self.missing_mask.any())
        return bool(np.isnan(self.columns(list(names))).any())

    # -- transforms --------------------------------------------------------
    def take(self, rows) -> "Dataset":
        return Dataset(self.names, self.types, self.values[np.asarray(rows)], self.bounds)

    def select(self, names: Iterable[str]) -> "Dataset":
        names = list(names)
        return Dataset(
            tuple(names),
            tuple(self.type_of(n) for n in names),
            self.columns(names),
            {n: b for n, b in self.bounds.items() if n in names},
        )

    def with_column(self, name: str, values, ctype: ColumnType, bounds=None) -> "Dataset":
        """Replace ``name`` if present, else append it."""
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_rows,):
            values = np.broadcast_to(values, (self.n_rows,))
        new_bounds = dict(self.bounds)
        new_bounds.pop(name, None)
        if bounds is not None:
            new_bounds[name] = bounds
        if name in self.names:
            j = self.index(name)
            arr = self.values.copy()
            arr[:, j] = values
            types = list(self.types)
            types[j] = ctype
            return Dataset(self.names, tuple(types), arr, new_bounds)
        return Dataset(
            self.names + (name,),
            self.types + (ctype,),
            np.column_stack([self.values, values]),
            new_bounds,
        )

    def __repr__(self) -> str:
        cols = ", ".join(f"{n}:{t}" for n, t in zip(self.names, self.types))
        return f"Dataset(n_rows={self.n_rows}, columns=[{cols}])"


def _infer_type(col: np.ndarray) -> ColumnType:
    v = col[~np.isnan(col)]
    distinct = np.unique(v)
    if distinct.size <= 2 and np.all(np.isin(distinct, (0.0, 1.0))):
        return BINARY
    if (
        distinct.size <= 10
        and np.all(distinct == np.round(distinct))
        and np.all(distinct >= 0)
        and distinct.size
    ):
        k = int(distinct.max()) + 1
        return ColumnType("ordinal", max(k, 2))
    return CONTINUOUS


# ---------------------------------------------------------------------------
# CSV and schema files


def parse_schema(text: str) -> dict[str, str]:
    """Parse ``name=type`` lines. ``type`` may be ``auto``."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"schema line {lineno}: expected name=type")
        name, t = (s.strip() for s in line.split("=", 1))
        if t != "auto":
            ColumnType.parse(t)
        out[name] = t
    return out


def read_schema(path) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        return parse_schema(fh.read())


def load_csv(path, schema: Mapping[str, ColumnType | str] | str | None = "auto") -> Dataset:
    """Read a CSV file with a header row.

    Missing cells are empty or ``NA``. ``schema`` maps column names to types
    (or ``"auto"``); columns absent from a mapping are inferred.
    """
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header required") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise DataError(f"{path}: duplicate column names in header")
        rows = []
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {rowno} has {len(row)} cells, expected {len(header)}")
            parsed = []
            for name, cell in zip(header, row):
                cell = cell.strip()
                if cell in MISSING_TOKENS:
                    parsed.append(math.nan)
                    continue
                try:
                    x = float(cell)
                except ValueError:
                    raise DataError(f"{path}: row {rowno}, column {name!r}: non-numeric cell {cell!r}") from None
                if not math.isfinite(x):
                    raise DataError(f"{path}: row {rowno}, column {name!r}: non-finite cell {cell!r}")
                parsed.append(x)
            rows.append(parsed)
    arr = np.array(rows, dtype=float).reshape(len(rows), len(header))

    if schema is None or schema == "auto":
        schema = {}
    unknown = set(schema) - set(header)
    if unknown:
        raise DataError(f"schema names unknown columns: {sorted(unknown)}")
    types = []
    for j, name in enumerate(header):
        t = schema.get(name, "auto")
        if t == "auto":
            types.append(_infer_type(arr[:, j]))
        else:
            types.append(ColumnType.parse(t) if isinstance(t, str) else t)
    return Dataset(tuple(header), tuple(types), arr)


def _format_cell(x: float, ctype: ColumnType) -> str:
    if math.isnan(x):
        return "NA"
    if ctype.discrete:
        return str(int(x))
    return repr(float(x))


def save_csv(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ds.names)
        for row in ds.values:
            writer.writerow([_format_cell(x, t) for x, t in zip(row, ds.types)])


# ---------------------------------------------------------------------------
# outcome scaling and censoring


def rescale_outcome(ds: Dataset, col: str) -> Dataset:
    """Min-max rescale a continuous or ordinal column to [0, 1], recording its bounds.

    The result is typed continuous.
    """
    ctype = ds.type_of(col)
    if ctype.kind not in ("continuous", "ordinal"):
        raise DataError(f"column {col!r} is {ctype}, expected continuous or ordinal")
    y = ds.column(col)
    if np.isnan(y).any():
        raise DataError(f"column {col!r} has missing values; handle censoring first")
    lo, hi = float(y.min()), float(y.max())
    if not hi > lo:
        raise DataError(f"column {col!r} is constant")
    scaled = np.clip((y - lo) / (hi - lo), 0.0, 1.0)
    return ds.with_column(col, scaled, CONTINUOUS, bounds=(lo, hi))


def unscale_effect(bounds: tuple[float, float], delta: float) -> float:
    """Convert a difference on the [0, 1] scale back to original units."""
    lo, hi = bounds
    return delta * (hi - lo)


def make_censoring(ds: Dataset, col: str) -> Dataset:
    """Impute ``col`` and add the indicator ``Q_<col>`` (1 = observed).

    Continuous columns are imputed with the observed mean, ordinal columns with
    the rounded mean, binary and categorical columns with the observed mode.
    """
    y = ds.column(col)
    miss = np.isnan(y)
    if not miss.any():
        raise DataError(f"column {col!r} has no missing values")
    if miss.all():
        raise DataError(f"column {col!r} is entirely missing")
    ctype = ds.type_of(col)
    obs = y[~miss]
    if ctype.kind == "continuous":
        fill = float(obs.mean())
    elif ctype.kind == "ordinal":
        fill = float(np.floor(obs.mean() + 0.5))
    else:
        vals, counts = np.unique(obs, return_counts=True)
        fill = float(vals[np.argmax(counts)])
    imputed = np.where(miss, fill, y)
    qname = f"Q_{col}"
    if qname in ds.names:
        raise DataError(f"column {qname!r} already exists")
    out = ds.with_column(col, imputed, ctype, bounds=ds.bounds.get(col))
    return out.with_column(qname, (~miss).astype(float), BINARY)
