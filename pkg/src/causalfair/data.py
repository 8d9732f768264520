"""Dataset and schema model for the standard fairness model (SFM).

A schema projects every column of a table onto one of four roles: the binary
protected attribute ``X``, confounders ``Z``, mediators ``W`` or ignored.
Datasets are immutable; every transformation returns a new :class:`Dataset`.

Categorical columns are stored as integer codes into a frozen level tuple,
continuous columns as finite float64 arrays.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

ROLES = ("protected", "confounder", "mediator", "ignored")
KINDS = ("categorical", "continuous")

DEFAULT_BINS = 10
SMOOTHING_ALPHA = 1.0
SMOOTHING_THRESHOLD = 5

MISSING_TOKENS = frozenset({"", "NA", "N/A", "NaN", "nan", "?", "null", "NULL", "None"})


class SchemaError(ValueError):
    """Raised when a schema or a dataset violates the SFM column contract."""


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    role: str
    kind: str

    def __post_init__(self):
        if not self.name:
            raise SchemaError("column name must be non-empty")
        if self.role not in ROLES:
            raise SchemaError(f"column {self.name!r}: unknown role {self.role!r}")
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class SfmSchema:
    """Role assignment of columns onto (X, Z, W) plus the explicit x0/x1 labels."""

    columns: tuple[ColumnSpec, ...]
    x0_label: str
    x1_label: str
    bins: int = DEFAULT_BINS

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names in schema")
        protected = [c for c in self.columns if c.role == "protected"]
        if len(protected) != 1:
            raise SchemaError(f"exactly one protected column required, got {len(protected)}")
        if protected[0].kind != "categorical":
            raise SchemaError(f"protected column {protected[0].name!r} must be categorical")
        if str(self.x0_label) == str(self.x1_label):
            raise SchemaError("x0 and x1 labels must differ")
        object.__setattr__(self, "x0_label", str(self.x0_label))
        object.__setattr__(self, "x1_label", str(self.x1_label))
        if int(self.bins) < 1:
            raise SchemaError("bins must be >= 1")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    @property
    def protected(self) -> str:
        return next(c.name for c in self.columns if c.role == "protected")

    @property
    def confounders(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns if c.role == "confounder")

    @property
    def mediators(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns if c.role == "mediator")

    def column(self, name: str) -> ColumnSpec:
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaError(f"unknown column {name!r}")

    def kind(self, name: str) -> str:
        return self.column(name).kind

    def swapped(self) -> "SfmSchema":
        """Same roles with the baseline and comparison levels exchanged."""
        return SfmSchema(self.columns, self.x1_label, self.x0_label, self.bins)

    def to_dict(self) -> dict:
        return {
            "columns": [{"name": c.name, "role": c.role, "kind": c.kind} for c in self.columns],
            "x0": self.x0_label,
            "x1": self.x1_label,
            "bins": self.bins,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "SfmSchema":
        try:
            cols = tuple(ColumnSpec(c["name"], c["role"], c["kind"]) for c in doc["columns"])
            return cls(cols, doc["x0"], doc["x1"], int(doc.get("bins", DEFAULT_BINS)))
        except KeyError as exc:
            raise SchemaError(f"schema document missing field {exc}") from None


def load_schema(path) -> SfmSchema:
    with open(path, encoding="utf-8") as fh:
        return SfmSchema.from_dict(json.load(fh))


def save_schema(schema: SfmSchema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_dict(), fh, indent=2)
        fh.write("\n")


@dataclass(frozen=True)
class EffectFlags:
    """Which effects the pipeline minimises: (NDE, NIE, SE)."""

    nde: bool = True
    nie: bool = True
    se: bool = True

    def __post_init__(self):
        for name in ("nde", "nie", "se"):
            object.__setattr__(self, name, bool(getattr(self, name)))

    @classmethod
    def parse(cls, text: str) -> "EffectFlags":
        """Accepts ``"1,1,0"``, ``"110"`` or ``"1 1 0"``."""
        bits = [b for b in text.replace(",", " ").split() if b]
        if len(bits) == 1 and len(bits[0]) == 3:
            bits = list(bits[0])
        if len(bits) != 3 or any(b not in ("0", "1") for b in bits):
            raise ValueError(f"flags must be three bits (NDE, NIE, SE), got {text!r}")
        return cls(*(b == "1" for b in bits))

    def as_tuple(self) -> tuple[int, int, int]:
        return int(self.nde), int(self.nie), int(self.se)

    def __str__(self):
        return ",".join(str(b) for b in self.as_tuple())


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable mixed-type table bound to an :class:`SfmSchema`.

    Use :meth:`from_values` to build one from raw labels/numbers; the
    constructor expects already-encoded columns.
    """

    schema: SfmSchema
    columns: Mapping[str, np.ndarray]
    levels: Mapping[str, tuple[str, ...]]
    order: tuple[str, ...]
    dropped: int = 0
    meta: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        cols = {}
        n = None
        for name in self.order:
            spec = self.schema.column(name)
            arr = np.asarray(self.columns[name])
            if spec.kind == "categorical":
                arr = arr.astype(np.int64, copy=False)
                m = len(self.levels[name])
                if arr.size and (arr.min() < 0 or arr.max() >= m):
                    raise SchemaError(f"column {name!r}: code outside level set")
            else:
                arr = arr.astype(np.float64, copy=False)
                if not np.all(np.isfinite(arr)):
                    raise SchemaError(f"column {name!r}: non-finite values")
            if n is None:
                n = arr.shape[0]
            elif arr.shape[0] != n:
                raise SchemaError("columns have unequal lengths")
            cols[name] = _freeze(arr)
        missing = [c.name for c in self.schema.columns if c.role != "ignored" and c.name not in cols]
        if missing:
            raise SchemaError(f"dataset lacks schema columns {missing}")
        prot = self.schema.protected
        if tuple(self.levels[prot]) != (self.schema.x0_label, self.schema.x1_label):
            raise SchemaError(
                f"protected column {prot!r} levels {tuple(self.levels[prot])} "
                f"do not match schema (x0, x1)"
            )
        object.__setattr__(self, "columns", MappingProxyType(cols))
        object.__setattr__(
            self, "levels", MappingProxyType({k: tuple(v) for k, v in self.levels.items() if k in cols})
        )
        object.__setattr__(self, "meta", MappingProxyType(dict(self.meta)))

    @classmethod
    def from_values(
        cls,
        schema: SfmSchema,
        values: Mapping[str, Sequence],
        levels: Mapping[str, Sequence[str]] | None = None,
        order: Sequence[str] | None = None,
        dropped: int = 0,
    ) -> "Dataset":
        """Encode raw labels (categorical) and numbers (continuous).

        Categorical level sets are frozen from the observed values unless
        given explicitly. The protected column must show exactly the two
        schema levels.
        """
        levels = dict(levels or {})
        order = tuple(order) if order is not None else tuple(n for n in schema.names if n in values)
        cols: dict[str, np.ndarray] = {}
        out_levels: dict[str, tuple[str, ...]] = {}
        for name in order:
            spec = schema.column(name)
            raw = values[name]
            if spec.kind == "continuous":
                cols[name] = np.asarray(raw, dtype=np.float64)
                continue
            labels = np.asarray([str(v) for v in raw], dtype=object)
            observed = set(labels.tolist())
            if spec.role == "protected":
                expected = (schema.x0_label, schema.x1_label)
                if levels.get(name) is None and observed != set(expected):
                    raise SchemaError(
                        f"protected column {name!r} must have exactly the levels "
                        f"{expected}, observed {sorted(observed)}"
                    )
                lv = expected
            else:
                lv = tuple(levels[name]) if levels.get(name) is not None else tuple(sorted(observed))
            unknown = observed - set(lv)
            if unknown:
                raise SchemaError(f"column {name!r}: values {sorted(unknown)} outside level set")
            index = {label: i for i, label in enumerate(lv)}
            cols[name] = np.fromiter((index[v] for v in labels), dtype=np.int64, count=len(labels))
            out_levels[name] = lv
        return cls(schema, cols, out_levels, order, dropped)

    @property
    def n(self) -> int:
        return int(self.columns[self.order[0]].shape[0]) if self.order else 0

    def __len__(self):
        return self.n

    def codes(self, name: str) -> np.ndarray:
        return self.columns[name]

    def values(self, name: str) -> np.ndarray:
        """Labels for categorical columns, floats for continuous ones."""
        arr = self.columns[name]
        if self.schema.kind(name) == "categorical":
            return np.asarray(self.levels[name], dtype=object)[arr]
        return arr

    @property
    def x(self) -> np.ndarray:
        """Protected attribute as 0 (x0) / 1 (x1)."""
        return self.columns[self.schema.protected]

    @property
    def rows(self) -> Iterator[dict]:
        names = self.order
        vals = [self.values(n) for n in names]
        for i in range(self.n):
            yield {n: v[i] for n, v in zip(names, vals)}

    def take(self, index) -> "Dataset":
        index = np.asarray(index)
        cols = {n: self.columns[n][index] for n in self.order}
        return Dataset(self.schema, cols, self.levels, self.order, self.dropped)

    def replace(self, **updates: np.ndarray) -> "Dataset":
        """New dataset with some encoded columns replaced (codes or floats)."""
        cols = dict(self.columns)
        for name, arr in updates.items():
            if name not in cols:
                raise SchemaError(f"unknown column {name!r}")
            cols[name] = arr
        return Dataset(self.schema, cols, self.levels, self.order, self.dropped)

    def with_schema(self, schema: SfmSchema) -> "Dataset":
        """Rebind to a schema with identical columns; handles an x0/x1 swap."""
        if schema.columns != self.schema.columns:
            raise SchemaError("schemas differ in columns")
        levels = dict(self.levels)
        cols = dict(self.columns)
        prot = schema.protected
        if (schema.x0_label, schema.x1_label) != tuple(levels[prot]):
            cols[prot] = 1 - cols[prot]
            levels[prot] = (schema.x0_label, schema.x1_label)
        return Dataset(schema, cols, levels, self.order, self.dropped)

    def equals(self, other: "Dataset") -> bool:
        if self.order != other.order or dict(self.levels) != dict(other.levels):
            return False
        return all(np.array_equal(self.columns[n], other.columns[n]) for n in self.order)


def _parse_cell(text: str, kind: str):
    text = text.strip()
    if text in MISSING_TOKENS:
        return None
    if kind == "categorical":
        return text
    try:
        val = float(text)
    except ValueError:
        return None
    return val if math.isfinite(val) else None


def load_dataset(path, schema: SfmSchema) -> Dataset:
    """Read a header-bearing UTF-8 CSV into a validated :class:`Dataset`.

    Rows with missing or unparseable cells are dropped (never imputed) and
    the count is logged and stored in ``Dataset.dropped``.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        known = set(schema.names)
        unassigned = [h for h in header if h not in known]
        if unassigned:
            raise SchemaError(f"{path}: columns without a schema role {unassigned}")
        missing = [c.name for c in schema.columns if c.role != "ignored" and c.name not in header]
        if missing:
            raise SchemaError(f"{path}: missing schema columns {missing}")
        kinds = [schema.kind(h) for h in header]
        values: dict[str, list] = {h: [] for h in header}
        dropped = 0
        bad_numeric = 0
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                dropped += 1
                log.warning("%s:%d: expected %d fields, got %d; row dropped", path, lineno, len(header), len(row))
                continue
            parsed = [_parse_cell(cell, kind) for cell, kind in zip(row, kinds)]
            if any(p is None for p in parsed):
                dropped += 1
                for cell, kind, p in zip(row, kinds, parsed):
                    if p is None and kind == "continuous" and cell.strip() not in MISSING_TOKENS:
                        bad_numeric += 1
                        log.warning("%s:%d: unparseable numeric cell %r; row dropped", path, lineno, cell)
                        break
                continue
            for h, p in zip(header, parsed):
                values[h].append(p)
    if dropped:
        log.warning("%s: dropped %d row(s) (%d with unparseable numbers)", path, dropped, bad_numeric)
    return Dataset.from_values(schema, values, order=header, dropped=dropped)


def _format_value(v, kind: str) -> str:
    return str(v) if kind == "categorical" else repr(float(v))


def export_dataset(d: Dataset, path) -> None:
    """Write ``d`` as CSV in its original header order.

    Continuous values use the shortest round-trip representation so a
    reload reproduces them bit-exactly.
    """
    cols = [d.values(n) for n in d.order]
    kinds = [d.schema.kind(n) for n in d.order]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(d.order)
        for i in range(d.n):
            w.writerow([_format_value(c[i], k) for c, k in zip(cols, kinds)])


# --- discretisation -----------------------------------------------------


def equal_frequency_edges(values: np.ndarray, bins: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot bin an empty column")
    return np.unique(np.quantile(values, np.linspace(0.0, 1.0, bins + 1)))


def bin_codes(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Bin index per value; values outside the edges land in the end bins."""
    if len(edges) < 2:
        return np.zeros(len(values), dtype=np.int64)
    return np.searchsorted(edges[1:-1], values, side="right").astype(np.int64)


def bin_labels(edges: np.ndarray) -> tuple[str, ...]:
    if len(edges) < 2:
        return (f"[{edges[0]:.6g}]",) if len(edges) else ("all",)
    out = []
    for i in range(len(edges) - 1):
        close = "]" if i == len(edges) - 2 else ")"
        out.append(f"[{edges[i]:.6g}, {edges[i + 1]:.6g}{close}")
    return tuple(out)


def discretize(d: Dataset, name: str, bins: int | None = None, edges: np.ndarray | None = None):
    """Cell codes and labels for one column.

    Categorical columns pass through; continuous columns are cut into
    equal-frequency bins (edges computed on ``d`` unless given).
    """
    if d.schema.kind(name) == "categorical":
        return d.codes(name), d.levels[name]
    if edges is None:
        edges = equal_frequency_edges(d.codes(name), bins or d.schema.bins)
    return bin_codes(d.codes(name), edges), bin_labels(edges)


def joint_cells(d: Dataset, names: Iterable[str], bins: int | None = None):
    """Joint cell id per row over several columns.

    Returns ``(ids, keys)`` where ``keys[i]`` is the tuple of per-column
    labels of cell ``i``. With no columns every row shares one cell.
    """
    names = list(names)
    if not names or d.n == 0:
        return np.zeros(d.n, dtype=np.int64), [()]
    codes, labels = zip(*(discretize(d, n, bins) for n in names))
    stacked = np.stack(codes, axis=1)
    uniq, ids = np.unique(stacked, axis=0, return_inverse=True)
    keys = [tuple(labels[j][c] for j, c in enumerate(row)) for row in uniq]
    return ids.reshape(-1).astype(np.int64), keys


# --- probability tables -------------------------------------------------


@dataclass(frozen=True)
class ProbTable:
    labels: tuple[str, ...]
    probs: np.ndarray
    count: int
    smoothed: bool = False

    def __getitem__(self, label: str) -> float:
        return float(self.probs[self.labels.index(label)])

    def as_dict(self) -> dict[str, float]:
        return {k: float(p) for k, p in zip(self.labels, self.probs)}


def smooth_counts(counts: np.ndarray, alpha: float = SMOOTHING_ALPHA, threshold: int = SMOOTHING_THRESHOLD):
    """Relative frequencies, Laplace-smoothed when the total is below ``threshold``."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total < threshold:
        return (counts + alpha) / (total + alpha * counts.size), True
    return counts / total, False


def empirical_marginal(d: Dataset, col: str, bins: int | None = None) -> ProbTable:
    if d.n == 0:
        raise ValueError("empirical_marginal on an empty dataset")
    codes, labels = discretize(d, col, bins)
    counts = np.bincount(codes, minlength=len(labels)).astype(np.float64)
    return ProbTable(tuple(labels), counts / counts.sum(), d.n)


def empirical_conditional(
    d: Dataset,
    target: str,
    given: Sequence[tuple[str, str]] = (),
    bins: int | None = None,
    alpha: float = SMOOTHING_ALPHA,
    threshold: int = SMOOTHING_THRESHOLD,
) -> ProbTable:
    """P(target | given) from frequencies; cells under ``threshold`` rows are smoothed.

    Conditioning levels of continuous columns are bin labels as produced by
    :func:`discretize`.
    """
    mask = np.ones(d.n, dtype=bool)
    for name, level in given:
        codes, labels = discretize(d, name, bins)
        if str(level) not in labels:
            raise SchemaError(f"{level!r} is not a level of {name!r}")
        mask &= codes == labels.index(str(level))
    codes, labels = discretize(d, target, bins)
    counts = np.bincount(codes[mask], minlength=len(labels))
    probs, smoothed = smooth_counts(counts, alpha, threshold)
    return ProbTable(tuple(labels), probs, int(mask.sum()), smoothed)
