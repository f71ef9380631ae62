"""Table ingestion and column profiling: CSV reading, per-column statistics,
and the bottom-k min-hash sketch used to estimate value containment.
"""

from __future__ import annotations

import csv
import heapq
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from threading import Lock

from .norm import canonical_value, hash64, normalize

logger = logging.getLogger(__name__)

SKETCH_SLOTS = 128
# Sentinel for unused slots when a column has fewer distinct values than slots.
EMPTY_SLOT = (1 << 64) - 1

ColumnRef = tuple[str, str]  # (table id, column name as written in the header)


class CorpusError(Exception):
    """Fatal ingestion problem (unreadable corpus, zero parseable tables)."""


@dataclass(frozen=True)
class Table:
    id: str
    name: str
    source_path: str
    columns: tuple[str, ...]
    row_count: int


@dataclass(frozen=True)
class ColumnSketch:
    """Bottom-k min-hash signature: the k smallest 64-bit hashes of the
    column's distinct canonical values. Fixed slot count; unused slots hold
    the EMPTY_SLOT sentinel so the stored length is a build-time constant.
    """

    slots: tuple[int, ...]
    distinct_count: int

    @property
    def values(self) -> tuple[int, ...]:
        if self.distinct_count >= SKETCH_SLOTS:
            return self.slots
        return self.slots[: self.distinct_count]

    def threshold(self) -> int:
        """Hash bound below which this sketch has seen every value."""
        if self.distinct_count < SKETCH_SLOTS:
            return EMPTY_SLOT
        return self.slots[-1]


def build_sketch(distinct_hashes, distinct_count: int | None = None, seed: int = 0) -> ColumnSketch:
    hashes = list(distinct_hashes)
    count = distinct_count if distinct_count is not None else len(hashes)
    smallest = heapq.nsmallest(SKETCH_SLOTS, hashes)
    slots = tuple(smallest) + (EMPTY_SLOT,) * (SKETCH_SLOTS - len(smallest))
    return ColumnSketch(slots=slots, distinct_count=count)


def estimate_containment(a: ColumnSketch, b: ColumnSketch) -> float:
    """Estimated fraction of a's distinct values present in b.

    Both sketches share one hash function, so hashes below the smaller of the
    two thresholds are a conditional random sample of each set that supports
    exact membership tests. When both columns have fewer distinct values than
    slots the estimate is exact.
    """
    if a.distinct_count == 0:
        return 0.0
    theta = min(a.threshold(), b.threshold())
    a_below = [h for h in a.values if h <= theta]
    if not a_below:
        return 0.0
    b_below = {h for h in b.values if h <= theta}
    inside = sum(1 for h in a_below if h in b_below)
    return inside / len(a_below)


@dataclass(frozen=True)
class ColumnProfile:
    column_ref: ColumnRef
    total_count: int
    distinct_count: int
    uniqueness: float
    inferred_type: str  # text | integer | real
    value_sketch: ColumnSketch


@dataclass(frozen=True)
class InclusionDependency:
    """Approximate inclusion: values of `from_ref` (mostly) appear in `to_ref`."""

    from_ref: ColumnRef
    to_ref: ColumnRef
    containment: float

    @property
    def edge_id(self) -> str:
        a, b = sorted([self.from_ref, self.to_ref])
        return f"{a[0]}.{a[1]}<->{b[0]}.{b[1]}"

    def tables(self) -> tuple[str, str]:
        return self.from_ref[0], self.to_ref[0]


def infer_type(cells) -> str:
    saw_value = False
    all_int = True
    all_real = True
    for cell in cells:
        s = cell.strip()
        if not s:
            continue
        saw_value = True
        if all_int:
            try:
                int(s)
            except ValueError:
                all_int = False
        if not all_int and all_real:
            try:
                float(s)
            except ValueError:
                all_real = False
                break
    if not saw_value:
        return "text"
    if all_int:
        return "integer"
    if all_real:
        return "real"
    return "text"


def profile_column(values, column_ref: ColumnRef = ("", ""), seed: int = 0) -> ColumnProfile:
    """Counts, uniqueness ratio, inferred type, and sketch for one column."""
    values = list(values)
    total = len(values)
    distinct_hashes = {hash64(canonical_value(v), seed) for v in values}
    distinct = len(distinct_hashes)
    uniqueness = distinct / total if total else 0.0
    return ColumnProfile(
        column_ref=column_ref,
        total_count=total,
        distinct_count=distinct,
        uniqueness=uniqueness,
        inferred_type=infer_type(values),
        value_sketch=build_sketch(distinct_hashes, distinct, seed),
    )


@dataclass
class LoadedTable:
    table_id: str
    columns: list[str]
    rows: list[tuple[str, ...]]

    def column_index(self, name: str) -> int:
        target = normalize(name)
        for i, col in enumerate(self.columns):
            if normalize(col) == target:
                return i
        raise KeyError(f"table {self.table_id!r} has no column {name!r}")

    def column_values(self, name: str) -> list[str]:
        idx = self.column_index(name)
        return [row[idx] for row in self.rows]

    def byte_size(self) -> int:
        return sum(sum(len(c) for c in row) + 16 * len(row) for row in self.rows)


def read_csv_table(path: Path, table_id: str | None = None) -> LoadedTable:
    """Read one UTF-8 CSV file (header row mandatory, RFC-4180 quoting).

    Short rows are padded with empty cells; long rows are truncated to the
    header width. Duplicate normalized header names are a hard error.
    """
    path = Path(path)
    tid = table_id if table_id is not None else path.stem
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CorpusError(f"{path}: empty file (header row is mandatory)")
        columns = [c.strip() for c in header]
        if any(not c for c in columns):
            raise CorpusError(f"{path}: blank column name in header")
        seen = set()
        for c in columns:
            n = normalize(c)
            if n in seen:
                raise CorpusError(f"{path}: duplicate column name {c!r} after normalization")
            seen.add(n)
        width = len(columns)
        rows = []
        for raw in reader:
            if len(raw) < width:
                raw = raw + [""] * (width - len(raw))
            elif len(raw) > width:
                raw = raw[:width]
            rows.append(tuple(raw))
    return LoadedTable(table_id=tid, columns=columns, rows=rows)


@dataclass
class TableStore:
    """LRU cache of loaded tables with a byte budget, shared between the
    discovery index (value-search verification) and the join engine.
    Eviction is strictly by recency. Thread-safe for concurrent readers.
    """

    sources: dict[str, Path] = field(default_factory=dict)
    byte_budget: int = 256 * 1024 * 1024
    loads: int = 0  # number of physical file reads (cache misses)
    hits: int = 0

    def __post_init__(self):
        self._cache: OrderedDict[str, LoadedTable] = OrderedDict()
        self._bytes: dict[str, int] = {}
        self._lock = Lock()

    def register(self, table_id: str, path: Path) -> None:
        self.sources[table_id] = Path(path)

    def get(self, table_id: str) -> LoadedTable:
        with self._lock:
            cached = self._cache.get(table_id)
            if cached is not None:
                self._cache.move_to_end(table_id)
                self.hits += 1
                return cached
        if table_id not in self.sources:
            raise KeyError(f"unknown table id {table_id!r}")
        loaded = read_csv_table(self.sources[table_id], table_id)
        size = loaded.byte_size()
        with self._lock:
            self.loads += 1
            self._cache[table_id] = loaded
            self._bytes[table_id] = size
            total = sum(self._bytes.values())
            while total > self.byte_budget and len(self._cache) > 1:
                evicted, _ = self._cache.popitem(last=False)
                total -= self._bytes.pop(evicted)
        return loaded

    def cached_ids(self) -> list[str]:
        with self._lock:
            return list(self._cache)
