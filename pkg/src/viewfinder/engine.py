"""Ad-hoc join engine: materializes join graphs into candidate views.

Joins run leaf-to-inner over the graph, preferring the smallest join when
observed cardinalities are known. Each two-way join picks an in-memory hash
join or a partitioned external (grace-style) join based on an estimate from
a consistent sample, and the observed output cardinality is logged for later
ordering decisions. Consistent sampling keeps sampled views comparable across
join graphs by selecting join-key values with globally minimal hashes.
"""

from __future__ import annotations

import logging
import os
import pickle
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from threading import Lock

from .catalog import LoadedTable, TableStore, infer_type
from .norm import canonical_value, normalize, sample_hash64
from .search import ConstraintSet, JoinEdgeSpec, JoinGraph

logger = logging.getLogger(__name__)

DEFAULT_MEMORY_BUDGET = 512 * 1024 * 1024
DEFAULT_SAMPLE_K = 1000
EXTERNAL_PARTITIONS = 64
MAX_REPARTITION_DEPTH = 2
ROW_WIDTH_SAMPLE = 1000
_LEN = struct.Struct("<I")


class EngineError(Exception):
    pass


class JoinTypeMismatch(EngineError):
    """Join key columns have incompatible inferred types."""


@dataclass
class EngineConfig:
    sample_k: int = DEFAULT_SAMPLE_K
    memory_budget: int = DEFAULT_MEMORY_BUDGET
    include_constraint_keys: bool = False
    temp_dir: str | None = None
    estimate_fraction: float = 0.1

    def validate(self) -> None:
        if self.sample_k < 1:
            raise ValueError("sample_k must be >= 1")
        if self.memory_budget < 1:
            raise ValueError("memory_budget must be positive")
        if not (0.0 < self.estimate_fraction <= 1.0):
            raise ValueError("estimate_fraction must be in (0, 1]")


@dataclass
class JoinStats:
    """Append-only log of observed join output cardinalities within a run."""

    entries: list[dict] = field(default_factory=list)
    _latest: dict = field(default_factory=dict)
    _lock: Lock = field(default_factory=Lock, repr=False)

    @staticmethod
    def key(left_table: str, right_table: str, left_col: str, right_col: str):
        return tuple(sorted([(left_table, left_col), (right_table, right_col)]))

    def record(self, key, cardinality: int, strategy: str, spill_files: int = 0) -> None:
        with self._lock:
            entry = {
                "key": key,
                "cardinality": cardinality,
                "strategy": strategy,
                "spill_files": spill_files,
            }
            self.entries.append(entry)
            self._latest[key] = entry

    def estimate(self, key) -> int | None:
        with self._lock:
            entry = self._latest.get(key)
            return entry["cardinality"] if entry else None

    def last_entry(self) -> dict | None:
        with self._lock:
            return self.entries[-1] if self.entries else None


@dataclass
class DeadEndCache:
    """Join edges known not to materialize. An entry for signature "" means
    the pair's equi-join itself was observed empty; a non-empty signature
    means the single-edge join missed that exact set of value constraints.
    Entries are only added after a real failed materialization attempt.
    """

    _entries: set = field(default_factory=set)
    _lock: Lock = field(default_factory=Lock, repr=False)

    def add(self, edge: JoinEdgeSpec, signature: str) -> None:
        with self._lock:
            self._entries.add(edge.as_tuple() + (signature,))

    def blocks(self, edges, signature: str) -> bool:
        with self._lock:
            for e in edges:
                t = e.as_tuple()
                if t + ("",) in self._entries or t + (signature,) in self._entries:
                    return True
        return False

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


@dataclass
class EngineCaches:
    tables: TableStore
    deadends: DeadEndCache = field(default_factory=DeadEndCache)
    joinpaths: dict = field(default_factory=dict)


@dataclass
class ViewProvenance:
    graph: JoinGraph
    join_cardinalities: list[tuple[tuple, int]] = field(default_factory=list)
    attribute_sources: dict[str, tuple[str, str]] = field(default_factory=dict)
    sampled: bool = False

    def to_dict(self) -> dict:
        return {
            "group_tables": list(self.graph.group_tables),
            "nodes": list(self.graph.nodes),
            "edges": [list(e.as_tuple()) for e in self.graph.edges],
            "join_cardinalities": [
                {"edge": list(edge), "rows": rows} for edge, rows in self.join_cardinalities
            ],
            "attribute_sources": {
                a: list(src) for a, src in sorted(self.attribute_sources.items())
            },
            "sampled": self.sampled,
        }


@dataclass
class CandidateView:
    view_id: str
    schema: tuple[str, ...]
    rows: list[tuple[str, ...]]
    provenance: ViewProvenance | None = None
    sampled: bool = False
    fulfilled: ConstraintSet | None = None

    def row_count(self) -> int:
        return len(self.rows)


@dataclass
class Relation:
    """Intermediate join operand: qualified column names plus rows."""

    columns: list[str]
    rows: list[tuple[str, ...]]
    tables: set[str]

    @staticmethod
    def from_table(loaded: LoadedTable) -> "Relation":
        cols = [f"{loaded.table_id}\x1f{c}" for c in loaded.columns]
        return Relation(columns=cols, rows=list(loaded.rows), tables={loaded.table_id})

    def column_pos(self, table: str, column: str) -> int:
        target = f"{table}\x1f{column}"
        try:
            return self.columns.index(target)
        except ValueError:
            raise KeyError(f"relation has no column {table}.{column}")

    def byte_size(self) -> int:
        return sum(sum(len(c) for c in row) + 16 * len(row) for row in self.rows)


# ---------------------------------------------------------------------------
# Consistent sampling
# ---------------------------------------------------------------------------


def top_k_hash_keys(values, k: int) -> set[str]:
    """The canonical key values whose hashes are the K smallest distinct
    hashes. The same value set always selects the same keys, regardless of
    which table it came from."""
    distinct = {canonical_value(v) for v in values}
    distinct.discard("")
    ranked = sorted(distinct, key=lambda v: (sample_hash64(v), v))
    return set(ranked[:k])


def consistent_sample(rows, key_idx: int, k: int) -> list:
    """Rows whose join-attribute value ranks within the K minimum hashes."""
    if k < 1:
        raise ValueError("K must be >= 1")
    keep = top_k_hash_keys((row[key_idx] for row in rows), k)
    return [row for row in rows if canonical_value(row[key_idx]) in keep]


def sample_table(loaded: LoadedTable, join_attr: str, k: int) -> list[tuple[str, ...]]:
    return consistent_sample(loaded.rows, loaded.column_index(join_attr), k)


# ---------------------------------------------------------------------------
# Two-way joins
# ---------------------------------------------------------------------------


def _mean_row_width(rows) -> float:
    sample = rows[:ROW_WIDTH_SAMPLE]
    if not sample:
        return 0.0
    return sum(sum(len(c) for c in row) + 16 * len(row) for row in sample) / len(sample)


def estimate_join_cardinality(
    left_rows,
    right_rows,
    left_idx: int,
    right_idx: int,
    sample_fraction: float,
) -> tuple[int, int]:
    """Estimated (rows, bytes) of the full join, from joining a consistent
    sample of the left side against the whole right side and scaling by the
    sampled fraction of the left side's distinct keys."""
    if not (0.0 < sample_fraction <= 1.0):
        raise ValueError("sample_fraction must be in (0, 1]")
    distinct = {canonical_value(r[left_idx]) for r in left_rows}
    distinct.discard("")
    if not distinct:
        return 0, 0
    k = max(1, round(len(distinct) * sample_fraction))
    sample = consistent_sample(left_rows, left_idx, k)
    joined = _hash_join_rows(sample, right_rows, left_idx, right_idx)
    scale = len(distinct) / k
    est_rows = int(round(len(joined) * scale))
    width = _mean_row_width(joined)
    if width == 0.0 and (left_rows or right_rows):
        width = _mean_row_width(left_rows) + _mean_row_width(right_rows)
    return est_rows, int(est_rows * width)


def _hash_join_rows(left_rows, right_rows, left_idx, right_idx) -> list[tuple[str, ...]]:
    """In-memory equi-join; builds on the smaller input. Empty keys never match."""
    build_left = len(left_rows) <= len(right_rows)
    build_rows, probe_rows = (left_rows, right_rows) if build_left else (right_rows, left_rows)
    build_idx, probe_idx = (left_idx, right_idx) if build_left else (right_idx, left_idx)
    table: dict[str, list] = {}
    for row in build_rows:
        key = canonical_value(row[build_idx])
        if not key:
            continue
        table.setdefault(key, []).append(row)
    out = []
    if build_left:
        for prow in probe_rows:
            key = canonical_value(prow[probe_idx])
            if not key:
                continue
            for brow in table.get(key, ()):
                out.append(brow + prow)
    else:
        for prow in probe_rows:
            key = canonical_value(prow[probe_idx])
            if not key:
                continue
            for brow in table.get(key, ()):
                out.append(prow + brow)
    return out


def _spill_partitions(rows, key_idx, n_parts, salt, directory, tag) -> list[Path]:
    paths = [Path(directory) / f"{tag}-{p:03d}.part" for p in range(n_parts)]
    handles = [open(p, "wb") for p in paths]
    try:
        for row in rows:
            key = canonical_value(row[key_idx])
            if not key:
                continue
            part = sample_hash64(key, salt) % n_parts
            payload = pickle.dumps(row, protocol=4)
            handles[part].write(_LEN.pack(len(payload)))
            handles[part].write(payload)
    finally:
        for h in handles:
            h.close()
    return paths


def _read_partition(path: Path) -> list:
    rows = []
    with open(path, "rb") as fh:
        while True:
            header = fh.read(_LEN.size)
            if not header:
                break
            (length,) = _LEN.unpack(header)
            rows.append(pickle.loads(fh.read(length)))
    return rows


def _external_join_rows(
    left_rows,
    right_rows,
    left_idx,
    right_idx,
    budget: int,
    temp_dir: str | None,
    depth: int = 0,
    salt: int = 0,
    spill_observer: dict | None = None,
) -> list[tuple[str, ...]]:
    """Grace-style partitioned join: both inputs hash-partition to disk as
    length-prefixed binary rows, then partitions join pairwise in memory.
    Oversized partitions repartition once with a different salt; past the
    recursion limit they fall back to block-wise probing, which is correct
    at any size."""
    out: list[tuple[str, ...]] = []
    with tempfile.TemporaryDirectory(prefix="vf-join-", dir=temp_dir) as workdir:
        try:
            left_parts = _spill_partitions(
                left_rows, left_idx, EXTERNAL_PARTITIONS, salt, workdir, "l"
            )
            right_parts = _spill_partitions(
                right_rows, right_idx, EXTERNAL_PARTITIONS, salt, workdir, "r"
            )
        except OSError as exc:
            raise EngineError(f"spill failed (disk full?): {exc}") from exc
        if spill_observer is not None:
            files = os.listdir(workdir)
            spill_observer["files"] = spill_observer.get("files", 0) + len(files)
            spill_observer["bytes"] = spill_observer.get("bytes", 0) + sum(
                os.path.getsize(os.path.join(workdir, f)) for f in files
            )
        for lp, rp in zip(left_parts, right_parts):
            lrows = _read_partition(lp)
            if not lrows:
                continue
            rrows = _read_partition(rp)
            if not rrows:
                continue
            part_bytes = sum(sum(len(c) for c in r) + 16 * len(r) for r in lrows)
            if part_bytes > budget and depth + 1 < MAX_REPARTITION_DEPTH:
                out.extend(
                    _external_join_rows(
                        lrows,
                        rrows,
                        left_idx,
                        right_idx,
                        budget,
                        temp_dir,
                        depth + 1,
                        salt + 1,
                        spill_observer,
                    )
                )
            elif part_bytes > budget:
                out.extend(_block_join(lrows, rrows, left_idx, right_idx, budget))
            else:
                out.extend(_hash_join_rows(lrows, rrows, left_idx, right_idx))
    return out


def _block_join(left_rows, right_rows, left_idx, right_idx, budget) -> list:
    out = []
    block = max(1, int(budget / max(1.0, _mean_row_width(left_rows))))
    for start in range(0, len(left_rows), block):
        out.extend(
            _hash_join_rows(left_rows[start : start + block], right_rows, left_idx, right_idx)
        )
    return out


def join_two(
    left: Relation,
    right: Relation,
    spec: JoinEdgeSpec,
    stats: JoinStats,
    config: EngineConfig | None = None,
    strategy: str | None = None,
) -> Relation:
    """Join two relations on an edge spec, choosing the strategy from an
    estimated output size unless one is forced. Records the observed output
    cardinality in the stats log."""
    config = config or EngineConfig()
    if spec.left_table in left.tables:
        left_idx = left.column_pos(spec.left_table, spec.left_column)
        right_idx = right.column_pos(spec.right_table, spec.right_column)
    else:
        left_idx = left.column_pos(spec.right_table, spec.right_column)
        right_idx = right.column_pos(spec.left_table, spec.left_column)

    _check_join_types(left, right, left_idx, right_idx, spec)

    chosen = strategy
    if chosen is None:
        _, est_bytes = estimate_join_cardinality(
            left.rows, right.rows, left_idx, right_idx, config.estimate_fraction
        )
        chosen = "memory" if est_bytes <= config.memory_budget else "external"

    spill_observer: dict = {}
    if chosen == "memory":
        rows = _hash_join_rows(left.rows, right.rows, left_idx, right_idx)
    elif chosen == "external":
        rows = _external_join_rows(
            left.rows,
            right.rows,
            left_idx,
            right_idx,
            config.memory_budget,
            config.temp_dir,
            spill_observer=spill_observer,
        )
    else:
        raise ValueError(f"unknown join strategy {chosen!r}")

    key = JoinStats.key(spec.left_table, spec.right_table, spec.left_column, spec.right_column)
    stats.record(key, len(rows), chosen, spill_files=spill_observer.get("files", 0))
    return Relation(
        columns=left.columns + right.columns,
        rows=rows,
        tables=left.tables | right.tables,
    )


def _check_join_types(left, right, left_idx, right_idx, spec) -> None:
    lt = infer_type(r[left_idx] for r in left.rows[:ROW_WIDTH_SAMPLE])
    rt = infer_type(r[right_idx] for r in right.rows[:ROW_WIDTH_SAMPLE])
    numeric = {"integer", "real"}
    if (lt in numeric) != (rt in numeric) and left.rows and right.rows:
        raise JoinTypeMismatch(
            f"join {spec.as_tuple()}: {lt} column against {rt} column"
        )


# ---------------------------------------------------------------------------
# Join-graph materialization
# ---------------------------------------------------------------------------


def _filter_rows_equal(rel: Relation, pos_a: int, pos_b: int) -> None:
    rel.rows = [
        r
        for r in rel.rows
        if canonical_value(r[pos_a]) and canonical_value(r[pos_a]) == canonical_value(r[pos_b])
    ]


def materialize_join_graph(
    graph: JoinGraph,
    store: TableStore,
    stats: JoinStats,
    schema: tuple[str, ...] | None = None,
    mode: str = "full",
    sample_k: int = DEFAULT_SAMPLE_K,
    config: EngineConfig | None = None,
    view_id: str = "view",
    force_include_keys: dict[str, set[str]] | None = None,
) -> CandidateView:
    """Execute a join graph and project the result to the query attributes.

    Joins run leaf-to-inner: each round joins along an edge incident to a
    leaf node, preferring the candidate with the smallest observed
    cardinality when the stats log knows any. mode "sample" applies the
    consistent top-K-hash sample to both sides of every join.
    """
    config = config or EngineConfig()
    sampling = mode == "sample"
    if mode not in ("full", "sample"):
        raise ValueError("mode must be 'full' or 'sample'")

    relations: dict[str, Relation] = {}
    for tid in graph.nodes:
        relations[tid] = Relation.from_table(store.get(tid))

    remaining: list[JoinEdgeSpec] = list(graph.edges)
    owner: dict[str, str] = {tid: tid for tid in graph.nodes}  # table -> relation slot
    cardinalities: list[tuple[tuple, int]] = []
    first_join_pair_base = True
    empty_edge: JoinEdgeSpec | None = None
    empty_on_base_pair = False

    while remaining:
        edge = _pick_next_edge(remaining, owner, stats)
        remaining.remove(edge)
        slot_l = owner[edge.left_table]
        slot_r = owner[edge.right_table]
        if slot_l == slot_r:
            # Both endpoints already merged: apply the edge as an equality filter.
            rel = relations[slot_l]
            pos_a = rel.column_pos(edge.left_table, edge.left_column)
            pos_b = rel.column_pos(edge.right_table, edge.right_column)
            _filter_rows_equal(rel, pos_a, pos_b)
            continue
        left, right = relations[slot_l], relations[slot_r]
        if sampling:
            if edge.left_table in left.tables:
                li = left.column_pos(edge.left_table, edge.left_column)
                ri = right.column_pos(edge.right_table, edge.right_column)
            else:
                li = left.column_pos(edge.right_table, edge.right_column)
                ri = right.column_pos(edge.left_table, edge.left_column)
            left = Relation(
                left.columns,
                _sample_side(left.rows, li, sample_k, force_include_keys, left),
                left.tables,
            )
            right = Relation(
                right.columns,
                _sample_side(right.rows, ri, sample_k, force_include_keys, right),
                right.tables,
            )
        both_base = len(left.tables) == 1 and len(right.tables) == 1
        joined = join_two(left, right, edge, stats, config)
        cardinalities.append((edge.as_tuple(), len(joined.rows)))
        if not joined.rows and empty_edge is None:
            empty_edge = edge
            empty_on_base_pair = both_base and first_join_pair_base
        first_join_pair_base = False
        relations[slot_l] = joined
        del relations[slot_r]
        for t, slot in list(owner.items()):
            if slot == slot_r:
                owner[t] = slot_l

    final = relations[next(iter(relations))] if len(relations) == 1 else None
    if final is None:
        # Disconnected graph should have been filtered upstream.
        raise EngineError("join graph did not reduce to a single relation")

    schema = schema if schema is not None else _default_schema(graph, store)
    sources = _attribute_sources(graph, store, schema)
    positions = [final.column_pos(*sources[a]) for a in schema]
    rows = [tuple(row[p] for p in positions) for row in final.rows]

    provenance = ViewProvenance(
        graph=graph,
        join_cardinalities=cardinalities,
        attribute_sources=sources,
        sampled=sampling,
    )
    provenance.empty_edge = empty_edge  # type: ignore[attr-defined]
    provenance.empty_on_base_pair = empty_on_base_pair  # type: ignore[attr-defined]
    return CandidateView(
        view_id=view_id,
        schema=tuple(schema),
        rows=rows,
        provenance=provenance,
        sampled=sampling,
        fulfilled=graph.fulfilled,
    )


def _sample_side(rows, key_idx, k, force_keys, rel):
    """Consistent sample of one join side, optionally force-including rows
    whose cells match a requested value constraint (attributes matched by
    normalized name against the relation's columns)."""
    sampled = consistent_sample(rows, key_idx, k)
    if force_keys:
        wanted: set[str] = set()
        col_names = [c.split("\x1f", 1)[1] for c in rel.columns]
        for attr, values in force_keys.items():
            target = normalize(attr)
            for pos, col in enumerate(col_names):
                if normalize(col) != target:
                    continue
                keep_keys = {
                    canonical_value(r[key_idx])
                    for r in rows
                    if canonical_value(r[pos]) in values
                }
                wanted |= {key for key in keep_keys if key}
        if wanted:
            have = {canonical_value(r[key_idx]) for r in sampled}
            extra = [r for r in rows if canonical_value(r[key_idx]) in wanted - have]
            sampled = sampled + extra
    return sampled


def _pick_next_edge(remaining: list[JoinEdgeSpec], owner: dict[str, str], stats: JoinStats) -> JoinEdgeSpec:
    """Leaf-to-inner selection with observed-cardinality preference."""
    degree: dict[str, int] = {}
    for e in remaining:
        sl, sr = owner[e.left_table], owner[e.right_table]
        if sl == sr:
            continue
        degree[sl] = degree.get(sl, 0) + 1
        degree[sr] = degree.get(sr, 0) + 1
    leaf_edges = []
    for e in remaining:
        sl, sr = owner[e.left_table], owner[e.right_table]
        if sl == sr:
            return e  # self-filter edges cost nothing; apply immediately
        if degree.get(sl, 0) == 1 or degree.get(sr, 0) == 1:
            leaf_edges.append(e)
    candidates = leaf_edges or remaining
    known = []
    for e in candidates:
        est = stats.estimate(
            JoinStats.key(e.left_table, e.right_table, e.left_column, e.right_column)
        )
        if est is not None:
            known.append((est, e.as_tuple(), e))
    if known:
        return min(known)[2]
    return min(candidates, key=JoinEdgeSpec.as_tuple)


def _default_schema(graph: JoinGraph, store: TableStore) -> tuple[str, ...]:
    attrs = sorted(graph.fulfilled.attribute_hits)
    return tuple(attrs)


def _attribute_sources(
    graph: JoinGraph, store: TableStore, schema
) -> dict[str, tuple[str, str]]:
    """Deterministic source column per projected attribute: group tables are
    preferred over intermediate nodes, lexicographic table order otherwise."""
    ordered = sorted(graph.group_tables) + sorted(set(graph.nodes) - set(graph.group_tables))
    sources: dict[str, tuple[str, str]] = {}
    for attr in schema:
        target = normalize(attr)
        for tid in ordered:
            loaded = store.get(tid)
            for col in loaded.columns:
                if normalize(col) == target:
                    sources[attr] = (tid, col)
                    break
            if attr in sources:
                break
        if attr not in sources:
            raise EngineError(f"no source column for attribute {attr!r} in graph nodes")
    return sources


# ---------------------------------------------------------------------------
# Materializability
# ---------------------------------------------------------------------------


def constraint_signature(value_constraints) -> str:
    return "|".join(
        f"{normalize(a)}={normalize(v)}" for a, v in sorted(value_constraints)
    )


def check_materializable(
    graph: JoinGraph,
    value_constraints,
    store: TableStore,
    caches: EngineCaches,
    stats: JoinStats,
    schema: tuple[str, ...] | None = None,
    mode: str = "full",
    sample_k: int = DEFAULT_SAMPLE_K,
    config: EngineConfig | None = None,
) -> tuple[bool, list[tuple[str, ...]], CandidateView | None]:
    """Decide whether a join graph materializes into a view that contains
    every value constraint. Returns (ok, witness rows, view-if-built).

    Graphs containing a known dead-end edge are rejected without reading any
    table. Failures feed the dead-end cache only when the evidence is
    conclusive: an empty first join between two base tables (any constraint
    signature), or a single-edge graph missing its constraints.
    """
    constraints = sorted(value_constraints)
    sig = constraint_signature(constraints)
    if caches.deadends.blocks(graph.edges, sig):
        return False, [], None

    force = None
    if mode == "sample" and constraints:
        force = {}
        for attr, value in constraints:
            force.setdefault(attr, set()).add(canonical_value(value))
    view = materialize_join_graph(
        graph,
        store,
        stats,
        schema=schema,
        mode=mode,
        sample_k=sample_k,
        config=config,
        force_include_keys=force,
    )

    prov = view.provenance
    if not view.rows:
        if prov is not None and getattr(prov, "empty_on_base_pair", False):
            caches.deadends.add(getattr(prov, "empty_edge"), "")
        elif len(graph.edges) == 1:
            caches.deadends.add(graph.edges[0], "")
        return False, [], view

    witnesses: list[tuple[str, ...]] = []
    schema_norm = [normalize(a) for a in view.schema]
    missing = False
    for attr, value in constraints:
        try:
            pos = schema_norm.index(normalize(attr))
        except ValueError:
            missing = True
            break
        want = canonical_value(value)
        witness = next(
            (row for row in view.rows if canonical_value(row[pos]) == want), None
        )
        if witness is None:
            missing = True
            break
        witnesses.append(witness)
    if missing:
        if len(graph.edges) == 1:
            caches.deadends.add(graph.edges[0], sig)
        return False, [], view
    if not constraints:
        witnesses = [view.rows[0]]
    return True, witnesses, view
