"""Discovery index over a corpus of CSV tables.

Builds per-column profiles, detects approximate inclusion dependencies,
and answers the discovery queries the search layer needs: attribute lookup,
full-value lookup, and join-path enumeration between tables.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .catalog import (
    ColumnProfile,
    ColumnRef,
    ColumnSketch,
    CorpusError,
    InclusionDependency,
    Table,
    TableStore,
    estimate_containment,
    profile_column,
    read_csv_table,
)
from .norm import canonical_value, hash64, normalize, tokenize

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
# Sketch estimates this far below the containment threshold are discarded
# without exact verification; the margin covers the estimator's error band.
VERIFY_MARGIN = 0.2


@dataclass
class IndexConfig:
    theta_containment: float = 0.8
    theta_uniqueness: float = 0.9
    sketch_seed: int = 0
    exact_verify_limit: int = 100_000
    profile_workers: int = 1

    def validate(self) -> None:
        if not (0.0 < self.theta_containment <= 1.0):
            raise ValueError("theta_containment must be in (0, 1]")
        if not (0.0 < self.theta_uniqueness <= 1.0):
            raise ValueError("theta_uniqueness must be in (0, 1]")
        if self.exact_verify_limit < 0:
            raise ValueError("exact_verify_limit must be >= 0")
        if self.profile_workers < 1:
            raise ValueError("profile_workers must be >= 1")


@dataclass(frozen=True)
class JoinPath:
    """Simple path of IND edges; hops[i] connects tables[i] and tables[i+1]."""

    tables: tuple[str, ...]
    hops: tuple[InclusionDependency, ...]

    @property
    def endpoints(self) -> tuple[str, str]:
        return self.tables[0], self.tables[-1]

    def reversed(self) -> "JoinPath":
        return JoinPath(tables=self.tables[::-1], hops=self.hops[::-1])

    def sort_key(self):
        return (len(self.hops), tuple(h.edge_id for h in self.hops))


@dataclass
class DiscoveryIndex:
    config: IndexConfig
    tables: dict[str, Table]
    profiles: dict[ColumnRef, ColumnProfile]
    ind_edges: list[InclusionDependency]
    attribute_index: dict[str, list[ColumnRef]]
    value_exact: dict[str, list[ColumnRef]]
    value_tokens: dict[str, list[ColumnRef]]
    corpus_dir: Path | None = None
    _store: TableStore | None = field(default=None, repr=False)
    _adjacency: dict[str, list] | None = field(default=None, repr=False)

    def store(self) -> TableStore:
        if self._store is None:
            store = TableStore()
            for table in self.tables.values():
                base = self.corpus_dir if self.corpus_dir is not None else Path(".")
                store.register(table.id, base / table.source_path)
            self._store = store
        return self._store

    def adjacency(self) -> dict[str, list]:
        """table id -> [(edge_id, edge, other table)], sorted for determinism."""
        if self._adjacency is None:
            adj: dict[str, list] = {tid: [] for tid in self.tables}
            for edge in self.ind_edges:
                t_from, t_to = edge.tables()
                adj.setdefault(t_from, []).append((edge.edge_id, edge, t_to))
                adj.setdefault(t_to, []).append((edge.edge_id, edge, t_from))
            for entries in adj.values():
                entries.sort(key=lambda e: e[0])
            self._adjacency = adj
        return self._adjacency


def _detect_inds(
    profiles: dict[ColumnRef, ColumnProfile],
    distinct_sets: dict[ColumnRef, frozenset[int]] | None,
    theta_containment: float,
    theta_uniqueness: float,
    exact_verify_limit: int,
) -> list[InclusionDependency]:
    """All-pairs approximate IND detection.

    Sketch estimates prefilter the candidates; when both columns' distinct
    sets are available and under the verification limit, containment is
    recomputed exactly. One edge per unordered column pair, oriented from the
    better-contained side.
    """
    refs = sorted(profiles)
    best: dict[tuple[ColumnRef, ColumnRef], InclusionDependency] = {}
    for i, ref_a in enumerate(refs):
        prof_a = profiles[ref_a]
        if prof_a.total_count == 0:
            continue
        for ref_b in refs[i + 1 :]:
            prof_b = profiles[ref_b]
            if prof_b.total_count == 0:
                continue
            if ref_a[0] == ref_b[0]:
                continue  # self-table joins are out of scope
            if max(prof_a.uniqueness, prof_b.uniqueness) < theta_uniqueness:
                continue
            for frm, to in ((ref_a, ref_b), (ref_b, ref_a)):
                p_from, p_to = profiles[frm], profiles[to]
                est = estimate_containment(p_from.value_sketch, p_to.value_sketch)
                if est < theta_containment - VERIFY_MARGIN:
                    continue
                containment = est
                if (
                    distinct_sets is not None
                    and frm in distinct_sets
                    and to in distinct_sets
                    and p_from.distinct_count <= exact_verify_limit
                    and p_to.distinct_count <= exact_verify_limit
                ):
                    set_from, set_to = distinct_sets[frm], distinct_sets[to]
                    containment = (
                        len(set_from & set_to) / len(set_from) if set_from else 0.0
                    )
                if containment < theta_containment:
                    continue
                key = (min(frm, to), max(frm, to))
                edge = InclusionDependency(from_ref=frm, to_ref=to, containment=containment)
                prev = best.get(key)
                if prev is None or (edge.containment, edge.from_ref) > (
                    prev.containment,
                    prev.from_ref,
                ):
                    best[key] = edge
    return [best[k] for k in sorted(best)]


def find_inclusion_dependencies(
    index: DiscoveryIndex,
    theta_containment: float | None = None,
    theta_uniqueness: float | None = None,
) -> list[InclusionDependency]:
    """Re-run IND detection over an index's profiles at the given thresholds.

    Exact verification re-reads columns from the corpus when it is reachable;
    otherwise the sketch estimate stands.
    """
    cfg = index.config
    theta_c = cfg.theta_containment if theta_containment is None else theta_containment
    theta_u = cfg.theta_uniqueness if theta_uniqueness is None else theta_uniqueness
    distinct_sets = None
    try:
        distinct_sets = _load_distinct_sets(index)
    except (OSError, KeyError, CorpusError):
        logger.warning("corpus unavailable; IND containment uses sketch estimates only")
    return _detect_inds(index.profiles, distinct_sets, theta_c, theta_u, cfg.exact_verify_limit)


def _load_distinct_sets(index: DiscoveryIndex) -> dict[ColumnRef, frozenset[int]]:
    sets: dict[ColumnRef, frozenset[int]] = {}
    store = index.store()
    seed = index.config.sketch_seed
    for tid in sorted(index.tables):
        loaded = store.get(tid)
        for col in loaded.columns:
            values = loaded.column_values(col)
            sets[(tid, col)] = frozenset(hash64(canonical_value(v), seed) for v in values)
    return sets


def _profile_table_file(path: Path, seed: int):
    """Per-file ingestion work: profile every column and collect the value
    index fragments. Safe to run concurrently across files."""
    loaded = read_csv_table(path)
    tid = loaded.table_id
    table = Table(
        id=tid,
        name=tid,
        source_path=path.name,
        columns=tuple(loaded.columns),
        row_count=len(loaded.rows),
    )
    profiles: dict[ColumnRef, ColumnProfile] = {}
    distinct_sets: dict[ColumnRef, frozenset[int]] = {}
    exact: dict[str, set[ColumnRef]] = {}
    tokens: dict[str, set[ColumnRef]] = {}
    for col in loaded.columns:
        values = loaded.column_values(col)
        ref = (tid, col)
        prof = profile_column(values, ref, seed=seed)
        profiles[ref] = prof
        distinct_sets[ref] = frozenset(hash64(canonical_value(v), seed) for v in values)
        if prof.inferred_type == "text":
            for v in values:
                nv = normalize(v)
                if not nv:
                    continue
                exact.setdefault(nv, set()).add(ref)
                for tok in tokenize(v):
                    tokens.setdefault(tok, set()).add(ref)
    return table, profiles, distinct_sets, exact, tokens


def build_index(corpus_dir: Path | str, config: IndexConfig | None = None) -> DiscoveryIndex:
    """Ingest every CSV file under corpus_dir and build the discovery index.

    Unreadable files are skipped with a warning; zero parseable tables is
    fatal. Tables may be profiled concurrently (profile_workers > 1); results
    merge in sorted file order, so the index is deterministic for a fixed
    corpus and config regardless of worker count.
    """
    config = config or IndexConfig()
    config.validate()
    corpus_dir = Path(corpus_dir)
    if not corpus_dir.is_dir():
        raise CorpusError(f"corpus directory not found: {corpus_dir}")

    tables: dict[str, Table] = {}
    profiles: dict[ColumnRef, ColumnProfile] = {}
    distinct_sets: dict[ColumnRef, frozenset[int]] = {}
    attribute_index: dict[str, list[ColumnRef]] = {}
    value_exact: dict[str, set[ColumnRef]] = {}
    value_tokens: dict[str, set[ColumnRef]] = {}

    files = sorted(p for p in corpus_dir.iterdir() if p.suffix.lower() == ".csv")
    results: dict[Path, tuple] = {}
    if config.profile_workers > 1 and len(files) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=config.profile_workers) as pool:
            futures = {path: pool.submit(_profile_table_file, path, config.sketch_seed) for path in files}
        for path, future in futures.items():
            try:
                results[path] = future.result()
            except (CorpusError, OSError, UnicodeDecodeError) as exc:
                logger.warning("skipping %s: %s", path.name, exc)
    else:
        for path in files:
            try:
                results[path] = _profile_table_file(path, config.sketch_seed)
            except (CorpusError, OSError, UnicodeDecodeError) as exc:
                logger.warning("skipping %s: %s", path.name, exc)

    for path in files:
        if path not in results:
            continue
        table, t_profiles, t_sets, t_exact, t_tokens = results[path]
        tables[table.id] = table
        profiles.update(t_profiles)
        distinct_sets.update(t_sets)
        for ref in t_profiles:
            attribute_index.setdefault(normalize(ref[1]), []).append(ref)
        for key, refs in t_exact.items():
            value_exact.setdefault(key, set()).update(refs)
        for key, refs in t_tokens.items():
            value_tokens.setdefault(key, set()).update(refs)

    if not tables:
        raise CorpusError(f"no parseable tables in {corpus_dir}")

    edges = _detect_inds(
        profiles,
        distinct_sets,
        config.theta_containment,
        config.theta_uniqueness,
        config.exact_verify_limit,
    )
    return DiscoveryIndex(
        config=config,
        tables=tables,
        profiles=profiles,
        ind_edges=edges,
        attribute_index={k: sorted(v) for k, v in attribute_index.items()},
        value_exact={k: sorted(v) for k, v in value_exact.items()},
        value_tokens={k: sorted(v) for k, v in value_tokens.items()},
        corpus_dir=corpus_dir,
    )


def search_attribute(index: DiscoveryIndex, name: str) -> list[ColumnRef]:
    """Columns whose name equals the query after normalization."""
    return list(index.attribute_index.get(normalize(name), []))


def search_value(index: DiscoveryIndex, value: str) -> list[ColumnRef]:
    """Textual columns containing the value: exact cell match, or all of the
    value's tokens inside a single cell (verified against the source rows).
    """
    nv = normalize(value)
    hits: set[ColumnRef] = set(index.value_exact.get(nv, []))
    tokens = tokenize(value)
    if tokens:
        candidates: set[ColumnRef] | None = None
        for tok in tokens:
            cols = set(index.value_tokens.get(tok, []))
            candidates = cols if candidates is None else candidates & cols
            if not candidates:
                break
        for ref in sorted((candidates or set()) - hits):
            if _tokens_in_one_cell(index, ref, tokens):
                hits.add(ref)
    return sorted(hits)


def _tokens_in_one_cell(index: DiscoveryIndex, ref: ColumnRef, tokens: list[str]) -> bool:
    try:
        loaded = index.store().get(ref[0])
        cells = loaded.column_values(ref[1])
    except (KeyError, OSError, CorpusError):
        return True  # index said plausible; without the corpus keep the hit
    need = set(tokens)
    for cell in cells:
        if need.issubset(tokenize(cell)):
            return True
    return False


def join_paths(index: DiscoveryIndex, a: str, b: str, max_hops: int) -> list[JoinPath]:
    """All simple IND paths with at most max_hops edges between two tables,
    ordered by hop count then lexicographic edge ids.
    """
    if a == b:
        raise ValueError("join_paths requires two distinct tables")
    if max_hops < 1:
        raise ValueError("max_hops must be >= 1")
    if a not in index.tables or b not in index.tables:
        return []
    adj = index.adjacency()
    results: list[JoinPath] = []

    def dfs(node: str, visited: list[str], hops: list[InclusionDependency]) -> None:
        if node == b:
            results.append(JoinPath(tables=tuple(visited), hops=tuple(hops)))
            return
        if len(hops) == max_hops:
            return
        seen = set(visited)
        for _, edge, other in adj.get(node, []):
            if other in seen:
                continue
            visited.append(other)
            hops.append(edge)
            dfs(other, visited, hops)
            visited.pop()
            hops.pop()

    dfs(a, [a], [])
    results.sort(key=JoinPath.sort_key)
    return results


# ---------------------------------------------------------------------------
# Persistence: <dir>/catalog.json + <dir>/values.idx, deterministic bytes.
# ---------------------------------------------------------------------------


def _ref_str(ref: ColumnRef) -> str:
    return f"{ref[0]}\x1f{ref[1]}"


def _ref_parse(s: str) -> ColumnRef:
    tid, col = s.split("\x1f", 1)
    return (tid, col)


def save_index(index: DiscoveryIndex, out_dir: Path | str) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    catalog = {
        "format_version": FORMAT_VERSION,
        "config": {
            "theta_containment": index.config.theta_containment,
            "theta_uniqueness": index.config.theta_uniqueness,
            "sketch_seed": index.config.sketch_seed,
            "exact_verify_limit": index.config.exact_verify_limit,
        },
        "corpus_dir": str(index.corpus_dir) if index.corpus_dir else None,
        "tables": [
            {
                "id": t.id,
                "name": t.name,
                "source_path": t.source_path,
                "columns": list(t.columns),
                "row_count": t.row_count,
            }
            for _, t in sorted(index.tables.items())
        ],
        "profiles": [
            {
                "ref": _ref_str(p.column_ref),
                "total": p.total_count,
                "distinct": p.distinct_count,
                "uniqueness": p.uniqueness,
                "type": p.inferred_type,
                "sketch": list(p.value_sketch.slots),
            }
            for _, p in sorted(index.profiles.items())
        ],
        "inds": [
            {
                "from": _ref_str(e.from_ref),
                "to": _ref_str(e.to_ref),
                "containment": e.containment,
            }
            for e in index.ind_edges
        ],
    }
    values = {
        "format_version": FORMAT_VERSION,
        "exact": {k: [_ref_str(r) for r in v] for k, v in sorted(index.value_exact.items())},
        "tokens": {k: [_ref_str(r) for r in v] for k, v in sorted(index.value_tokens.items())},
    }
    (out_dir / "catalog.json").write_text(
        json.dumps(catalog, sort_keys=True, separators=(",", ":")), encoding="utf-8"
    )
    (out_dir / "values.idx").write_text(
        json.dumps(values, sort_keys=True, separators=(",", ":")), encoding="utf-8"
    )


def load_index(path: Path | str) -> DiscoveryIndex:
    path = Path(path)
    catalog = json.loads((path / "catalog.json").read_text(encoding="utf-8"))
    if catalog.get("format_version") != FORMAT_VERSION:
        raise CorpusError(f"unsupported index format_version in {path}")
    values = json.loads((path / "values.idx").read_text(encoding="utf-8"))
    cfg = IndexConfig(
        theta_containment=catalog["config"]["theta_containment"],
        theta_uniqueness=catalog["config"]["theta_uniqueness"],
        sketch_seed=catalog["config"]["sketch_seed"],
        exact_verify_limit=catalog["config"]["exact_verify_limit"],
    )
    tables = {
        t["id"]: Table(
            id=t["id"],
            name=t["name"],
            source_path=t["source_path"],
            columns=tuple(t["columns"]),
            row_count=t["row_count"],
        )
        for t in catalog["tables"]
    }
    profiles = {}
    for p in catalog["profiles"]:
        ref = _ref_parse(p["ref"])
        profiles[ref] = ColumnProfile(
            column_ref=ref,
            total_count=p["total"],
            distinct_count=p["distinct"],
            uniqueness=p["uniqueness"],
            inferred_type=p["type"],
            value_sketch=ColumnSketch(slots=tuple(p["sketch"]), distinct_count=p["distinct"]),
        )
    edges = [
        InclusionDependency(
            from_ref=_ref_parse(e["from"]),
            to_ref=_ref_parse(e["to"]),
            containment=e["containment"],
        )
        for e in catalog["inds"]
    ]
    attribute_index: dict[str, list[ColumnRef]] = {}
    for ref in sorted(profiles):
        attribute_index.setdefault(normalize(ref[1]), []).append(ref)
    return DiscoveryIndex(
        config=cfg,
        tables=tables,
        profiles=profiles,
        ind_edges=edges,
        attribute_index=attribute_index,
        value_exact={k: [_ref_parse(r) for r in v] for k, v in values["exact"].items()},
        value_tokens={k: [_ref_parse(r) for r in v] for k, v in values["tokens"].items()},
        corpus_dir=Path(catalog["corpus_dir"]) if catalog.get("corpus_dir") else None,
    )
