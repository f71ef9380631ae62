"""Query-view search: relevant tables, candidate groups, and join graphs.

A query view declares target attributes plus optional partial example
tuples. The search walks the discovery index to find the tables that satisfy
those constraints, assembles table groups that jointly fulfill as much of the
query view as possible, and enumerates the distinct join graphs that can
combine each group.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .index import DiscoveryIndex, JoinPath, join_paths, search_attribute, search_value
from .norm import normalize

# Per-pair join-path choices are pruned to this many before combination.
PATHS_PER_PAIR = 8
# Upper bound on cross-product combinations examined per group.
COMBINATION_BUDGET = 20_000
# Candidate-table count up to which minimal fully-fulfilling groups are
# enumerated exhaustively (the greedy scan alone can miss some).
EXHAUSTIVE_LIMIT = 16


class QueryViewError(ValueError):
    """Invalid query-view document; message carries a field path."""


@dataclass
class QueryView:
    attributes: list[str]
    example_tuples: list[dict[str, str]] = field(default_factory=list)

    def validate(self) -> None:
        if not self.attributes:
            raise QueryViewError("attributes: at least one attribute is required")
        norms = [normalize(a) for a in self.attributes]
        if len(set(norms)) != len(norms):
            raise QueryViewError("attributes: duplicate attribute after normalization")
        known = set(norms)
        for i, tup in enumerate(self.example_tuples):
            for key in tup:
                if normalize(key) not in known:
                    raise QueryViewError(
                        f"tuples[{i}].{key}: unknown attribute (not in attributes)"
                    )

    def attribute_constraints(self) -> list[str]:
        return list(self.attributes)

    def value_constraints(self) -> list[tuple[str, str]]:
        """Distinct (attribute, value) pairs from the example tuples, keyed by
        the canonical attribute spelling from `attributes`."""
        by_norm = {normalize(a): a for a in self.attributes}
        out: list[tuple[str, str]] = []
        seen = set()
        for tup in self.example_tuples:
            for key, value in tup.items():
                pair = (by_norm[normalize(key)], str(value))
                if pair not in seen:
                    seen.add(pair)
                    out.append(pair)
        return out

    def all_constraints(self) -> "ConstraintSet":
        return ConstraintSet(
            attribute_hits=frozenset(self.attributes),
            value_hits=frozenset(self.value_constraints()),
        )


def _field_line(path: Path, key: str) -> str:
    """Best-effort line locator for YAML error messages."""
    try:
        import yaml.composer  # noqa: F401

        node = yaml.compose(path.read_text(encoding="utf-8"))
    except Exception:
        return ""
    stack = [node]
    while stack:
        n = stack.pop()
        if isinstance(n, yaml.MappingNode):
            for k, v in n.value:
                if getattr(k, "value", None) == key:
                    return f" (line {k.start_mark.line + 1})"
                stack.append(v)
        elif isinstance(n, yaml.SequenceNode):
            stack.extend(n.value)
    return ""


def load_query_view(path: Path | str) -> QueryView:
    """Parse a YAML or JSON query-view document.

    Schema: {attributes: [str, ...], tuples: [{attr: value, ...}, ...]}.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise QueryViewError(f"{path}: not valid YAML/JSON: {exc}")
    return parse_query_view(doc, source=path)


def parse_query_view(doc, source: Path | None = None) -> QueryView:
    def _loc(key: str) -> str:
        return _field_line(source, key) if source is not None else ""

    if not isinstance(doc, dict):
        raise QueryViewError("document root must be a mapping")
    unknown = set(doc) - {"attributes", "tuples"}
    if unknown:
        key = sorted(unknown)[0]
        raise QueryViewError(f"{key}: unknown field{_loc(key)}")
    attrs = doc.get("attributes")
    if not isinstance(attrs, list) or not all(isinstance(a, str) for a in attrs):
        raise QueryViewError(f"attributes: must be a list of strings{_loc('attributes')}")
    tuples_raw = doc.get("tuples", [])
    if tuples_raw is None:
        tuples_raw = []
    if not isinstance(tuples_raw, list):
        raise QueryViewError(f"tuples: must be a list of mappings{_loc('tuples')}")
    tuples: list[dict[str, str]] = []
    for i, t in enumerate(tuples_raw):
        if not isinstance(t, dict):
            raise QueryViewError(f"tuples[{i}]: must be a mapping{_loc('tuples')}")
        tuples.append({str(k): str(v) for k, v in t.items()})
    qv = QueryView(attributes=list(attrs), example_tuples=tuples)
    qv.validate()
    return qv


@dataclass(frozen=True)
class ConstraintSet:
    """Attribute constraints and (attribute, value) constraints a table or
    group satisfies. A value hit always implies the matching attribute hit
    was found in the same column of the same table.
    """

    attribute_hits: frozenset[str] = frozenset()
    value_hits: frozenset[tuple[str, str]] = frozenset()

    def size(self) -> int:
        return len(self.attribute_hits) + len(self.value_hits)

    def union(self, other: "ConstraintSet") -> "ConstraintSet":
        return ConstraintSet(
            attribute_hits=self.attribute_hits | other.attribute_hits,
            value_hits=self.value_hits | other.value_hits,
        )

    def covers(self, other: "ConstraintSet") -> bool:
        return self.attribute_hits >= other.attribute_hits and self.value_hits >= other.value_hits


@dataclass(frozen=True)
class CandidateGroup:
    tables: tuple[str, ...]
    fulfilled: ConstraintSet

    def sort_key(self):
        return (-self.fulfilled.size(), len(self.tables), self.tables)


@dataclass(frozen=True)
class JoinEdgeSpec:
    """One equi-join: (left table, left column) = (right table, right column),
    stored in canonical orientation so edge sets compare reliably."""

    left_table: str
    left_column: str
    right_table: str
    right_column: str

    @staticmethod
    def from_refs(a: tuple[str, str], b: tuple[str, str]) -> "JoinEdgeSpec":
        lo, hi = sorted([a, b])
        return JoinEdgeSpec(lo[0], lo[1], hi[0], hi[1])

    def tables(self) -> tuple[str, str]:
        return self.left_table, self.right_table

    def as_tuple(self):
        return (self.left_table, self.left_column, self.right_table, self.right_column)


@dataclass(frozen=True)
class JoinGraph:
    nodes: tuple[str, ...]
    edges: tuple[JoinEdgeSpec, ...]
    fulfilled: ConstraintSet
    group_tables: tuple[str, ...]

    def edge_set(self) -> frozenset:
        return frozenset(e.as_tuple() for e in self.edges)

    def sort_key(self):
        return (len(self.edges), tuple(sorted(e.as_tuple() for e in self.edges)))


def find_candidate_tables(
    index: DiscoveryIndex, qv: QueryView
) -> list[tuple[str, ConstraintSet]]:
    """Tables satisfying at least one attribute constraint, with the full
    constraint set each table satisfies.

    A value constraint counts only when the attribute and the value land in
    the same column of the same table; a value match alone is not relevance.
    """
    qv.validate()
    attr_cols: dict[str, set] = {}
    for attr in qv.attributes:
        attr_cols[attr] = set(search_attribute(index, attr))
    table_attrs: dict[str, set[str]] = {}
    for attr, cols in attr_cols.items():
        for ref in cols:
            table_attrs.setdefault(ref[0], set()).add(attr)

    table_values: dict[str, set[tuple[str, str]]] = {}
    for attr, value in qv.value_constraints():
        value_cols = set(search_value(index, value))
        for ref in attr_cols[attr] & value_cols:
            table_values.setdefault(ref[0], set()).add((attr, value))

    out = []
    for tid in sorted(table_attrs):
        out.append(
            (
                tid,
                ConstraintSet(
                    attribute_hits=frozenset(table_attrs[tid]),
                    value_hits=frozenset(table_values.get(tid, set())),
                ),
            )
        )
    return out


def find_candidate_groups(
    candidates: list[tuple[str, ConstraintSet]],
    qv: QueryView,
    exhaustive_limit: int = EXHAUSTIVE_LIMIT,
) -> list[CandidateGroup]:
    """Greedy group assembly, sorted by constraints fulfilled then group size.

    Each candidate table seeds a group; tables later in the sort order join
    the group only when they strictly add constraints. A group is emitted as
    soon as it fulfills the whole query view, or as a partial group when the
    scan runs out of tables. Because the single greedy pass per reference can
    miss minimal fully-fulfilling combinations, small candidate sets also get
    an exhaustive enumeration of minimal covers, merged in.
    """
    if not candidates:
        return []
    target = qv.all_constraints()
    constraint_of = dict(candidates)
    order = sorted(candidates, key=lambda c: (-c[1].size(), c[0]))

    groups: dict[frozenset, CandidateGroup] = {}

    def emit(tables: list[str]) -> None:
        key = frozenset(tables)
        if key in groups:
            return
        fulfilled = ConstraintSet()
        for t in tables:
            fulfilled = fulfilled.union(constraint_of[t])
        groups[key] = CandidateGroup(tables=tuple(sorted(tables)), fulfilled=fulfilled)

    for i, (ref, ref_constraints) in enumerate(order):
        members = [ref]
        fulfilled = ref_constraints
        if fulfilled.covers(target):
            emit(members)
            continue
        for tid, constraints in order[i + 1 :]:
            merged = fulfilled.union(constraints)
            if merged.size() <= fulfilled.size():
                continue
            members.append(tid)
            fulfilled = merged
            if fulfilled.covers(target):
                break
        emit(members)

    if len(candidates) <= exhaustive_limit:
        for tables in _minimal_full_covers(order, target):
            emit(tables)

    return sorted(groups.values(), key=CandidateGroup.sort_key)


def _minimal_full_covers(
    order: list[tuple[str, ConstraintSet]], target: ConstraintSet
) -> list[list[str]]:
    """All minimal table subsets whose combined constraints cover the target."""
    ids = [tid for tid, _ in order]
    constraint_of = dict(order)
    found: list[frozenset] = []
    covers: list[list[str]] = []
    for size in range(1, len(ids) + 1):
        for combo in itertools.combinations(ids, size):
            combo_set = frozenset(combo)
            if any(prev <= combo_set for prev in found):
                continue
            fulfilled = ConstraintSet()
            for t in combo:
                fulfilled = fulfilled.union(constraint_of[t])
            if fulfilled.covers(target):
                found.append(combo_set)
                covers.append(list(combo))
    return covers


def find_join_graphs(
    index: DiscoveryIndex,
    group: CandidateGroup,
    max_hops: int = 2,
    cap: int = 50,
    path_fn=None,
) -> tuple[list[JoinGraph], bool]:
    """Distinct join graphs connecting every table of the group.

    Join paths are collected per unordered table pair, one choice per pair
    (possibly "no direct path") is combined, and combinations that do not
    connect and span the group are dropped. Intermediate tables on multi-hop
    paths become graph nodes. Returns (graphs, truncated).
    """
    if not group.tables:
        raise ValueError("group must contain at least one table")
    path_fn = path_fn or (lambda a, b, h: join_paths(index, a, b, h))
    tables = sorted(group.tables)
    if len(tables) == 1:
        graph = JoinGraph(
            nodes=(tables[0],),
            edges=(),
            fulfilled=group.fulfilled,
            group_tables=tuple(tables),
        )
        return [graph], False

    pair_choices: list[list[JoinPath | None]] = []
    for a, b in itertools.combinations(tables, 2):
        paths = list(path_fn(a, b, max_hops))[:PATHS_PER_PAIR]
        choices: list[JoinPath | None] = [None]
        choices.extend(paths)
        pair_choices.append(choices)

    total = 1
    truncated = False
    for choices in pair_choices:
        total *= len(choices)
    if total > COMBINATION_BUDGET:
        truncated = True

    seen: set[frozenset] = set()
    graphs: list[JoinGraph] = []
    examined = 0
    for selection in itertools.product(*pair_choices):
        examined += 1
        if examined > COMBINATION_BUDGET:
            truncated = True
            break
        edges: set[JoinEdgeSpec] = set()
        nodes: set[str] = set(tables)
        any_path = False
        for path in selection:
            if path is None:
                continue
            any_path = True
            nodes.update(path.tables)
            for hop in path.hops:
                edges.add(JoinEdgeSpec.from_refs(hop.from_ref, hop.to_ref))
        if not any_path:
            continue
        if not _connected_and_spanning(nodes, edges, set(tables)):
            continue
        key = frozenset(e.as_tuple() for e in edges)
        if key in seen:
            continue
        seen.add(key)
        graphs.append(
            JoinGraph(
                nodes=tuple(sorted(nodes)),
                edges=tuple(sorted(edges, key=JoinEdgeSpec.as_tuple)),
                fulfilled=group.fulfilled,
                group_tables=tuple(tables),
            )
        )

    graphs.sort(key=JoinGraph.sort_key)
    if len(graphs) > cap:
        graphs = graphs[:cap]
        truncated = True
    return graphs, truncated


def _connected_and_spanning(nodes: set[str], edges: set[JoinEdgeSpec], group: set[str]) -> bool:
    """Single connected component over the edge set that reaches every group
    table; nodes carried only by a path must be connected too."""
    if not group <= nodes:
        return False
    adj: dict[str, set[str]] = {n: set() for n in nodes}
    for e in edges:
        if e.left_table not in adj or e.right_table not in adj:
            return False
        adj[e.left_table].add(e.right_table)
        adj[e.right_table].add(e.left_table)
    start = next(iter(sorted(nodes)))
    seen = {start}
    stack = [start]
    while stack:
        cur = stack.pop()
        for nxt in adj[cur]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen == nodes


def dump_query_view(qv: QueryView) -> str:
    return json.dumps(
        {"attributes": qv.attributes, "tuples": qv.example_tuples}, sort_keys=True
    )
