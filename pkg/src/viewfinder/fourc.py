"""Four-class view classification with contradiction chasing.

Candidate views over the same schema are grouped as compatible (identical
row sets), contained (subset row sets), complementary (rows missing from each
other), or contradictory (shared key values with differing rows).

Hash fingerprints settle the first two classes in near-linear time. For the
rest, differing rows are keyed by the most likely key attribute and compared
only where the key values intersect; a discovered contradiction is chased
across the pair graph so neighboring pairs can be settled with key lookups
instead of row scans. `no_chasing_oracle` is the exhaustive baseline that
compares differing rows cell by cell, used as ground truth in tests and as
the benchmark for the comparison counters.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .norm import cell_hash128, combine128, normalize

KEY_SCORE_FLOOR = 0.5


@dataclass
class ClassifyMetrics:
    cell_comparisons: int = 0
    key_lookups: int = 0
    pairs_total: int = 0
    pairs_chase_settled: int = 0

    def to_dict(self) -> dict:
        return {
            "cell_comparisons": self.cell_comparisons,
            "key_lookups": self.key_lookups,
            "pairs_total": self.pairs_total,
            "pairs_chase_settled": self.pairs_chase_settled,
        }


@dataclass
class ViewFingerprint:
    view_id: str
    schema: tuple[str, ...]
    row_hash_list: list[int]
    row_hash_set: frozenset[int]
    view_hash: int
    key_scores: dict[str, float]
    norm_rows: list[tuple[str, ...]] = field(repr=False, default_factory=list)
    _hash_positions: dict | None = field(repr=False, default=None)

    def row_count(self) -> int:
        return len(self.row_hash_list)

    def hash_positions(self) -> dict[int, list[int]]:
        if self._hash_positions is None:
            positions: dict[int, list[int]] = {}
            for i, h in enumerate(self.row_hash_list):
                positions.setdefault(h, []).append(i)
            self._hash_positions = positions
        return self._hash_positions


def fingerprint(view) -> ViewFingerprint:
    """Hash fingerprint of a view: per-row 128-bit hashes (cell hashes summed
    within a row), their set, the order-independent view hash, and the
    per-attribute key-likelihood ratios (distinct / total)."""
    schema = tuple(view.schema)
    norm_rows = [tuple(normalize(c) for c in row) for row in view.rows]
    row_hashes = []
    for row in view.rows:
        row_hashes.append(
            combine128(cell_hash128(attr, cell) for attr, cell in zip(schema, row))
        )
    total = len(norm_rows)
    key_scores = {}
    for i, attr in enumerate(schema):
        distinct = len({row[i] for row in norm_rows})
        key_scores[attr] = distinct / total if total else 0.0
    return ViewFingerprint(
        view_id=view.view_id,
        schema=schema,
        row_hash_list=row_hashes,
        row_hash_set=frozenset(row_hashes),
        view_hash=combine128(row_hashes),
        key_scores=key_scores,
        norm_rows=norm_rows,
    )


@dataclass
class CompatibleGroup:
    representative: str
    members: tuple[str, ...]


@dataclass
class ContainmentEntry:
    container: str
    contained: tuple[str, ...]


@dataclass
class PairRecord:
    """Resolved complementary/contradictory pair with full evidence.

    left/right are ordered by view id. left_only/right_only index rows whose
    hash is absent from the other view. For contradictions, key_values lists
    the shared keys among differing rows and cell_conflicts records, per key,
    the distinct (attribute, left value, right value) disagreements.
    """

    left: str
    right: str
    left_only: tuple[int, ...]
    right_only: tuple[int, ...]
    key_attribute: str | None
    key_values: tuple[str, ...] = ()
    cell_conflicts: dict[str, tuple[tuple[str, str, str], ...]] = field(default_factory=dict)
    complementary_left: tuple[int, ...] = ()
    complementary_right: tuple[int, ...] = ()
    no_key: bool = False

    def is_contradictory(self) -> bool:
        return bool(self.key_values)

    def canonical(self):
        return (
            self.left,
            self.right,
            self.left_only,
            self.right_only,
            self.key_attribute,
            self.key_values,
            tuple(sorted((k, v) for k, v in self.cell_conflicts.items())),
            self.complementary_left,
            self.complementary_right,
            self.no_key,
        )


@dataclass
class SchemaBucket:
    signature: tuple[str, ...]
    view_ids: tuple[str, ...]
    c1_groups: list[CompatibleGroup]
    c2: list[ContainmentEntry]
    c34_pairs: list[tuple[str, str, tuple[int, ...], tuple[int, ...]]]
    c3: list[PairRecord]
    c4: list[PairRecord]
    duplicate_count_mismatches: list[tuple[str, str]] = field(default_factory=list)

    def canonical(self):
        return (
            self.signature,
            tuple(sorted((g.representative, g.members) for g in self.c1_groups)),
            tuple(sorted((e.container, e.contained) for e in self.c2)),
            tuple(sorted(p.canonical() for p in self.c3)),
            tuple(sorted(p.canonical() for p in self.c4)),
            tuple(sorted(self.duplicate_count_mismatches)),
        )


@dataclass
class FourCResult:
    buckets: dict[tuple[str, ...], SchemaBucket]
    metrics: ClassifyMetrics

    def canonical(self):
        return tuple(self.buckets[sig].canonical() for sig in sorted(self.buckets))

    def all_view_ids(self) -> list[str]:
        out = []
        for sig in sorted(self.buckets):
            out.extend(self.buckets[sig].view_ids)
        return out

    def to_dict(self) -> dict:
        return {
            "buckets": [
                {
                    "schema": list(b.signature),
                    "views": list(b.view_ids),
                    "compatible_groups": [
                        {"representative": g.representative, "members": list(g.members)}
                        for g in b.c1_groups
                    ],
                    "contained": [
                        {"container": e.container, "contained": list(e.contained)}
                        for e in b.c2
                    ],
                    "candidate_pairs": [
                        {"left": a, "right": b_, "left_rows": list(ia), "right_rows": list(ja)}
                        for a, b_, ia, ja in b.c34_pairs
                    ],
                    "complementary": [_pair_dict(p) for p in b.c3],
                    "contradictory": [_pair_dict(p) for p in b.c4],
                    "duplicate_count_mismatches": [list(m) for m in b.duplicate_count_mismatches],
                }
                for b in (self.buckets[sig] for sig in sorted(self.buckets))
            ],
            "metrics": self.metrics.to_dict(),
        }


def _pair_dict(p: PairRecord) -> dict:
    return {
        "left": p.left,
        "right": p.right,
        "left_only_rows": list(p.left_only),
        "right_only_rows": list(p.right_only),
        "key_attribute": p.key_attribute,
        "contradictory_keys": list(p.key_values),
        "cell_conflicts": {
            k: [list(c) for c in v] for k, v in sorted(p.cell_conflicts.items())
        },
        "complementary_left_rows": list(p.complementary_left),
        "complementary_right_rows": list(p.complementary_right),
        "no_key": p.no_key,
    }


def _pair_from_dict(d: dict) -> PairRecord:
    return PairRecord(
        left=d["left"],
        right=d["right"],
        left_only=tuple(d["left_only_rows"]),
        right_only=tuple(d["right_only_rows"]),
        key_attribute=d["key_attribute"],
        key_values=tuple(d["contradictory_keys"]),
        cell_conflicts={
            k: tuple(tuple(c) for c in v) for k, v in d["cell_conflicts"].items()
        },
        complementary_left=tuple(d["complementary_left_rows"]),
        complementary_right=tuple(d["complementary_right_rows"]),
        no_key=d["no_key"],
    )


def result_from_dict(doc: dict) -> FourCResult:
    """Inverse of FourCResult.to_dict (used to restore persisted sessions)."""
    buckets: dict[tuple[str, ...], SchemaBucket] = {}
    for b in doc["buckets"]:
        sig = tuple(b["schema"])
        buckets[sig] = SchemaBucket(
            signature=sig,
            view_ids=tuple(b["views"]),
            c1_groups=[
                CompatibleGroup(representative=g["representative"], members=tuple(g["members"]))
                for g in b["compatible_groups"]
            ],
            c2=[
                ContainmentEntry(container=e["container"], contained=tuple(e["contained"]))
                for e in b["contained"]
            ],
            c34_pairs=[
                (p["left"], p["right"], tuple(p["left_rows"]), tuple(p["right_rows"]))
                for p in b.get("candidate_pairs", [])
            ],
            c3=[_pair_from_dict(p) for p in b["complementary"]],
            c4=[_pair_from_dict(p) for p in b["contradictory"]],
            duplicate_count_mismatches=[tuple(m) for m in b["duplicate_count_mismatches"]],
        )
    metrics = ClassifyMetrics(**doc.get("metrics", {}))
    return FourCResult(buckets=buckets, metrics=metrics)


def classify_per_schema(views) -> dict[tuple[str, ...], list]:
    """Bucket views by sorted attribute-name signature."""
    buckets: dict[tuple[str, ...], list] = {}
    for view in views:
        sig = tuple(sorted(normalize(a) for a in view.schema))
        buckets.setdefault(sig, []).append(view)
    return buckets


def identify_c1(fps: list[ViewFingerprint]) -> list[CompatibleGroup]:
    """Group views by (view hash, cardinality); lowest view id represents."""
    groups: dict[tuple[int, int], list[str]] = {}
    for fp in fps:
        groups.setdefault((fp.view_hash, fp.row_count()), []).append(fp.view_id)
    out = []
    for key in sorted(groups, key=lambda k: min(groups[k])):
        members = tuple(sorted(groups[key]))
        out.append(CompatibleGroup(representative=members[0], members=members))
    return out


def identify_c2_and_candidate_c3c4(
    reps: list[ViewFingerprint],
) -> tuple[list[ContainmentEntry], list[tuple], list[tuple[str, str]]]:
    """Containment and complementary/contradictory candidates among the
    compatible-group representatives.

    Each unordered pair is examined once with the larger hash set on the
    left. Full containment of the smaller set yields a containment entry;
    otherwise both set differences are non-empty and the pair becomes a C34
    candidate carrying the differing row indices of each side. Hash sets that
    are equal while the views' hashes differ mean a duplicate-multiplicity
    mismatch; the containment rule still applies and the pair is flagged.
    """
    by_id = {fp.view_id: fp for fp in reps}
    ids = sorted(by_id)
    contained_by: dict[str, list[str]] = {}
    c34: list[tuple] = []
    mismatches: list[tuple[str, str]] = []
    for i, vid_i in enumerate(ids):
        for vid_j in ids[i + 1 :]:
            fp_i, fp_j = by_id[vid_i], by_id[vid_j]
            set_i, set_j = fp_i.row_hash_set, fp_j.row_hash_set
            if len(set_i) == len(set_j) and set_i == set_j:
                # Same distinct rows, different multiplicities (hashes differ
                # or they would share a compatible group).
                big = fp_i if fp_i.row_count() >= fp_j.row_count() else fp_j
                small = fp_j if big is fp_i else fp_i
                contained_by.setdefault(big.view_id, []).append(small.view_id)
                mismatches.append((vid_i, vid_j))
                continue
            big, small = (fp_i, fp_j) if len(set_i) >= len(set_j) else (fp_j, fp_i)
            if small.row_hash_set <= big.row_hash_set:
                contained_by.setdefault(big.view_id, []).append(small.view_id)
                continue
            diff_big = big.row_hash_set - small.row_hash_set
            diff_small = small.row_hash_set - big.row_hash_set
            if diff_big and diff_small:
                left_diff = set_i - set_j
                right_diff = set_j - set_i
                left_pos, right_pos = fp_i.hash_positions(), fp_j.hash_positions()
                left_idx = tuple(sorted(i_ for h in left_diff for i_ in left_pos[h]))
                right_idx = tuple(sorted(j_ for h in right_diff for j_ in right_pos[h]))
                c34.append((vid_i, vid_j, left_idx, right_idx))
    entries = [
        ContainmentEntry(container=c, contained=tuple(sorted(v)))
        for c, v in sorted(contained_by.items())
    ]
    return entries, c34, mismatches


def most_likely_key(
    schema: tuple[str, ...], scores_left: dict[str, float], scores_right: dict[str, float]
) -> str | None:
    """Highest mean key-likelihood attribute for a pair; leftmost schema
    position breaks ties; below the floor there is no usable key."""
    best_attr = None
    best_score = -1.0
    for attr in schema:
        score = (scores_left.get(attr, 0.0) + scores_right.get(attr, 0.0)) / 2.0
        if score > best_score:
            best_attr, best_score = attr, score
    if best_score < KEY_SCORE_FLOOR:
        return None
    return best_attr


def _resolve_pair(
    pair: tuple,
    fps: dict[str, ViewFingerprint],
    metrics: ClassifyMetrics,
) -> PairRecord:
    """Full resolution of one C34 pair via key indexing.

    Differing rows of both sides are indexed by the pair's most likely key;
    intersecting key values are contradictions (their rows are compared cell
    by cell to record the conflicting attributes), the rest are complementary.
    """
    vid_i, vid_j, idx_i, idx_j = pair
    fp_i, fp_j = fps[vid_i], fps[vid_j]
    schema = fp_i.schema
    key = most_likely_key(schema, fp_i.key_scores, fp_j.key_scores)
    if key is None:
        return PairRecord(
            left=vid_i,
            right=vid_j,
            left_only=idx_i,
            right_only=idx_j,
            key_attribute=None,
            complementary_left=idx_i,
            complementary_right=idx_j,
            no_key=True,
        )
    key_pos = schema.index(key)
    left_keys = [fp_i.norm_rows[i_][key_pos] for i_ in idx_i]
    right_keys = [fp_j.norm_rows[j_][key_pos] for j_ in idx_j]
    left_key_set = set(left_keys)
    right_key_set = set(right_keys)
    metrics.key_lookups += len(left_key_set) + len(right_key_set)
    shared_set = left_key_set & right_key_set
    if not shared_set:
        return PairRecord(
            left=vid_i,
            right=vid_j,
            left_only=idx_i,
            right_only=idx_j,
            key_attribute=key,
            complementary_left=idx_i,
            complementary_right=idx_j,
        )
    left_by_key: dict[str, list[int]] = {}
    for i_, kv in zip(idx_i, left_keys):
        if kv in shared_set:
            left_by_key.setdefault(kv, []).append(i_)
    right_by_key: dict[str, list[int]] = {}
    for j_, kv in zip(idx_j, right_keys):
        if kv in shared_set:
            right_by_key.setdefault(kv, []).append(j_)
    conflicts: dict[str, tuple] = {}
    for kv in sorted(shared_set):
        found = set()
        for i_ in left_by_key[kv]:
            row_i = fp_i.norm_rows[i_]
            for j_ in right_by_key[kv]:
                row_j = fp_j.norm_rows[j_]
                for pos, attr in enumerate(schema):
                    if pos == key_pos:
                        continue
                    metrics.cell_comparisons += 1
                    if row_i[pos] != row_j[pos]:
                        found.add((attr, row_i[pos], row_j[pos]))
        conflicts[kv] = tuple(sorted(found))
    comp_left = tuple(i_ for i_, kv in zip(idx_i, left_keys) if kv not in shared_set)
    comp_right = tuple(j_ for j_, kv in zip(idx_j, right_keys) if kv not in shared_set)
    return PairRecord(
        left=vid_i,
        right=vid_j,
        left_only=idx_i,
        right_only=idx_j,
        key_attribute=key,
        key_values=tuple(sorted(shared_set)),
        cell_conflicts=conflicts,
        complementary_left=comp_left,
        complementary_right=comp_right,
    )


def identify_c3_and_c4(
    c34: list[tuple],
    fps: dict[str, ViewFingerprint],
    metrics: ClassifyMetrics,
    chasing: bool = True,
) -> tuple[list[PairRecord], list[PairRecord], int]:
    """Split C34 candidates into complementary and contradictory pairs.

    With chasing enabled, a resolved contradiction (key attribute plus the
    key values it fired on) marks both endpoint views in the pair graph;
    unresolved pairs touching a marked view are probed with those key values
    first — key lookups, not row scans — and only pairs the probe cannot
    settle fall back to full resolution. Each view is marked once per
    distinct piece of evidence and each pair probed once per evidence.
    """
    pending: dict[int, tuple] = {i: p for i, p in enumerate(c34)}
    adjacency: dict[str, set[int]] = {}
    for i, (vid_i, vid_j, _, _) in enumerate(c34):
        adjacency.setdefault(vid_i, set()).add(i)
        adjacency.setdefault(vid_j, set()).add(i)

    c3: list[PairRecord] = []
    c4: list[PairRecord] = []
    chase_settled = 0
    marks: deque = deque()
    mark_seen: set = set()
    probe_seen: set = set()
    key_set_cache: dict[tuple[int, str], tuple[set, set]] = {}

    def queue_marks(record: PairRecord) -> None:
        if not chasing or record.key_attribute is None or not record.key_values:
            return
        signature = (record.key_attribute, record.key_values)
        for vid in (record.left, record.right):
            if (vid, signature) not in mark_seen:
                mark_seen.add((vid, signature))
                marks.append((vid, signature))

    def settle(pair_id: int, record: PairRecord) -> None:
        del pending[pair_id]
        if record.is_contradictory():
            c4.append(record)
            queue_marks(record)
        else:
            c3.append(record)

    def probe(pair_id: int, key_attr: str, key_values: tuple) -> bool:
        """Do any of the marked key values occur among the differing rows of
        both sides? Differing rows sharing a key always disagree somewhere,
        so one hit settles the pair as contradictory without a row scan."""
        cached = key_set_cache.get((pair_id, key_attr))
        if cached is None:
            vid_i, vid_j, idx_i, idx_j = pending[pair_id]
            fp_i, fp_j = fps[vid_i], fps[vid_j]
            if key_attr not in fp_i.schema:
                return False
            pos = fp_i.schema.index(key_attr)
            cached = (
                {fp_i.norm_rows[i_][pos] for i_ in idx_i},
                {fp_j.norm_rows[j_][pos] for j_ in idx_j},
            )
            key_set_cache[(pair_id, key_attr)] = cached
        left_keys, right_keys = cached
        for kv in key_values:
            metrics.key_lookups += 1
            if kv in left_keys and kv in right_keys:
                return True
        return False

    for pair_id in sorted(pending):
        if pair_id not in pending:
            continue
        record = _resolve_pair(pending[pair_id], fps, metrics)
        metrics.pairs_total += 1
        settle(pair_id, record)
        while marks:
            view_id, signature = marks.popleft()
            key_attr, key_values = signature
            for neighbor_id in sorted(adjacency.get(view_id, set())):
                if neighbor_id not in pending:
                    continue
                if (neighbor_id, signature) in probe_seen:
                    continue
                probe_seen.add((neighbor_id, signature))
                if probe(neighbor_id, key_attr, key_values):
                    chase_settled += 1
                    metrics.pairs_chase_settled += 1
                    neighbor_record = _resolve_pair(pending[neighbor_id], fps, metrics)
                    metrics.pairs_total += 1
                    settle(neighbor_id, neighbor_record)
    return c3, c4, chase_settled


def _oracle_resolve_pair(
    pair: tuple, fps: dict[str, ViewFingerprint], metrics: ClassifyMetrics
) -> PairRecord:
    """Exhaustive resolution: every differing row of one side is compared
    cell by cell against every differing row of the other."""
    vid_i, vid_j, idx_i, idx_j = pair
    fp_i, fp_j = fps[vid_i], fps[vid_j]
    schema = fp_i.schema
    key = most_likely_key(schema, fp_i.key_scores, fp_j.key_scores)
    if key is None:
        return PairRecord(
            left=vid_i,
            right=vid_j,
            left_only=idx_i,
            right_only=idx_j,
            key_attribute=None,
            complementary_left=idx_i,
            complementary_right=idx_j,
            no_key=True,
        )
    key_pos = schema.index(key)
    conflicts: dict[str, set] = {}
    for i_ in idx_i:
        row_i = fp_i.norm_rows[i_]
        for j_ in idx_j:
            row_j = fp_j.norm_rows[j_]
            metrics.cell_comparisons += 1
            if row_i[key_pos] != row_j[key_pos]:
                continue
            kv = row_i[key_pos]
            bucket = conflicts.setdefault(kv, set())
            for pos, attr in enumerate(schema):
                if pos == key_pos:
                    continue
                metrics.cell_comparisons += 1
                if row_i[pos] != row_j[pos]:
                    bucket.add((attr, row_i[pos], row_j[pos]))
    shared = sorted(conflicts)
    shared_set = set(shared)
    comp_left = tuple(i_ for i_ in idx_i if fp_i.norm_rows[i_][key_pos] not in shared_set)
    comp_right = tuple(j_ for j_ in idx_j if fp_j.norm_rows[j_][key_pos] not in shared_set)
    return PairRecord(
        left=vid_i,
        right=vid_j,
        left_only=idx_i,
        right_only=idx_j,
        key_attribute=key,
        key_values=tuple(shared),
        cell_conflicts={kv: tuple(sorted(v)) for kv, v in conflicts.items()},
        complementary_left=comp_left,
        complementary_right=comp_right,
    )


def _run(views, metrics: ClassifyMetrics, resolver: str) -> FourCResult:
    buckets_in = classify_per_schema(views)
    buckets: dict[tuple[str, ...], SchemaBucket] = {}
    for sig in sorted(buckets_in):
        bucket_views = sorted(buckets_in[sig], key=lambda v: v.view_id)
        fps = {v.view_id: fingerprint(v) for v in bucket_views}
        fp_list = [fps[v.view_id] for v in bucket_views]
        c1 = identify_c1(fp_list)
        reps = [fps[g.representative] for g in c1]
        c2, c34, mismatches = identify_c2_and_candidate_c3c4(reps)
        if resolver == "chasing":
            c3, c4, _ = identify_c3_and_c4(c34, fps, metrics, chasing=True)
        else:
            c3, c4 = [], []
            for pair in c34:
                metrics.pairs_total += 1
                record = _oracle_resolve_pair(pair, fps, metrics)
                (c4 if record.is_contradictory() else c3).append(record)
        buckets[sig] = SchemaBucket(
            signature=sig,
            view_ids=tuple(v.view_id for v in bucket_views),
            c1_groups=c1,
            c2=c2,
            c34_pairs=c34,
            c3=c3,
            c4=c4,
            duplicate_count_mismatches=mismatches,
        )
    return FourCResult(buckets=buckets, metrics=metrics)


def classify(views, metrics: ClassifyMetrics | None = None) -> FourCResult:
    """4C classification with contradiction chasing."""
    return _run(views, metrics if metrics is not None else ClassifyMetrics(), "chasing")


def no_chasing_oracle(views, metrics: ClassifyMetrics | None = None) -> FourCResult:
    """Baseline: hashing settles compatible/contained, then exhaustive
    cell-by-cell comparison distinguishes complementary from contradictory.
    Ground truth for the classification tests."""
    return _run(views, metrics if metrics is not None else ClassifyMetrics(), "oracle")
