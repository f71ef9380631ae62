"""Presentation strategies: shrink the classified view space.

`summarize` drives the interactive strategy: compatible groups collapse to a
representative, contained groups keep the largest container, complementary
views union, and contradictory views wait on user prompts, largest
contradiction first. Every automatic action lands in a replayable log.
`multi_row` is the zero-interaction strategy: one view per schema group with
contradictory keys expanded into multi-rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .fourc import FourCResult, PairRecord
from .norm import cell_hash128, combine128, normalize


class PromptError(ValueError):
    """Unknown or stale prompt, or a choice that is not part of the prompt."""


@dataclass
class UnionView:
    view_id: str
    schema: tuple[str, ...]
    rows: list[tuple[str, ...]]
    sources: list[str]
    row_sources: list[tuple[str, ...]] = field(default_factory=list)


@dataclass
class Prompt:
    prompt_id: str
    schema: tuple[str, ...]
    left: str
    right: str
    key_attribute: str | None
    key_values: tuple[str, ...]
    degree: int
    record: PairRecord


@dataclass
class MultiRow:
    key_attribute: str
    key_value: str
    variants: list[tuple[tuple[str, ...], tuple[str, ...]]]  # (row, source view ids)


@dataclass
class MultiRowView:
    view_id: str
    schema: tuple[str, ...]
    rows: list[tuple[str, ...]]
    row_sources: list[tuple[str, ...]]
    multi_rows: list[MultiRow]

    def to_dict(self) -> dict:
        return {
            "view_id": self.view_id,
            "schema": list(self.schema),
            "rows": [list(r) for r in self.rows],
            "row_sources": [list(s) for s in self.row_sources],
            "multi_rows": [
                {
                    "key_attribute": m.key_attribute,
                    "key_value": m.key_value,
                    "variants": [
                        {"row": list(row), "sources": list(srcs)} for row, srcs in m.variants
                    ],
                }
                for m in self.multi_rows
            ],
        }


@dataclass
class SummarySession:
    session_id: str
    result: FourCResult
    views: dict[str, object]  # view id -> object with .schema and .rows
    pending: list[str] = field(default_factory=list)
    action_log: list[dict] = field(default_factory=list)
    prompts: list[Prompt] = field(default_factory=list)
    handled_pairs: set = field(default_factory=set)
    prompt_counter: int = 0
    prompts_shown: int = 0
    choices_made: int = 0

    @property
    def next_prompt(self) -> Prompt | None:
        return self.prompts[0] if self.prompts else None

    @property
    def complete(self) -> bool:
        return not self.prompts

    def log(self, kind: str, **payload) -> None:
        self.action_log.append({"action": kind, **payload})


def _reorder(view, schema: tuple[str, ...]) -> list[tuple[str, ...]]:
    """Rows of a view re-projected to the canonical attribute order."""
    own = [normalize(a) for a in view.schema]
    positions = [own.index(normalize(a)) for a in schema]
    return [tuple(row[p] for p in positions) for row in view.rows]


def _row_hash(schema: tuple[str, ...], row: tuple[str, ...]) -> int:
    return combine128(cell_hash128(a, c) for a, c in zip(schema, row))


def summarize(result: FourCResult, views: dict[str, object], session_id: str = "session") -> SummarySession:
    """Build an interactive reduction session from a classification result."""
    if not result.buckets:
        raise ValueError("cannot summarize an empty classification result")
    session = SummarySession(session_id=session_id, result=result, views=dict(views))
    alive_all: list[str] = []
    for sig in sorted(result.buckets):
        bucket = result.buckets[sig]
        alive = set(bucket.view_ids)
        schema = _bucket_schema(result, views, sig)

        for group in bucket.c1_groups:
            if len(group.members) > 1:
                removed = [m for m in group.members if m != group.representative]
                alive -= set(removed)
                session.log(
                    "summarize-compatible",
                    schema=list(sig),
                    kept=group.representative,
                    removed=removed,
                )

        dropped: set[str] = set()
        for entry in bucket.c2:
            inside = [v for v in entry.contained if v in alive]
            if not inside:
                continue
            dropped.update(inside)
            session.log(
                "keep-max-contained",
                schema=list(sig),
                kept=entry.container,
                removed=sorted(inside),
            )
        alive -= dropped

        in_c4 = set()
        for record in bucket.c4:
            if record.left in alive and record.right in alive:
                in_c4.add(record.left)
                in_c4.add(record.right)

        components = _complementary_components(bucket.c3, alive, in_c4)
        for n, members in enumerate(components):
            if len(members) < 2:
                continue
            union = _union_views(
                members, views, schema, view_id=f"union_{_sig_tag(sig)}_{n}"
            )
            session.views[union.view_id] = union
            alive -= set(members)
            alive.add(union.view_id)
            session.log(
                "union-complementary",
                schema=list(sig),
                created=union.view_id,
                members=sorted(members),
            )

        alive_all.extend(sorted(alive))

    session.pending = sorted(alive_all)
    _rebuild_prompts(session)
    return session


def _sig_tag(sig: tuple[str, ...]) -> str:
    return "-".join(sig)


def _bucket_schema(result: FourCResult, views: dict[str, object], sig) -> tuple[str, ...]:
    first = result.buckets[sig].view_ids[0]
    return tuple(views[first].schema)


def _complementary_components(c3: list[PairRecord], alive: set, excluded: set) -> list[list[str]]:
    """Connected components over complementary pairs whose endpoints are
    alive and free of contradictions."""
    adj: dict[str, set[str]] = {}
    for record in c3:
        a, b = record.left, record.right
        if a in alive and b in alive and a not in excluded and b not in excluded:
            adj.setdefault(a, set()).add(b)
            adj.setdefault(b, set()).add(a)
    seen: set[str] = set()
    components = []
    for start in sorted(adj):
        if start in seen:
            continue
        comp = []
        stack = [start]
        seen.add(start)
        while stack:
            cur = stack.pop()
            comp.append(cur)
            for nxt in adj[cur]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        components.append(sorted(comp))
    return components


def _union_views(members, views, schema, view_id: str) -> UnionView:
    rows: list[tuple[str, ...]] = []
    row_sources: list[tuple[str, ...]] = []
    seen: dict[int, int] = {}
    contributors: dict[int, set[str]] = {}
    for member in sorted(members):
        for row in _reorder(views[member], schema):
            h = _row_hash(schema, row)
            if h not in seen:
                seen[h] = len(rows)
                rows.append(row)
                contributors[h] = set()
            contributors[h].add(member)
    for row in rows:
        h = _row_hash(schema, row)
        row_sources.append(tuple(sorted(contributors[h])))
    return UnionView(
        view_id=view_id,
        schema=schema,
        rows=rows,
        sources=sorted(members),
        row_sources=row_sources,
    )


def _rebuild_prompts(session: SummarySession) -> None:
    alive = set(session.pending)
    candidates: list[tuple[int, str, str, PairRecord, tuple[str, ...]]] = []
    for sig in sorted(session.result.buckets):
        bucket = session.result.buckets[sig]
        degree: dict[str, int] = {}
        for record in bucket.c4:
            pair_key = (record.left, record.right)
            if pair_key in session.handled_pairs:
                continue
            if record.left in alive and record.right in alive:
                degree[record.left] = degree.get(record.left, 0) + 1
                degree[record.right] = degree.get(record.right, 0) + 1
        for record in bucket.c4:
            pair_key = (record.left, record.right)
            if pair_key in session.handled_pairs:
                continue
            if record.left in alive and record.right in alive:
                deg = max(degree.get(record.left, 0), degree.get(record.right, 0))
                candidates.append((deg, record.left, record.right, record, sig))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    prompts = []
    for deg, left, right, record, sig in candidates:
        session.prompt_counter += 1
        prompts.append(
            Prompt(
                prompt_id=f"p{session.prompt_counter}",
                schema=_bucket_schema(session.result, session.views, sig),
                left=left,
                right=right,
                key_attribute=record.key_attribute,
                key_values=record.key_values,
                degree=deg,
                record=record,
            )
        )
    session.prompts = prompts
    if prompts:
        session.prompts_shown += 1


def _loser_evidence(record: PairRecord, loser_is_left: bool):
    """Identity of a contradiction from the losing side's perspective: the
    key attribute plus (key value, attribute, losing cell value) triples."""
    out = set()
    for kv, conflicts in record.cell_conflicts.items():
        for attr, left_val, right_val in conflicts:
            out.add((kv, attr, left_val if loser_is_left else right_val))
    return (record.key_attribute, frozenset(out))


def apply_choice(session: SummarySession, prompt_id: str, choice: str) -> SummarySession:
    """Resolve the current contradiction prompt.

    Choosing a view prunes the other one plus every pending view that loses
    to the chosen view with identical contradiction evidence; "skip" leaves
    both views pending and moves to the next contradiction.
    """
    prompt = session.next_prompt
    if prompt is None:
        raise PromptError("no prompt outstanding")
    if prompt.prompt_id != prompt_id:
        raise PromptError(f"stale prompt id {prompt_id!r}; current is {prompt.prompt_id!r}")
    if choice not in (prompt.left, prompt.right, "skip"):
        raise PromptError(f"choice {choice!r} is not part of prompt {prompt_id!r}")

    session.handled_pairs.add((prompt.left, prompt.right))
    if choice == "skip":
        session.log("user-skip", prompt_id=prompt_id, left=prompt.left, right=prompt.right)
        session.choices_made += 1
        _rebuild_prompts(session)
        return session

    winner = choice
    loser = prompt.right if winner == prompt.left else prompt.left
    loser_evidence = _loser_evidence(prompt.record, loser_is_left=(loser == prompt.record.left))

    pruned = {loser}
    for sig in sorted(session.result.buckets):
        for record in session.result.buckets[sig].c4:
            other = None
            if record.left == winner and record.right in session.pending:
                other = record.right
                other_is_left = False
            elif record.right == winner and record.left in session.pending:
                other = record.left
                other_is_left = True
            if other is None or other == winner or other in pruned:
                continue
            if _loser_evidence(record, loser_is_left=other_is_left) == loser_evidence:
                pruned.add(other)
                session.handled_pairs.add((record.left, record.right))

    session.pending = [v for v in session.pending if v not in pruned]
    session.log(
        "user-choice",
        prompt_id=prompt_id,
        chosen=winner,
        rejected=loser,
        pruned=sorted(pruned),
    )
    session.choices_made += 1
    _rebuild_prompts(session)
    return session


def replay(result: FourCResult, views: dict[str, object], action_log: list[dict], session_id: str = "replay") -> SummarySession:
    """Reconstruct a session from the original classification plus its log.
    Automatic actions are recomputed; logged user actions are re-applied."""
    session = summarize(result, views, session_id=session_id)
    for entry in action_log:
        if entry["action"] == "user-choice":
            prompt = session.next_prompt
            if prompt is None:
                raise PromptError("log replays a choice but no prompt is outstanding")
            apply_choice(session, prompt.prompt_id, entry["chosen"])
        elif entry["action"] == "user-skip":
            prompt = session.next_prompt
            if prompt is None:
                raise PromptError("log replays a skip but no prompt is outstanding")
            apply_choice(session, prompt.prompt_id, "skip")
    return session


def multi_row(result: FourCResult, views: dict[str, object]) -> list[MultiRowView]:
    """One unioned view per schema group; keys with contradictions become
    multi-rows carrying every variant with source-view attribution."""
    out: list[MultiRowView] = []
    for n, sig in enumerate(sorted(result.buckets)):
        bucket = result.buckets[sig]
        schema = _bucket_schema(result, views, sig)
        union = _union_views(list(bucket.view_ids), views, schema, view_id=f"multirow_{n}")

        contradicted: dict[tuple[str, str], None] = {}
        for record in bucket.c4:
            if record.key_attribute is None:
                continue
            for kv in record.key_values:
                contradicted.setdefault((record.key_attribute, kv))

        multi_rows: list[MultiRow] = []
        plain_rows: list[tuple[str, ...]] = []
        plain_sources: list[tuple[str, ...]] = []
        norm_schema = [normalize(a) for a in schema]
        claimed: set[int] = set()
        for key_attr, kv in sorted(contradicted):
            pos = norm_schema.index(normalize(key_attr))
            indices = [i for i, row in enumerate(union.rows) if normalize(row[pos]) == kv]
            if len(indices) < 2:
                continue  # a multi-row needs actual variants
            claimed.update(indices)
            multi_rows.append(
                MultiRow(
                    key_attribute=key_attr,
                    key_value=kv,
                    variants=[(union.rows[i], union.row_sources[i]) for i in indices],
                )
            )
        for i, row in enumerate(union.rows):
            if i not in claimed:
                plain_rows.append(row)
                plain_sources.append(union.row_sources[i])
        out.append(
            MultiRowView(
                view_id=union.view_id,
                schema=schema,
                rows=plain_rows,
                row_sources=plain_sources,
                multi_rows=multi_rows,
            )
        )
    return out


def session_state(session: SummarySession) -> dict:
    """JSON-ready snapshot of a session (audit/export document)."""
    return {
        "session_id": session.session_id,
        "pending_views": list(session.pending),
        "complete": session.complete,
        "prompts_shown": session.prompts_shown,
        "choices_made": session.choices_made,
        "action_log": list(session.action_log),
        "next_prompt": session.next_prompt.prompt_id if session.next_prompt else None,
    }


def dump_action_log(session: SummarySession) -> str:
    return json.dumps(session.action_log, sort_keys=True, indent=2)
