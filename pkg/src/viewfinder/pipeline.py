"""End-to-end query pipeline: search, join, classify, present.

Stages are individually timed under the categories used by the reports
(does_join, does_materialize, materialize, fourc, other) so the timing
breakdown can be checked against total wall time.
"""

from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

from .catalog import TableStore
from .engine import (
    CandidateView,
    EngineCaches,
    EngineConfig,
    EngineError,
    JoinStats,
    JoinTypeMismatch,
    check_materializable,
    materialize_join_graph,
)
from .fourc import FourCResult, classify
from .index import DiscoveryIndex, join_paths
from .present import MultiRowView, SummarySession, multi_row, summarize
from .search import (
    CandidateGroup,
    QueryView,
    find_candidate_groups,
    find_candidate_tables,
    find_join_graphs,
)

logger = logging.getLogger(__name__)


@dataclass
class RunConfig:
    theta_containment: float = 0.8
    theta_uniqueness: float = 0.9
    max_hops: int = 2
    sample_k: int = 1000
    memory_budget: int = 512 * 1024 * 1024
    joingraph_cap: int = 50
    strategy: str = "4c-summary"
    sample_mode: bool = False
    include_constraint_keys: bool = False
    exhaustive_limit: int = 16
    temp_dir: str | None = None

    def validate(self) -> None:
        if not (0.0 < self.theta_containment <= 1.0):
            raise ValueError("theta_containment must be in (0, 1]")
        if not (0.0 < self.theta_uniqueness <= 1.0):
            raise ValueError("theta_uniqueness must be in (0, 1]")
        if self.max_hops < 1:
            raise ValueError("max_hops must be >= 1")
        if self.sample_k < 1:
            raise ValueError("sample_k must be >= 1")
        if self.memory_budget < 1:
            raise ValueError("memory_budget must be positive")
        if self.joingraph_cap < 1:
            raise ValueError("joingraph_cap must be >= 1")
        if self.strategy not in ("4c-summary", "multi-row"):
            raise ValueError("strategy must be '4c-summary' or 'multi-row'")

    def engine_config(self) -> EngineConfig:
        return EngineConfig(
            sample_k=self.sample_k,
            memory_budget=self.memory_budget,
            include_constraint_keys=self.include_constraint_keys,
            temp_dir=self.temp_dir,
        )


class StageTimer:
    def __init__(self):
        self.times: dict[str, float] = {}

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.times[name] = self.times.get(name, 0.0) + time.perf_counter() - start

    def report(self, total: float) -> dict:
        out = {k: round(v, 6) for k, v in sorted(self.times.items())}
        out["total"] = round(total, 6)
        return out


@dataclass
class PipelineOutcome:
    query_view: QueryView
    views: list[CandidateView] = field(default_factory=list)
    result: FourCResult | None = None
    session: SummarySession | None = None
    multirow: list[MultiRowView] | None = None
    report: dict = field(default_factory=dict)
    discarded: list[dict] = field(default_factory=list)

    def views_by_id(self) -> dict[str, CandidateView]:
        return {v.view_id: v for v in self.views}


def run_query(
    index: DiscoveryIndex,
    qv: QueryView,
    config: RunConfig | None = None,
    caches: EngineCaches | None = None,
    stats: JoinStats | None = None,
    session_id: str = "session",
    dry_run: bool = False,
    stage_cb=None,
) -> PipelineOutcome:
    """Run the full pipeline for one query view.

    Returns an outcome carrying the candidate views, the classification, the
    presentation product for the configured strategy, and a report with the
    search statistics (CG, P, JG, join graphs, MG) and stage timings.
    """
    config = config or RunConfig()
    config.validate()
    if caches is None:
        caches = EngineCaches(tables=index.store())
    stats = stats if stats is not None else JoinStats()
    timer = StageTimer()
    notify = stage_cb or (lambda stage: None)
    outcome = PipelineOutcome(query_view=qv)
    total_start = time.perf_counter()

    notify("searching")
    with timer.stage("other"):
        candidates = find_candidate_tables(index, qv)
        groups = find_candidate_groups(candidates, qv, exhaustive_limit=config.exhaustive_limit)

    pairs_probed: set[tuple[str, str]] = set()

    def cached_paths(a: str, b: str, hops: int):
        key = (a, b, hops) if a <= b else (b, a, hops)
        pairs_probed.add((key[0], key[1]))
        if key not in caches.joinpaths:
            caches.joinpaths[key] = join_paths(index, key[0], key[1], hops)
        paths = caches.joinpaths[key]
        if a <= b:
            return paths
        return [p.reversed() for p in paths]

    joinable: list[tuple[CandidateGroup, list]] = []
    truncated_groups = 0
    with timer.stage("does_join"):
        for group in groups:
            graphs, truncated = find_join_graphs(
                index,
                group,
                max_hops=config.max_hops,
                cap=config.joingraph_cap,
                path_fn=cached_paths,
            )
            if truncated:
                truncated_groups += 1
            if graphs:
                joinable.append((group, graphs))

    total_graphs = sum(len(g) for _, g in joinable)
    counts = {
        "candidate_tables": len(candidates),
        "candidate_groups": len(groups),
        "table_pairs": len(pairs_probed),
        "joinable_groups": len(joinable),
        "join_graphs": total_graphs,
        "materializable_graphs": None,
        "views": None,
        "truncated_groups": truncated_groups,
    }
    if dry_run or not groups:
        outcome.report = {
            "counts": counts,
            "timings": timer.report(time.perf_counter() - total_start),
            "empty": not groups,
            "dry_run": dry_run,
        }
        return outcome

    mode = "sample" if config.sample_mode else "full"
    engine_cfg = config.engine_config()

    notify("materializing")
    materializable: list[tuple[CandidateGroup, object]] = []
    with timer.stage("does_materialize"):
        for group, graphs in joinable:
            constraints = sorted(group.fulfilled.value_hits)
            schema = _schema_for(qv, group)
            for graph in graphs:
                try:
                    ok, _, _ = check_materializable(
                        graph,
                        constraints,
                        caches.tables,
                        caches,
                        stats,
                        schema=schema,
                        mode=mode,
                        sample_k=config.sample_k,
                        config=engine_cfg,
                    )
                except JoinTypeMismatch as exc:
                    outcome.discarded.append({"graph": [e.as_tuple() for e in graph.edges], "reason": str(exc)})
                    continue
                if ok:
                    materializable.append((group, graph))

    counts["materializable_graphs"] = len(materializable)

    views: list[CandidateView] = []
    with timer.stage("materialize"):
        for n, (group, graph) in enumerate(materializable, start=1):
            schema = _schema_for(qv, group)
            try:
                view = materialize_join_graph(
                    graph,
                    caches.tables,
                    stats,
                    schema=schema,
                    mode=mode,
                    sample_k=config.sample_k,
                    config=engine_cfg,
                    view_id=f"view_{n:03d}",
                )
            except (JoinTypeMismatch, EngineError) as exc:
                outcome.discarded.append({"graph": [e.as_tuple() for e in graph.edges], "reason": str(exc)})
                continue
            views.append(view)

    counts["views"] = len(views)
    outcome.views = views

    if views:
        notify("classifying")
        with timer.stage("fourc"):
            outcome.result = classify(views)
        with timer.stage("other"):
            by_id = outcome.views_by_id()
            if config.strategy == "multi-row":
                outcome.multirow = multi_row(outcome.result, by_id)
            else:
                outcome.session = summarize(outcome.result, by_id, session_id=session_id)

    outcome.report = {
        "counts": counts,
        "timings": timer.report(time.perf_counter() - total_start),
        "empty": not views,
        "dry_run": False,
        "fourc_metrics": outcome.result.metrics.to_dict() if outcome.result else None,
        "strategy": config.strategy,
        "sampled": config.sample_mode,
    }
    return outcome


def _schema_for(qv: QueryView, group: CandidateGroup) -> tuple[str, ...]:
    """Query-view attributes the group fulfills, in query-view order."""
    return tuple(a for a in qv.attributes if a in group.fulfilled.attribute_hits)


def materialize_full_view(
    index: DiscoveryIndex,
    graph_dict: dict,
    schema: tuple[str, ...],
    view_id: str,
    config: RunConfig | None = None,
) -> CandidateView:
    """Re-materialize a previously discovered view in full from its persisted
    provenance (the follow-up for views first built from samples)."""
    from .search import ConstraintSet, JoinEdgeSpec, JoinGraph

    config = config or RunConfig()
    edges = tuple(JoinEdgeSpec(*e) for e in graph_dict["edges"])
    graph = JoinGraph(
        nodes=tuple(graph_dict["nodes"]),
        edges=edges,
        fulfilled=ConstraintSet(),
        group_tables=tuple(graph_dict["group_tables"]),
    )
    stats = JoinStats()
    return materialize_join_graph(
        graph,
        index.store(),
        stats,
        schema=schema,
        mode="full",
        config=config.engine_config(),
        view_id=view_id,
    )
