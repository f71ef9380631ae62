import random
from collections import Counter

import pytest

from corpora import write_csv

from viewfinder.catalog import LoadedTable, TableStore
from viewfinder.engine import (
    DeadEndCache,
    EngineCaches,
    EngineConfig,
    JoinStats,
    JoinTypeMismatch,
    Relation,
    check_materializable,
    consistent_sample,
    estimate_join_cardinality,
    join_two,
    materialize_join_graph,
    top_k_hash_keys,
)
from viewfinder.norm import sample_hash64
from viewfinder.search import ConstraintSet, JoinEdgeSpec, JoinGraph


def _rel(table, cols, rows):
    return Relation.from_table(LoadedTable(table, list(cols), [tuple(r) for r in rows]))


def _spec(lt, lc, rt, rc):
    return JoinEdgeSpec.from_refs((lt, lc), (rt, rc))


def _graph(tables, edges, attrs=()):
    nodes = set(tables)
    for e in edges:
        nodes.update(e.tables())
    return JoinGraph(
        nodes=tuple(sorted(nodes)),
        edges=tuple(sorted(edges, key=JoinEdgeSpec.as_tuple)),
        fulfilled=ConstraintSet(frozenset(attrs), frozenset()),
        group_tables=tuple(sorted(tables)),
    )


# -- consistent sampling -------------------------------------------------------


def test_two_copies_sample_to_identical_keys():
    rows = [(str(i), f"x{i}") for i in range(200)]
    s1 = consistent_sample(list(rows), 0, 25)
    s2 = consistent_sample(list(reversed(rows)), 0, 25)
    assert {r[0] for r in s1} == {r[0] for r in s2}
    assert len({r[0] for r in s1}) == 25


def test_sample_whole_table_when_k_exceeds_distinct():
    rows = [(str(i % 10), str(i)) for i in range(50)]
    assert sorted(consistent_sample(rows, 0, 10)) == sorted(rows)
    assert sorted(consistent_sample(rows, 0, 999)) == sorted(rows)


def test_sample_overlap_matches_hash_rank_oracle():
    """Shared join-key values survive sampling in both tables exactly when
    their hash ranks clear K in both tables (exact-rank oracle)."""
    rng = random.Random(3)
    shared = [f"s{i}" for i in range(50)]
    only1 = [f"a{i}" for i in range(40)]
    only2 = [f"b{i}" for i in range(70)]
    rows1 = [(v, "t1") for v in shared + only1]
    rows2 = [(v, "t2") for v in shared + only2]
    rng.shuffle(rows1)
    rng.shuffle(rows2)
    k = 10
    keys1 = {r[0] for r in consistent_sample(rows1, 0, k)}
    keys2 = {r[0] for r in consistent_sample(rows2, 0, k)}

    def oracle_top(values):
        return set(sorted(values, key=lambda v: (sample_hash64(v), v))[:k])

    assert keys1 == oracle_top(shared + only1)
    assert keys2 == oracle_top(shared + only2)
    assert keys1 & set(shared) == oracle_top(shared + only1) & set(shared)
    assert keys1 & keys2 == oracle_top(shared + only1) & oracle_top(shared + only2)


def test_top_k_ignores_empty_keys():
    assert top_k_hash_keys(["", "a", "  "], 5) == {"a"}


# -- cardinality estimation -----------------------------------------------------


def test_estimate_scales_linearly():
    left = [(str(i),) for i in range(100)]
    right = [(str(i), "x") for i in range(100) for _ in range(2)]
    est_rows, est_bytes = estimate_join_cardinality(left, right, 0, 0, 0.1)
    # 10 sampled keys, 2 matches each -> 20 observed, scaled by 10
    assert est_rows == 200
    assert est_bytes > 0


def test_estimate_zero_when_sample_joins_nothing():
    left = [(str(i),) for i in range(50)]
    right = [(str(1000 + i), "x") for i in range(50)]
    est_rows, est_bytes = estimate_join_cardinality(left, right, 0, 0, 0.2)
    assert (est_rows, est_bytes) == (0, 0)


def test_estimate_within_20pct_on_uniform_join():
    # every left key matches exactly 3 right rows: exact join oracle
    left = [(str(i), "l") for i in range(400)]
    right = [(str(i), f"r{j}") for i in range(400) for j in range(3)]
    true_cardinality = 1200
    est_rows, _ = estimate_join_cardinality(left, right, 0, 0, 0.1)
    assert abs(est_rows - true_cardinality) <= 0.2 * true_cardinality


# -- two-way joins ---------------------------------------------------------------


def test_strategy_threshold_rule():
    left = _rel("l", ["k", "x"], [(str(i), "x" * 50) for i in range(200)])
    right = _rel("r", ["k", "y"], [(str(i), "y" * 50) for i in range(200)])
    spec = _spec("l", "k", "r", "k")
    stats = JoinStats()
    # tiny budget forces the estimate over it -> external
    join_two(left, right, spec, stats, EngineConfig(memory_budget=1000, temp_dir=None))
    assert stats.last_entry()["strategy"] == "external"
    stats2 = JoinStats()
    join_two(left, right, spec, stats2, EngineConfig(memory_budget=10**9))
    assert stats2.last_entry()["strategy"] == "memory"


def test_strategies_agree_on_randomized_inputs():
    rng = random.Random(11)
    for trial in range(10):
        n_left = rng.randint(10, 400)
        n_right = rng.randint(10, 400)
        keyspace = rng.randint(5, 60)
        left = _rel(
            "l",
            ["k", "x"],
            [(str(rng.randint(0, keyspace)), f"x{rng.randint(0, 5)}") for _ in range(n_left)],
        )
        right = _rel(
            "r",
            ["k", "y"],
            [(str(rng.randint(0, keyspace)), f"y{rng.randint(0, 5)}") for _ in range(n_right)],
        )
        spec = _spec("l", "k", "r", "k")
        mem = join_two(left, right, spec, JoinStats(), strategy="memory")
        ext = join_two(left, right, spec, JoinStats(), strategy="external")
        assert Counter(mem.rows) == Counter(ext.rows), f"trial {trial}"


def test_absent_key_yields_empty_output_and_zero_logged():
    left = _rel("l", ["k"], [("1",), ("2",)])
    right = _rel("r", ["k"], [("9",)])
    stats = JoinStats()
    out = join_two(left, right, _spec("l", "k", "r", "k"), stats, strategy="memory")
    assert out.rows == []
    assert stats.last_entry()["cardinality"] == 0


def test_null_join_keys_never_match():
    left = _rel("l", ["k", "x"], [("", "a"), ("1", "b")])
    right = _rel("r", ["k", "y"], [("", "c"), ("1", "d")])
    out = join_two(left, right, _spec("l", "k", "r", "k"), JoinStats(), strategy="memory")
    assert len(out.rows) == 1


def test_numeric_text_join_keys_compare_canonically():
    left = _rel("l", ["k"], [("07",), ("2",)])
    right = _rel("r", ["k"], [("7",), ("2.0",)])
    out = join_two(left, right, _spec("l", "k", "r", "k"), JoinStats(), strategy="memory")
    assert len(out.rows) == 2


def test_join_type_mismatch_raises():
    left = _rel("l", ["k"], [("1",), ("2",)])
    right = _rel("r", ["k"], [("alpha",), ("beta",)])
    with pytest.raises(JoinTypeMismatch):
        join_two(left, right, _spec("l", "k", "r", "k"), JoinStats())


def test_external_join_spills_partition_files(tmp_path):
    left = _rel("l", ["k", "x"], [(str(i), "x" * 30) for i in range(500)])
    right = _rel("r", ["k", "y"], [(str(i), "y" * 30) for i in range(500)])
    stats = JoinStats()
    join_two(
        left,
        right,
        _spec("l", "k", "r", "k"),
        stats,
        EngineConfig(memory_budget=2000, temp_dir=str(tmp_path)),
        strategy="external",
    )
    entry = stats.last_entry()
    assert entry["strategy"] == "external"
    assert entry["spill_files"] > 0
    assert entry["cardinality"] == 500


# -- materialization ---------------------------------------------------------------


def _store_with(tmp_path, tables: dict):
    store = TableStore()
    for tid, rows in tables.items():
        path = tmp_path / f"{tid}.csv"
        write_csv(path, rows)
        store.register(tid, path)
    return store


def test_materialize_two_table_join_matches_nested_loop_oracle(tmp_path):
    store = _store_with(
        tmp_path,
        {
            "employees": [("EID", "employee"), ("1", "Raul CF"), ("2", "Nan T"), ("3", "Mike S"), ("4", "Sam M")],
            "staff": [("EID", "address"), ("1", "Flea Av 1"), ("2", "Flea Av 2"), ("3", "Flea Av 3")],
        },
    )
    graph = _graph(
        ("employees", "staff"),
        [_spec("employees", "EID", "staff", "EID")],
        attrs=("employee", "address"),
    )
    view = materialize_join_graph(
        graph, store, JoinStats(), schema=("employee", "address")
    )
    # independent nested-loop oracle over the raw csv rows
    emp = [("1", "Raul CF"), ("2", "Nan T"), ("3", "Mike S"), ("4", "Sam M")]
    staff = [("1", "Flea Av 1"), ("2", "Flea Av 2"), ("3", "Flea Av 3")]
    oracle = [
        (e[1], s[1]) for e in emp for s in staff if e[0] == s[0]
    ]
    assert sorted(view.rows) == sorted(oracle)
    assert len(view.rows) == 3


def test_chain_join_starts_at_a_leaf(tmp_path):
    store = _store_with(
        tmp_path,
        {
            "a": [("ka", "x"), ("1", "p")],
            "b": [("ka", "kb"), ("1", "7")],
            "c": [("kb", "y"), ("7", "q")],
        },
    )
    graph = _graph(
        ("a", "b", "c"),
        [_spec("a", "ka", "b", "ka"), _spec("b", "kb", "c", "kb")],
        attrs=("x", "y"),
    )
    stats = JoinStats()
    view = materialize_join_graph(graph, store, stats, schema=("x", "y"))
    assert view.rows == [("p", "q")]
    first = stats.entries[0]["key"]
    # the first executed join is one of the two leaf edges, never a non-edge pair
    leaf_keys = {
        JoinStats.key("a", "b", "ka", "ka"),
        JoinStats.key("b", "c", "kb", "kb"),
    }
    assert first in leaf_keys


def test_zero_edge_graph_projects_single_table(tmp_path):
    store = _store_with(tmp_path, {"t": [("a", "b"), ("1", "2"), ("3", "4")]})
    graph = _graph(("t",), [], attrs=("a",))
    view = materialize_join_graph(graph, store, JoinStats(), schema=("a",))
    assert view.rows == [("1",), ("3",)]


def test_join_order_prefers_smallest_observed_cardinality(tmp_path):
    # star: hub joined with big (fans out) and small (restrictive)
    hub = [("k", "h")] + [(str(i), f"h{i}") for i in range(30)]
    big = [("k", "b")] + [(str(i), f"b{i}-{j}") for i in range(30) for j in range(5)]
    small = [("k", "s")] + [("1", "s1"), ("2", "s2")]
    store = _store_with(tmp_path, {"hub": hub, "big": big, "small": small})
    e_big = _spec("big", "k", "hub", "k")
    e_small = _spec("hub", "k", "small", "k")
    graph = _graph(("big", "hub", "small"), [e_big, e_small], attrs=("h", "b", "s"))

    stats = JoinStats()
    materialize_join_graph(graph, store, stats, schema=("h",))
    # second run: stats now know both leaf joins; smallest must go first
    order = [e["key"] for e in stats.entries]
    stats_known = JoinStats()
    for e in stats.entries:
        stats_known.record(e["key"], e["cardinality"], e["strategy"])
    materialize_join_graph(graph, store, stats_known, schema=("h",))
    second_run = [e["key"] for e in stats_known.entries[2:]]
    small_key = JoinStats.key("hub", "small", "k", "k")
    big_key = JoinStats.key("big", "hub", "k", "k")
    assert second_run[0] == small_key
    assert second_run[1] == big_key


def test_sampled_materialization_marks_view(tmp_path):
    rows = [("k", "v")] + [(str(i), f"v{i}") for i in range(100)]
    other = [("k", "w")] + [(str(i), f"w{i}") for i in range(100)]
    store = _store_with(tmp_path, {"t1": rows, "t2": other})
    graph = _graph(("t1", "t2"), [_spec("t1", "k", "t2", "k")], attrs=("v", "w"))
    view = materialize_join_graph(
        graph, store, JoinStats(), schema=("v", "w"), mode="sample", sample_k=10
    )
    assert view.sampled
    assert len(view.rows) == 10


# -- materializability ---------------------------------------------------------------


def test_check_materializable_with_witness(tmp_path):
    store = _store_with(
        tmp_path,
        {
            "employees": [("EID", "employee"), ("1", "Raul CF"), ("2", "Nan T")],
            "staff": [("EID", "address"), ("1", "Flea Av 1"), ("2", "Flea Av 2")],
        },
    )
    caches = EngineCaches(tables=store)
    graph = _graph(
        ("employees", "staff"),
        [_spec("employees", "EID", "staff", "EID")],
        attrs=("employee", "address"),
    )
    ok, witnesses, view = check_materializable(
        graph,
        [("employee", "Raul CF")],
        store,
        caches,
        JoinStats(),
        schema=("employee", "address"),
    )
    assert ok
    assert witnesses and witnesses[0][0] == "Raul CF"


def test_check_materializable_vacuous_without_constraints(tmp_path):
    store = _store_with(
        tmp_path,
        {
            "a": [("k", "x"), ("1", "p")],
            "b": [("k", "y"), ("2", "q")],  # join is empty
        },
    )
    caches = EngineCaches(tables=store)
    graph = _graph(("a", "b"), [_spec("a", "k", "b", "k")], attrs=("x", "y"))
    ok, _, _ = check_materializable(graph, [], store, caches, JoinStats())
    assert not ok  # empty output is not materializable
    assert len(caches.deadends) == 1


def test_dead_end_cache_rejects_without_reads(tmp_path):
    store = _store_with(
        tmp_path,
        {
            "a": [("k", "x"), ("1", "p")],
            "b": [("k", "y"), ("2", "q")],
            "c": [("k", "z"), ("1", "r")],
        },
    )
    caches = EngineCaches(tables=store)
    stats = JoinStats()
    dead_edge = _spec("a", "k", "b", "k")
    g1 = _graph(("a", "b"), [dead_edge], attrs=("x", "y"))
    ok, _, _ = check_materializable(g1, [], store, caches, stats)
    assert not ok
    # second graph shares the dead edge; it must be rejected with zero reads
    g2 = _graph(
        ("a", "b", "c"),
        [dead_edge, _spec("a", "k", "c", "k")],
        attrs=("x", "y", "z"),
    )
    loads_before = store.loads
    ok2, _, _ = check_materializable(g2, [], store, caches, stats)
    assert not ok2
    assert store.loads == loads_before, "dead-end rejection must not read tables"


def test_dead_end_entries_are_signature_scoped(tmp_path):
    store = _store_with(
        tmp_path,
        {
            "employees": [("EID", "employee"), ("1", "Raul CF")],
            "staff": [("EID", "address"), ("1", "Flea Av 1")],
        },
    )
    caches = EngineCaches(tables=store)
    graph = _graph(
        ("employees", "staff"),
        [_spec("employees", "EID", "staff", "EID")],
        attrs=("employee", "address"),
    )
    stats = JoinStats()
    ok, _, _ = check_materializable(
        graph, [("employee", "Nobody")], store, caches, stats, schema=("employee", "address")
    )
    assert not ok and len(caches.deadends) == 1
    # a different constraint signature is not blocked by that entry
    ok2, _, _ = check_materializable(
        graph, [("employee", "Raul CF")], store, caches, stats, schema=("employee", "address")
    )
    assert ok2


def test_dead_end_cache_blocks_only_exact_entries():
    cache = DeadEndCache()
    edge = _spec("a", "k", "b", "k")
    cache.add(edge, "employee=x")
    assert cache.blocks([edge], "employee=x")
    assert not cache.blocks([edge], "employee=y")
    cache.add(edge, "")  # universal: the join itself is empty
    assert cache.blocks([edge], "employee=y")


def test_concurrent_materialization_is_safe(tmp_path):
    """Distinct join graphs materialize concurrently against shared stats
    and caches, producing the same rows as sequential runs."""
    import threading

    tables = {"hub": [("k", "h")] + [(str(i), f"h{i}") for i in range(200)]}
    for t in range(4):
        tables[f"p{t}"] = [("k", f"c{t}")] + [
            (str(i), f"val{t}-{i}") for i in range(0, 200, t + 1)
        ]
    store = _store_with(tmp_path, tables)
    stats = JoinStats()
    graphs = [
        _graph(("hub", f"p{t}"), [_spec("hub", "k", f"p{t}", "k")], attrs=("h", f"c{t}"))
        for t in range(4)
    ]
    expected = [
        sorted(
            materialize_join_graph(g, store, JoinStats(), schema=("h",)).rows
        )
        for g in graphs
    ]
    results = [None] * 4
    def work(i):
        view = materialize_join_graph(graphs[i], store, stats, schema=("h",))
        results[i] = sorted(view.rows)
    threads = [threading.Thread(target=work, args=(i,)) for i in range(4)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    assert results == expected
    assert len(stats.entries) == 4
