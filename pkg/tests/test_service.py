import csv
import io
import json
import threading
import urllib.error
import urllib.request
from contextlib import contextmanager

import pytest

from viewfinder.cli import main as cli_main
from viewfinder.pipeline import RunConfig
from viewfinder.service import SessionManager, make_server


# -- CLI ---------------------------------------------------------------------


def test_cli_index_and_query_round_trip(fig_corpus, tmp_path, capsys):
    index_dir = tmp_path / "idx"
    assert cli_main(["index", str(fig_corpus), "--out", str(index_dir)]) == 0
    out = capsys.readouterr().out
    assert "indexed 5 tables" in out

    qv_file = tmp_path / "qv.yaml"
    qv_file.write_text(
        "attributes:\n  - employee\n  - address\ntuples:\n  - employee: Raul CF\n"
    )
    artifacts = tmp_path / "artifacts"
    rc = cli_main(
        [
            "query",
            str(index_dir),
            str(qv_file),
            "--strategy",
            "multi-row",
            "--max-hops",
            "1",
            "--out",
            str(artifacts),
        ]
    )
    assert rc == 0
    out = capsys.readouterr().out
    assert "CG=" in out and "timings:" in out
    assert (artifacts / "run.json").exists()
    assert (artifacts / "multirow.json").exists()
    sidecars = list(artifacts.glob("*.provenance.json"))
    assert sidecars, "each view must carry a provenance sidecar"
    doc = json.loads(sidecars[0].read_text())
    assert "provenance" in doc and "edges" in doc["provenance"]


def test_cli_index_missing_directory_exits_2(tmp_path, capsys):
    rc = cli_main(["index", str(tmp_path / "nowhere"), "--out", str(tmp_path / "idx")])
    assert rc == 2
    assert "usage" in capsys.readouterr().err


def test_cli_index_zero_parseable_tables_is_fatal(tmp_path, capsys):
    (tmp_path / "corpus").mkdir()
    rc = cli_main(["index", str(tmp_path / "corpus"), "--out", str(tmp_path / "idx")])
    assert rc == 1


def test_cli_index_is_deterministic(fig_corpus, tmp_path, capsys):
    d1, d2 = tmp_path / "i1", tmp_path / "i2"
    assert cli_main(["index", str(fig_corpus), "--out", str(d1)]) == 0
    assert cli_main(["index", str(fig_corpus), "--out", str(d2)]) == 0
    for name in ("catalog.json", "values.idx"):
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()


def test_cli_query_parse_error_exits_2(fig_corpus, tmp_path, capsys):
    index_dir = tmp_path / "idx"
    cli_main(["index", str(fig_corpus), "--out", str(index_dir)])
    bad = tmp_path / "bad.yaml"
    bad.write_text("attributes: 17\n")
    assert cli_main(["query", str(index_dir), str(bad)]) == 2


def test_cli_query_empty_result_exits_0(fig_corpus, tmp_path, capsys):
    index_dir = tmp_path / "idx"
    cli_main(["index", str(fig_corpus), "--out", str(index_dir)])
    qv = tmp_path / "qv.yaml"
    qv.write_text("attributes:\n  - nonexistent_column\n")
    assert cli_main(["query", str(index_dir), str(qv)]) == 0
    out = capsys.readouterr().out
    assert "no candidate views" in out


def test_cli_query_dry_run_prints_search_counts(fig_corpus, tmp_path, capsys):
    index_dir = tmp_path / "idx"
    cli_main(["index", str(fig_corpus), "--out", str(index_dir)])
    qv = tmp_path / "qv.yaml"
    qv.write_text("attributes: [employee, address]\n")
    rc = cli_main(["query", str(index_dir), str(qv), "--dry-run", "--max-hops", "1"])
    assert rc == 0
    out = capsys.readouterr().out
    # 4 full-schema pairs + 2 partial singleton groups, one graph each;
    # materializability is unknown before any join runs
    assert "CG=6 P=4 JG=6 join_graphs=6 MG=n/a" in out


def test_cli_materialize_full_follow_up(fig_corpus, tmp_path, capsys):
    index_dir = tmp_path / "idx"
    cli_main(["index", str(fig_corpus), "--out", str(index_dir)])
    qv = tmp_path / "qv.yaml"
    qv.write_text("attributes: [employee, address]\n")
    artifacts = tmp_path / "artifacts"
    cli_main(
        [
            "query",
            str(index_dir),
            str(qv),
            "--strategy",
            "multi-row",
            "--max-hops",
            "1",
            "--sample",
            "--sample-k",
            "3",
            "--out",
            str(artifacts),
        ]
    )
    capsys.readouterr()
    sidecars = sorted(artifacts.glob("view_*.provenance.json"))
    doc = json.loads(sidecars[0].read_text())
    assert doc["sampled"] is True
    out_csv = tmp_path / "full.csv"
    rc = cli_main(
        ["materialize", str(artifacts), "--full", doc["view_id"], "--out", str(out_csv)]
    )
    assert rc == 0
    with open(out_csv) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(doc["schema"])
    assert len(rows) - 1 > doc["row_count"], "full run must exceed the sampled run"


# -- HTTP API -----------------------------------------------------------------


@contextmanager
def _server(index, data_dir, static_dir=None):
    config = RunConfig(max_hops=1)
    server = make_server(index, config, data_dir, port=0, static_dir=static_dir)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_address[1]}", server
    finally:
        server.shutdown()
        server.server_close()


def _request(method, url, body=None):
    data = json.dumps(body).encode() if body is not None else None
    req = urllib.request.Request(url, data=data, method=method)
    if data:
        req.add_header("Content-Type", "application/json")
    try:
        with urllib.request.urlopen(req) as resp:
            return resp.status, json.loads(resp.read() or b"{}")
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read() or b"{}")


def _wait_stage(base, sid, stages, tries=100):
    import time

    for _ in range(tries):
        status, doc = _request("GET", f"{base}/api/v1/sessions/{sid}")
        assert status == 200
        if doc["stage"] in stages:
            return doc
        time.sleep(0.05)
    raise AssertionError(f"session never reached {stages}: {doc}")


FIG_QUERY = {
    "attributes": ["employee", "address"],
    "tuples": [{"employee": "Raul CF"}],
}


def test_http_session_lifecycle(fig_index, tmp_path):
    with _server(fig_index, tmp_path / "data") as (base, _):
        status, doc = _request("POST", f"{base}/api/v1/sessions", FIG_QUERY)
        assert status == 202 and "session_id" in doc
        sid = doc["session_id"]

        doc = _wait_stage(base, sid, ("awaiting_choice", "complete"))
        assert doc["stage"] == "awaiting_choice"
        assert doc["counts"]["views"] >= 4

        status, views_doc = _request("GET", f"{base}/api/v1/sessions/{sid}/views")
        assert status == 200
        assert views_doc["pending"]

        status, prompt_doc = _request("GET", f"{base}/api/v1/sessions/{sid}/prompt")
        assert status == 200 and prompt_doc["prompt"] is not None
        prompt = prompt_doc["prompt"]
        assert prompt["key_attribute"] == "employee"
        assert prompt["left"]["rows"] and prompt["right"]["rows"]
        highlighted = [
            r["highlight"] for r in prompt["left"]["rows"] + prompt["right"]["rows"]
        ]
        assert any("address" in h for h in highlighted)

        chosen = prompt["left"]["view_id"]
        rejected = prompt["right"]["view_id"]
        status, state = _request(
            "POST",
            f"{base}/api/v1/sessions/{sid}/choice",
            {"prompt_id": prompt["prompt_id"], "choice": chosen},
        )
        assert status == 200
        status, views_after = _request("GET", f"{base}/api/v1/sessions/{sid}/views")
        assert rejected not in views_after["pending"]
        assert chosen in views_after["pending"]


def test_http_validation_and_errors(fig_index, tmp_path):
    with _server(fig_index, tmp_path / "data") as (base, _):
        status, doc = _request(
            "POST",
            f"{base}/api/v1/sessions",
            {"attributes": ["employee"], "tuples": [{"bogus": "x"}]},
        )
        assert status == 400
        assert "tuples[0].bogus" in doc["error"]

        status, _doc = _request("GET", f"{base}/api/v1/sessions/feedfacecafe")
        assert status == 404

        status, doc = _request("POST", f"{base}/api/v1/sessions", FIG_QUERY)
        sid = doc["session_id"]
        _wait_stage(base, sid, ("awaiting_choice",))
        status, doc = _request(
            "POST",
            f"{base}/api/v1/sessions/{sid}/choice",
            {"prompt_id": "p999", "choice": "skip"},
        )
        assert status == 409


def test_http_choice_after_completion_conflicts(fig_index, tmp_path):
    with _server(fig_index, tmp_path / "data") as (base, _):
        _status, doc = _request("POST", f"{base}/api/v1/sessions", FIG_QUERY)
        sid = doc["session_id"]
        _wait_stage(base, sid, ("awaiting_choice",))
        while True:
            _s, prompt_doc = _request("GET", f"{base}/api/v1/sessions/{sid}/prompt")
            prompt = prompt_doc["prompt"]
            if prompt is None:
                break
            _request(
                "POST",
                f"{base}/api/v1/sessions/{sid}/choice",
                {"prompt_id": prompt["prompt_id"], "choice": "skip"},
            )
        status, _doc = _request(
            "POST",
            f"{base}/api/v1/sessions/{sid}/choice",
            {"prompt_id": "p1", "choice": "skip"},
        )
        assert status == 409  # no prompt outstanding
        doc = _wait_stage(base, sid, ("complete",))
        assert doc["stage"] == "complete"


def test_http_export_row_count_matches_view(fig_index, tmp_path):
    with _server(fig_index, tmp_path / "data") as (base, _):
        _status, doc = _request("POST", f"{base}/api/v1/sessions", FIG_QUERY)
        sid = doc["session_id"]
        _wait_stage(base, sid, ("awaiting_choice", "complete"))
        _s, views_doc = _request("GET", f"{base}/api/v1/sessions/{sid}/views")
        target = views_doc["views"][0]
        url = f"{base}/api/v1/sessions/{sid}/export?view_id={target['view_id']}"
        with urllib.request.urlopen(url) as resp:
            assert resp.headers["Content-Type"].startswith("text/csv")
            body = resp.read().decode()
        rows = list(csv.reader(io.StringIO(body)))
        assert rows[0] == target["schema"]
        assert len(rows) - 1 == target["row_count"]


def test_http_attribute_autocomplete(fig_index, tmp_path):
    with _server(fig_index, tmp_path / "data") as (base, _):
        status, doc = _request("GET", f"{base}/api/v1/attributes?q=add")
        assert status == 200
        assert "address" in doc["attributes"]


def test_session_state_survives_restart(fig_index, tmp_path):
    data_dir = tmp_path / "data"
    config = RunConfig(max_hops=1)
    manager = SessionManager(fig_index, config, data_dir)
    record = manager.create(FIG_QUERY, synchronous=True)
    assert record.stage == "awaiting_choice"
    prompt = manager.prompt_payload(record)
    manager.post_choice(
        record, {"prompt_id": prompt["prompt_id"], "choice": prompt["left"]["view_id"]}
    )
    pending_before = [v.view_id for v in manager.surviving_views(record)]
    stage_before = record.stage

    reborn = SessionManager(fig_index, config, data_dir)
    restored = reborn.get(record.session_id)
    assert restored.stage == stage_before
    assert [v.view_id for v in reborn.surviving_views(restored)] == pending_before
    prompt_after = reborn.prompt_payload(restored)
    if prompt_after is not None:
        assert prompt_after["key_attribute"] == prompt["key_attribute"]


def test_http_layer_is_pure_delegation(fig_index, tmp_path, monkeypatch):
    """The service must call the same pipeline entry point the CLI uses."""
    import viewfinder.pipeline as pipeline_mod
    import viewfinder.service as service_mod

    calls = []
    real = pipeline_mod.run_query

    def spy(*args, **kwargs):
        calls.append(kwargs.get("session_id"))
        return real(*args, **kwargs)

    monkeypatch.setattr(service_mod, "run_query", spy)
    manager = SessionManager(fig_index, RunConfig(max_hops=1), tmp_path / "data")
    record = manager.create(FIG_QUERY, synchronous=True)
    assert calls == [record.session_id]


def test_static_files_served(fig_index, tmp_path):
    static = tmp_path / "static"
    static.mkdir()
    (static / "index.html").write_text("<html><body>app shell</body></html>")
    with _server(fig_index, tmp_path / "data", static_dir=static) as (base, _):
        with urllib.request.urlopen(f"{base}/") as resp:
            assert b"app shell" in resp.read()
        with urllib.request.urlopen(f"{base}/unknown/route") as resp:
            assert b"app shell" in resp.read()  # SPA fallback
