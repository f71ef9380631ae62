"""HTTP service driving interactive sessions for the web UI.

The API is pure delegation: every endpoint calls the same pipeline and
presentation code the CLI uses, adds paging/serialization, and persists
session state as an append-only log so sessions survive restarts.

Endpoints (all JSON unless noted):
    POST /api/v1/sessions                  create session, returns 202 + id
    GET  /api/v1/sessions/{id}             stage + timings + counts
    GET  /api/v1/sessions/{id}/views       surviving views, paged rows
    GET  /api/v1/sessions/{id}/prompt      current contradiction payload
    POST /api/v1/sessions/{id}/choice      resolve the current prompt
    GET  /api/v1/sessions/{id}/export      CSV stream (?view_id=...)
    GET  /api/v1/attributes?q=...          attribute-name autocomplete
"""

from __future__ import annotations

import csv
import io
import json
import logging
import mimetypes
import re
import threading
import uuid
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .engine import CandidateView
from .fourc import result_from_dict
from .index import DiscoveryIndex
from .pipeline import PipelineOutcome, RunConfig, run_query
from .present import (
    PromptError,
    SummarySession,
    apply_choice,
    replay,
    session_state,
)
from .search import QueryView, QueryViewError, parse_query_view

logger = logging.getLogger(__name__)

STAGES = ("searching", "classifying", "awaiting_choice", "complete", "failed")
DEFAULT_PAGE_SIZE = 50


class ApiError(Exception):
    def __init__(self, status: int, message: str, fieldpath: str | None = None):
        super().__init__(message)
        self.status = status
        self.fieldpath = fieldpath


@dataclass
class SessionRecord:
    session_id: str
    query_view: QueryView
    strategy: str
    stage: str = "searching"
    timings: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    error: str | None = None
    outcome: PipelineOutcome | None = None
    session: SummarySession | None = None
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def advance(self, stage: str) -> None:
        # Transitions are monotone along STAGES; "failed" is reachable anywhere.
        if stage == "failed":
            self.stage = stage
            return
        if STAGES.index(stage) >= STAGES.index(self.stage):
            self.stage = stage


class SessionManager:
    """Owns session lifecycle, execution threads, and on-disk persistence."""

    def __init__(self, index: DiscoveryIndex, config: RunConfig, data_dir: Path | str):
        self.index = index
        self.config = config
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.sessions: dict[str, SessionRecord] = {}
        self._lock = threading.Lock()
        self._restore_all()

    # -- creation and execution ------------------------------------------

    def create(self, doc: dict, synchronous: bool = False) -> SessionRecord:
        try:
            qv = parse_query_view({k: v for k, v in doc.items() if k in ("attributes", "tuples")})
        except QueryViewError as exc:
            raise ApiError(400, str(exc), fieldpath=str(exc).split(":")[0])
        strategy = doc.get("strategy", self.config.strategy)
        if strategy not in ("4c-summary", "multi-row"):
            raise ApiError(400, f"strategy: unknown strategy {strategy!r}", "strategy")
        record = SessionRecord(
            session_id=uuid.uuid4().hex[:12], query_view=qv, strategy=strategy
        )
        with self._lock:
            self.sessions[record.session_id] = record
        self._persist_record(record)
        if synchronous:
            self._execute(record)
        else:
            thread = threading.Thread(target=self._execute, args=(record,), daemon=True)
            thread.start()
        return record

    def _execute(self, record: SessionRecord) -> None:
        try:
            config = RunConfig(**{**self.config.__dict__, "strategy": record.strategy})
            outcome = run_query(
                self.index,
                record.query_view,
                config,
                session_id=record.session_id,
                stage_cb=lambda s: record.advance(
                    "classifying" if s == "classifying" else record.stage
                ),
            )
            with record.lock:
                record.outcome = outcome
                record.timings = outcome.report.get("timings", {})
                record.counts = outcome.report.get("counts", {})
                record.session = outcome.session
                if record.session is not None and not record.session.complete:
                    record.advance("awaiting_choice")
                else:
                    record.advance("complete")
            self._persist_outcome(record)
        except Exception as exc:  # failed is reachable from any stage
            logger.exception("session %s failed", record.session_id)
            record.error = str(exc)
            record.advance("failed")
            self._persist_record(record)

    # -- persistence ------------------------------------------------------

    def _session_dir(self, session_id: str) -> Path:
        return self.data_dir / session_id

    def _persist_record(self, record: SessionRecord) -> None:
        d = self._session_dir(record.session_id)
        d.mkdir(parents=True, exist_ok=True)
        payload = {
            "session_id": record.session_id,
            "attributes": record.query_view.attributes,
            "tuples": record.query_view.example_tuples,
            "strategy": record.strategy,
            "stage": record.stage,
            "timings": record.timings,
            "counts": record.counts,
            "error": record.error,
        }
        (d / "record.json").write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")

    def _persist_outcome(self, record: SessionRecord) -> None:
        d = self._session_dir(record.session_id)
        d.mkdir(parents=True, exist_ok=True)
        outcome = record.outcome
        views_doc = [
            {
                "view_id": v.view_id,
                "schema": list(v.schema),
                "rows": [list(r) for r in v.rows],
                "sampled": v.sampled,
                "provenance": v.provenance.to_dict() if v.provenance else None,
            }
            for v in (outcome.views if outcome else [])
        ]
        (d / "views.json").write_text(json.dumps(views_doc), encoding="utf-8")
        if outcome and outcome.result is not None:
            (d / "result.json").write_text(
                json.dumps(outcome.result.to_dict()), encoding="utf-8"
            )
        if outcome and outcome.multirow is not None:
            (d / "multirow.json").write_text(
                json.dumps([m.to_dict() for m in outcome.multirow]), encoding="utf-8"
            )
        self._persist_record(record)
        self._append_actions(record, reset=True)

    def _append_actions(self, record: SessionRecord, reset: bool = False) -> None:
        if record.session is None:
            return
        path = self._session_dir(record.session_id) / "actions.jsonl"
        entries = [e for e in record.session.action_log if e["action"].startswith("user-")]
        with open(path, "w", encoding="utf-8") as fh:
            for entry in entries:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")

    def _restore_all(self) -> None:
        for d in sorted(self.data_dir.iterdir()) if self.data_dir.exists() else []:
            record_file = d / "record.json"
            if not d.is_dir() or not record_file.exists():
                continue
            try:
                self._restore_one(d, record_file)
            except Exception:
                logger.exception("could not restore session from %s", d)

    def _restore_one(self, d: Path, record_file: Path) -> None:
        doc = json.loads(record_file.read_text(encoding="utf-8"))
        qv = QueryView(attributes=doc["attributes"], example_tuples=doc["tuples"])
        record = SessionRecord(
            session_id=doc["session_id"],
            query_view=qv,
            strategy=doc["strategy"],
            stage=doc["stage"],
            timings=doc.get("timings", {}),
            counts=doc.get("counts", {}),
            error=doc.get("error"),
        )
        views_file = d / "views.json"
        result_file = d / "result.json"
        if views_file.exists():
            views_doc = json.loads(views_file.read_text(encoding="utf-8"))
            views = [
                CandidateView(
                    view_id=v["view_id"],
                    schema=tuple(v["schema"]),
                    rows=[tuple(r) for r in v["rows"]],
                    sampled=v.get("sampled", False),
                )
                for v in views_doc
            ]
            record.outcome = PipelineOutcome(query_view=qv, views=views)
            record.outcome.report = {"timings": record.timings, "counts": record.counts}
        if result_file.exists() and record.outcome is not None:
            result = result_from_dict(json.loads(result_file.read_text(encoding="utf-8")))
            record.outcome.result = result
            if record.strategy == "4c-summary" and record.outcome.views:
                actions = []
                actions_file = d / "actions.jsonl"
                if actions_file.exists():
                    with open(actions_file, encoding="utf-8") as fh:
                        actions = [json.loads(line) for line in fh if line.strip()]
                record.session = replay(
                    result,
                    record.outcome.views_by_id(),
                    actions,
                    session_id=record.session_id,
                )
                record.outcome.session = record.session
        with self._lock:
            self.sessions[record.session_id] = record

    # -- queries -----------------------------------------------------------

    def get(self, session_id: str) -> SessionRecord:
        with self._lock:
            record = self.sessions.get(session_id)
        if record is None:
            raise ApiError(404, f"unknown session {session_id!r}")
        return record

    def status_payload(self, record: SessionRecord) -> dict:
        return {
            "session_id": record.session_id,
            "stage": record.stage,
            "strategy": record.strategy,
            "timings": record.timings,
            "counts": record.counts,
            "error": record.error,
            "prompt_outstanding": bool(record.session and record.session.next_prompt),
        }

    def surviving_views(self, record: SessionRecord):
        if record.outcome is None:
            return []
        if record.strategy == "multi-row" and record.outcome.multirow is not None:
            return record.outcome.multirow
        if record.session is not None:
            by_id = {**record.outcome.views_by_id(), **record.session.views}
            return [by_id[v] for v in record.session.pending]
        return record.outcome.views

    def views_payload(self, record: SessionRecord, page: int, page_size: int) -> dict:
        views = self.surviving_views(record)
        payload = []
        for v in views:
            rows = [list(r) for r in v.rows]
            start = page * page_size
            entry = {
                "view_id": v.view_id,
                "schema": list(v.schema),
                "row_count": len(rows),
                "rows": rows[start : start + page_size],
                "page": page,
                "page_size": page_size,
            }
            prov = getattr(v, "provenance", None)
            if prov is not None:
                entry["provenance"] = prov.to_dict()
            sources = getattr(v, "sources", None)
            if sources is not None:
                entry["union_of"] = list(sources)
            multi = getattr(v, "multi_rows", None)
            if multi is not None:
                entry["multi_rows"] = [
                    {
                        "key_attribute": m.key_attribute,
                        "key_value": m.key_value,
                        "variants": [
                            {"row": list(row), "sources": list(srcs)}
                            for row, srcs in m.variants
                        ],
                    }
                    for m in multi
                ]
            payload.append(entry)
        return {
            "session_id": record.session_id,
            "stage": record.stage,
            "views": payload,
            "pending": [v.view_id for v in views],
        }

    def prompt_payload(self, record: SessionRecord) -> dict | None:
        if record.session is None or record.session.next_prompt is None:
            return None
        prompt = record.session.next_prompt
        by_id = {**record.outcome.views_by_id(), **record.session.views}
        rec = prompt.record

        def side(view_id: str, indices, is_left: bool):
            view = by_id[view_id]
            conflict_attrs = {}
            for kv, conflicts in rec.cell_conflicts.items():
                conflict_attrs[kv] = sorted({attr for attr, _, _ in conflicts})
            rows = []
            from .norm import normalize as _n

            key_pos = None
            if rec.key_attribute is not None:
                key_pos = [_n(a) for a in view.schema].index(_n(rec.key_attribute))
            for idx in indices[:DEFAULT_PAGE_SIZE]:
                row = view.rows[idx]
                highlight = []
                if key_pos is not None:
                    kv = _n(row[key_pos])
                    if kv in rec.cell_conflicts:
                        highlight = conflict_attrs[kv]
                rows.append({"row": list(row), "highlight": highlight})
            return {"view_id": view_id, "schema": list(view.schema), "rows": rows}

        return {
            "prompt_id": prompt.prompt_id,
            "key_attribute": prompt.key_attribute,
            "contradictory_keys": list(prompt.key_values),
            "degree": prompt.degree,
            "left": side(rec.left, rec.left_only, True),
            "right": side(rec.right, rec.right_only, False),
        }

    def post_choice(self, record: SessionRecord, doc: dict) -> dict:
        if record.session is None or record.session.next_prompt is None:
            raise ApiError(409, "no prompt outstanding")
        prompt_id = doc.get("prompt_id")
        choice = doc.get("choice")
        if not isinstance(prompt_id, str) or not isinstance(choice, str):
            raise ApiError(400, "choice: body must carry prompt_id and choice", "choice")
        with record.lock:
            try:
                apply_choice(record.session, prompt_id, choice)
            except PromptError as exc:
                raise ApiError(409, str(exc))
            if record.session.complete:
                record.advance("complete")
            self._append_actions(record)
            self._persist_record(record)
        return session_state(record.session)

    def export_csv(self, record: SessionRecord, view_id: str | None) -> tuple[str, str]:
        views = self.surviving_views(record)
        if not views:
            raise ApiError(404, "session has no views to export")
        view = views[0]
        if view_id is not None:
            match = [v for v in views if v.view_id == view_id]
            if not match:
                raise ApiError(404, f"unknown view {view_id!r}")
            view = match[0]
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(view.schema)
        for row in view.rows:
            writer.writerow(row)
        for m in getattr(view, "multi_rows", []) or []:
            for row, _srcs in m.variants:
                writer.writerow(row)
        return view.view_id, buf.getvalue()


# ---------------------------------------------------------------------------
# HTTP plumbing
# ---------------------------------------------------------------------------

_SESSION_RE = re.compile(r"^/api/v1/sessions/([0-9a-f]+)(/views|/prompt|/choice|/export)?$")


class ViewServiceHandler(BaseHTTPRequestHandler):
    server_version = "viewfinder/0.1"

    @property
    def manager(self) -> SessionManager:
        return self.server.manager  # type: ignore[attr-defined]

    @property
    def static_dir(self) -> Path | None:
        return self.server.static_dir  # type: ignore[attr-defined]

    def log_message(self, fmt, *args):
        logger.debug("http: " + fmt, *args)

    def _send_json(self, status: int, payload) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _read_json(self) -> dict:
        length = int(self.headers.get("Content-Length", "0"))
        raw = self.rfile.read(length) if length else b"{}"
        try:
            doc = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ApiError(400, f"body: invalid JSON: {exc}", "body")
        if not isinstance(doc, dict):
            raise ApiError(400, "body: must be a JSON object", "body")
        return doc

    def do_GET(self):  # noqa: N802 (http.server API)
        try:
            self._route_get()
        except ApiError as exc:
            self._send_json(exc.status, {"error": str(exc), "field": exc.fieldpath})
        except Exception as exc:  # pragma: no cover - last resort
            logger.exception("GET %s failed", self.path)
            self._send_json(500, {"error": str(exc)})

    def do_POST(self):  # noqa: N802
        try:
            self._route_post()
        except ApiError as exc:
            self._send_json(exc.status, {"error": str(exc), "field": exc.fieldpath})
        except Exception as exc:  # pragma: no cover
            logger.exception("POST %s failed", self.path)
            self._send_json(500, {"error": str(exc)})

    def _route_get(self):
        url = urlparse(self.path)
        query = parse_qs(url.query)
        if url.path == "/api/v1/attributes":
            prefix = (query.get("q") or [""])[0].strip().lower()
            names = sorted(self.manager.index.attribute_index)
            hits = [n for n in names if n.startswith(prefix)] if prefix else names
            self._send_json(200, {"attributes": hits[:50]})
            return
        match = _SESSION_RE.match(url.path)
        if match:
            record = self.manager.get(match.group(1))
            sub = match.group(2)
            if sub is None:
                self._send_json(200, self.manager.status_payload(record))
            elif sub == "/views":
                page = int((query.get("page") or ["0"])[0])
                page_size = int((query.get("page_size") or [str(DEFAULT_PAGE_SIZE)])[0])
                self._send_json(200, self.manager.views_payload(record, page, page_size))
            elif sub == "/prompt":
                payload = self.manager.prompt_payload(record)
                self._send_json(200, {"prompt": payload})
            elif sub == "/export":
                view_id = (query.get("view_id") or [None])[0]
                name, body = self.manager.export_csv(record, view_id)
                data = body.encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", "text/csv; charset=utf-8")
                self.send_header(
                    "Content-Disposition", f'attachment; filename="{name}.csv"'
                )
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)
            else:
                raise ApiError(404, "not found")
            return
        self._serve_static(url.path)

    def _route_post(self):
        url = urlparse(self.path)
        if url.path == "/api/v1/sessions":
            doc = self._read_json()
            record = self.manager.create(doc)
            self._send_json(202, {"session_id": record.session_id})
            return
        match = _SESSION_RE.match(url.path)
        if match and match.group(2) == "/choice":
            record = self.manager.get(match.group(1))
            doc = self._read_json()
            self._send_json(200, self.manager.post_choice(record, doc))
            return
        raise ApiError(404, "not found")

    def _serve_static(self, path: str):
        static = self.static_dir
        if static is None:
            raise ApiError(404, "no static assets configured")
        rel = path.lstrip("/") or "index.html"
        target = (static / rel).resolve()
        if not str(target).startswith(str(static.resolve())) or not target.is_file():
            # SPA fallback: unknown paths load the app shell.
            target = static / "index.html"
            if not target.is_file():
                raise ApiError(404, "not found")
        ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
        data = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


def make_server(
    index: DiscoveryIndex,
    config: RunConfig,
    data_dir: Path | str,
    host: str = "127.0.0.1",
    port: int = 8571,
    static_dir: Path | str | None = None,
) -> ThreadingHTTPServer:
    manager = SessionManager(index, config, data_dir)
    server = ThreadingHTTPServer((host, port), ViewServiceHandler)
    server.manager = manager  # type: ignore[attr-defined]
    server.static_dir = Path(static_dir) if static_dir else None  # type: ignore[attr-defined]
    return server
