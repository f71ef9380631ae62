"""Command-line interface: index a corpus, run query views, serve the API,
and re-materialize a sampled view in full.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from .catalog import CorpusError
from .engine import CandidateView
from .index import IndexConfig, build_index, load_index, save_index
from .pipeline import RunConfig, materialize_full_view, run_query
from .present import apply_choice, session_state
from .search import QueryViewError, load_query_view

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_USAGE = 2


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--theta-containment", type=float, default=0.8)
    p.add_argument("--theta-uniqueness", type=float, default=0.9)
    p.add_argument("--max-hops", type=int, default=2)
    p.add_argument("--sample-k", type=int, default=1000)
    p.add_argument("--memory-budget", type=int, default=512 * 1024 * 1024)
    p.add_argument("--joingraph-cap", type=int, default=50)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viewfinder",
        description="Find, classify, and reduce candidate views over a table corpus.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_index = sub.add_parser("index", help="ingest a corpus directory and persist the index")
    p_index.add_argument("corpus", help="directory of CSV files")
    p_index.add_argument("--out", required=True, help="output index directory")
    p_index.add_argument("--theta-containment", type=float, default=0.8)
    p_index.add_argument("--theta-uniqueness", type=float, default=0.9)
    p_index.add_argument("--sketch-seed", type=int, default=0)

    p_query = sub.add_parser("query", help="run a query view against a persisted index")
    p_query.add_argument("index_dir")
    p_query.add_argument("queryview", help="YAML/JSON query-view document")
    p_query.add_argument("--strategy", choices=["4c-summary", "multi-row"], default="4c-summary")
    p_query.add_argument("--interactive", action="store_true")
    p_query.add_argument("--dry-run", action="store_true")
    p_query.add_argument("--sample", action="store_true", help="materialize consistent samples")
    p_query.add_argument("--out", help="artifacts directory (views + provenance + report)")
    p_query.add_argument("--json", action="store_true", help="print the report as JSON")
    _add_run_flags(p_query)

    p_serve = sub.add_parser("serve", help="serve the HTTP API (and static UI if present)")
    p_serve.add_argument("index_dir")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8571)
    p_serve.add_argument(
        "--data-dir",
        default=os.environ.get("VIEWFINDER_DATA_DIR", "viewfinder-sessions"),
    )
    p_serve.add_argument("--static-dir", default=None)
    _add_run_flags(p_serve)

    p_mat = sub.add_parser(
        "materialize", help="re-materialize a view in full from stored provenance"
    )
    p_mat.add_argument("artifacts_dir", help="directory written by `query --out`")
    p_mat.add_argument("--full", metavar="VIEW_ID", required=True)
    p_mat.add_argument("--out", help="output CSV path (default: stdout)")

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("VIEWFINDER_LOG", "WARNING"))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    handler = {
        "index": cmd_index,
        "query": cmd_query,
        "serve": cmd_serve,
        "materialize": cmd_materialize,
    }[args.command]
    return handler(args)


def cmd_index(args) -> int:
    corpus = Path(args.corpus)
    if not corpus.is_dir():
        print(f"error: corpus directory not found: {corpus}", file=sys.stderr)
        print("usage: viewfinder index CORPUS --out DIR", file=sys.stderr)
        return EXIT_USAGE
    config = IndexConfig(
        theta_containment=args.theta_containment,
        theta_uniqueness=args.theta_uniqueness,
        sketch_seed=args.sketch_seed,
    )
    try:
        index = build_index(corpus, config)
    except (CorpusError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    save_index(index, args.out)
    n_cols = len(index.profiles)
    print(
        f"indexed {len(index.tables)} tables, {n_cols} columns, "
        f"{len(index.ind_edges)} inclusion dependencies -> {args.out}"
    )
    return EXIT_OK


def _run_config(args, strategy: str | None = None, sample: bool | None = None) -> RunConfig:
    return RunConfig(
        theta_containment=args.theta_containment,
        theta_uniqueness=args.theta_uniqueness,
        max_hops=args.max_hops,
        sample_k=args.sample_k,
        memory_budget=args.memory_budget,
        joingraph_cap=args.joingraph_cap,
        strategy=strategy if strategy is not None else "4c-summary",
        sample_mode=bool(sample),
    )


def cmd_query(args) -> int:
    try:
        index = load_index(args.index_dir)
    except (OSError, CorpusError, json.JSONDecodeError) as exc:
        print(f"error: cannot load index: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        qv = load_query_view(args.queryview)
    except (OSError, QueryViewError) as exc:
        print(f"error: query view: {exc}", file=sys.stderr)
        return EXIT_USAGE
    config = _run_config(args, strategy=args.strategy, sample=args.sample)
    try:
        outcome = run_query(index, qv, config, dry_run=args.dry_run)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    report = outcome.report
    counts = report["counts"]
    if args.dry_run:
        print("dry run: stopped after join-graph enumeration")
        print(
            "CG={cg} P={p} JG={jg} join_graphs={g} MG=n/a".format(
                cg=counts["candidate_groups"],
                p=counts["table_pairs"],
                jg=counts["joinable_groups"],
                g=counts["join_graphs"],
            )
        )
        return EXIT_OK

    if not outcome.views:
        print("no candidate views found")
        print(
            "CG={cg} P={p} JG={jg} join_graphs={g} MG=0 views=0".format(
                cg=counts["candidate_groups"],
                p=counts["table_pairs"],
                jg=counts["joinable_groups"],
                g=counts["join_graphs"],
            )
        )
        return EXIT_OK

    print(
        "CG={cg} P={p} JG={jg} join_graphs={g} MG={mg} views={v}".format(
            cg=counts["candidate_groups"],
            p=counts["table_pairs"],
            jg=counts["joinable_groups"],
            g=counts["join_graphs"],
            mg=counts["materializable_graphs"],
            v=counts["views"],
        )
    )
    _print_timings(report["timings"])

    if args.strategy == "multi-row":
        for view in outcome.multirow or []:
            print(
                f"{view.view_id}: schema={list(view.schema)} rows={len(view.rows)} "
                f"multi_rows={len(view.multi_rows)}"
            )
    else:
        session = outcome.session
        if args.interactive and session is not None:
            _interactive_loop(session, outcome)
        if session is not None:
            state = session_state(session)
            print(
                f"surviving views: {state['pending_views']} "
                f"(prompts outstanding: {len(session.prompts)})"
            )

    if args.out:
        _write_artifacts(Path(args.out), args, outcome)
        print(f"artifacts written to {args.out}")
    if args.json:
        print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def _print_timings(timings: dict) -> None:
    total = timings.get("total", 0.0) or 1e-9
    names = ["does_join", "does_materialize", "materialize", "fourc", "other"]
    parts = []
    for name in names:
        t = timings.get(name, 0.0)
        parts.append(f"{name}={t:.3f}s({100 * t / total:.0f}%)")
    print("timings: " + " ".join(parts) + f" total={total:.3f}s")


def _interactive_loop(session, outcome) -> None:
    by_id = {**outcome.views_by_id(), **session.views}
    while session.next_prompt is not None:
        prompt = session.next_prompt
        rec = prompt.record
        print(f"\ncontradiction {prompt.prompt_id}: {rec.left} vs {rec.right}")
        print(f"  key attribute: {rec.key_attribute}; keys: {list(rec.key_values)}")
        for vid, indices in ((rec.left, rec.left_only), (rec.right, rec.right_only)):
            view = by_id[vid]
            print(f"  [{vid}] differing rows:")
            for idx in indices[:5]:
                print(f"    {view.rows[idx]}")
        answer = input(f"choose [{rec.left}/{rec.right}/skip]: ").strip()
        if answer not in (rec.left, rec.right, "skip"):
            print("  unrecognized answer; skipping")
            answer = "skip"
        apply_choice(session, prompt.prompt_id, answer)


def _write_artifacts(out_dir: Path, args, outcome) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run.json").write_text(
        json.dumps(
            {
                "index_dir": str(args.index_dir),
                "queryview": str(args.queryview),
                "strategy": args.strategy,
                "report": outcome.report,
            },
            indent=2,
            sort_keys=True,
        ),
        encoding="utf-8",
    )
    for view in outcome.views:
        _write_view_csv(out_dir / f"{view.view_id}.csv", view)
        sidecar = {
            "view_id": view.view_id,
            "schema": list(view.schema),
            "sampled": view.sampled,
            "row_count": len(view.rows),
            "provenance": view.provenance.to_dict() if view.provenance else None,
        }
        (out_dir / f"{view.view_id}.provenance.json").write_text(
            json.dumps(sidecar, indent=2, sort_keys=True), encoding="utf-8"
        )
    if outcome.result is not None:
        (out_dir / "classification.json").write_text(
            json.dumps(outcome.result.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
        )
    if outcome.multirow is not None:
        (out_dir / "multirow.json").write_text(
            json.dumps([m.to_dict() for m in outcome.multirow], indent=2, sort_keys=True),
            encoding="utf-8",
        )
    if outcome.session is not None:
        (out_dir / "session.json").write_text(
            json.dumps(session_state(outcome.session), indent=2, sort_keys=True),
            encoding="utf-8",
        )


def _write_view_csv(path: Path, view: CandidateView) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(view.schema)
        for row in view.rows:
            writer.writerow(row)


def cmd_serve(args) -> int:
    from .service import make_server

    try:
        index = load_index(args.index_dir)
    except (OSError, CorpusError, json.JSONDecodeError) as exc:
        print(f"error: cannot load index: {exc}", file=sys.stderr)
        return EXIT_USAGE
    config = _run_config(args)
    static = args.static_dir
    if static is None:
        bundled = Path(__file__).resolve().parent.parent.parent.parent / "frontend" / "dist"
        static = bundled if bundled.is_dir() else None
    server = make_server(
        index,
        config,
        args.data_dir,
        host=args.host,
        port=args.port,
        static_dir=static,
    )
    print(f"serving on http://{args.host}:{server.server_address[1]} (data: {args.data_dir})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return EXIT_OK


def cmd_materialize(args) -> int:
    artifacts = Path(args.artifacts_dir)
    run_file = artifacts / "run.json"
    sidecar_file = artifacts / f"{args.full}.provenance.json"
    if not run_file.exists() or not sidecar_file.exists():
        print(f"error: no provenance for view {args.full!r} in {artifacts}", file=sys.stderr)
        return EXIT_USAGE
    run_doc = json.loads(run_file.read_text(encoding="utf-8"))
    sidecar = json.loads(sidecar_file.read_text(encoding="utf-8"))
    try:
        index = load_index(run_doc["index_dir"])
    except (OSError, CorpusError, json.JSONDecodeError) as exc:
        print(f"error: cannot load index: {exc}", file=sys.stderr)
        return EXIT_USAGE
    view = materialize_full_view(
        index,
        sidecar["provenance"],
        schema=tuple(sidecar["schema"]),
        view_id=sidecar["view_id"],
    )
    if args.out:
        _write_view_csv(Path(args.out), view)
        print(f"{view.view_id}: {len(view.rows)} rows -> {args.out}")
    else:
        writer = csv.writer(sys.stdout)
        writer.writerow(view.schema)
        for row in view.rows:
            writer.writerow(row)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
