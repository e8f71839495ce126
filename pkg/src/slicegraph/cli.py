"""Command line: build, serve, replay, eval."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .assemble import DEFAULT_BUDGET, lexical_window
from .graph import BuildMode, CorruptFile, GraphError, NodeKind, load_graph, save_graph
from .metrics import (
    GoldSets,
    LocalizationReport,
    MalformedDiff,
    Prediction,
    instance_metrics,
    parse_gold_patch,
)
from .service import ReplayMismatch, ToolService, canonical, make_http_server, replay_file, serve_stdio
from .session import open_session
from .structure import build_graph

LOG_ENV = "SLICEGRAPH_LOG_LEVEL"
log = logging.getLogger("slicegraph")


class PredictionsError(ValueError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"predictions line {line_no}: {reason}")
        self.line_no = line_no


def _configure_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _load(path: str):
    try:
        return load_graph(path)
    except CorruptFile as exc:
        raise SystemExit(f"error: corrupt graph file {path}: {exc}") from None
    except OSError as exc:
        raise SystemExit(f"error: cannot read graph file {path}: {exc}") from None


def cmd_build(args: argparse.Namespace) -> int:
    try:
        graph, report = build_graph(args.repo_root, BuildMode(args.mode))
    except (NotADirectoryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for diag in report.diagnostics:
        print(f"warning: {diag}", file=sys.stderr)
    save_graph(graph, args.out)
    print(report.summary(), file=sys.stderr)
    print(
        f"nodes={len(graph.nodes)} edges={len(graph.edges)} "
        f"statements={graph.count(NodeKind.STATEMENT)} -> {args.out}",
        file=sys.stderr,
    )
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    graph = _load(args.graph)
    service = ToolService(open_session(graph, repo_root=args.repo))
    if args.transport == "stdio":
        serve_stdio(service, sys.stdin, sys.stdout)
        return 0
    try:
        server = make_http_server(service, args.host, args.port)
    except OSError as exc:
        print(f"error: cannot bind {args.host}:{args.port}: {exc}", file=sys.stderr)
        return 2
    log.info("serving on http://%s:%d/tool", args.host, server.server_address[1])
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    graph = _load(args.graph)
    service = ToolService(open_session(graph, repo_root=args.repo))
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        result = replay_file(args.trace, service)
    except ReplayMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"  expected: {exc.expected}", file=sys.stderr)
        print(f"  actual:   {exc.actual}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        for line in result.transcript:
            out.write(line + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    print(canonical({"ledger": result.ledger.to_dict()}), file=sys.stderr)
    return 0


def read_predictions(path: str | Path) -> dict[str, dict]:
    """Instance id -> record; raises PredictionsError naming the bad line."""
    records: dict[str, dict] = {}
    with open(path, encoding="utf-8") as fh:
        for no, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise PredictionsError(no, f"invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict) or not isinstance(rec.get("instance_id"), str):
                raise PredictionsError(no, "expected an object with a string instance_id")
            try:
                preds = [
                    Prediction(
                        str(p["file"]), str(p["function"]), int(p["start_line"]), int(p["end_line"]), float(p["score"])
                    )
                    for p in rec.get("predictions", [])
                ]
                bundle = None
                if rec.get("bundle") is not None:
                    bundle = [(str(s["file"]), int(s["start_line"]), int(s["end_line"])) for s in rec["bundle"]]
            except (KeyError, TypeError, ValueError) as exc:
                raise PredictionsError(no, f"bad prediction entry ({exc!r})") from None
            records[rec["instance_id"]] = {
                "predictions": preds,
                "bundle": bundle,
                "issue_text": rec.get("issue_text"),
            }
    return records


def evaluate(
    predictions_path: str | Path,
    gold_dir: str | Path,
    graph,
    repo_root: str | Path | None = None,
    budget: int = DEFAULT_BUDGET,
) -> LocalizationReport:
    records = read_predictions(predictions_path)
    session = open_session(graph, repo_root=repo_root)
    report = LocalizationReport()
    gold_files = sorted(p for p in Path(gold_dir).iterdir() if p.suffix in (".diff", ".patch"))
    gold_ids = set()
    for path in gold_files:
        iid = path.stem
        gold_ids.add(iid)
        try:
            gold = parse_gold_patch(path.read_text(encoding="utf-8"), session.scopes)
        except MalformedDiff as exc:
            report.flags.setdefault("malformed_gold", []).append(f"{iid}: {exc}")
            gold = GoldSets()
        rec = records.get(iid)
        if rec is None:
            report.flags.setdefault("missing_prediction", []).append(iid)
            rec = {"predictions": [], "bundle": None, "issue_text": None}
        preds = rec["predictions"]
        if any(a.score < b.score for a, b in zip(preds, preds[1:])):
            report.flags.setdefault("unsorted_scores", []).append(iid)
        spans = rec["bundle"]
        if spans is None and rec["issue_text"] and repo_root is not None:
            spans = lexical_window(session, rec["issue_text"], budget)
        if spans is None and iid not in report.flags.get("missing_prediction", []):
            report.flags.setdefault("no_coverage_source", []).append(iid)
        if not (gold.files or gold.functions or gold.lines):
            report.flags.setdefault("empty_gold", []).append(iid)
        report.per_instance[iid] = instance_metrics(preds, gold, graph, session.scopes, spans)
    for iid in sorted(set(records) - gold_ids):
        report.flags.setdefault("no_gold", []).append(iid)
    return report


def cmd_eval(args: argparse.Namespace) -> int:
    graph = _load(args.graph)
    try:
        report = evaluate(args.predictions, args.gold_dir, graph, args.repo, args.budget)
    except PredictionsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.format == "table":
        text = report.to_table()
        flagged = {k: v for k, v in report.flags.items() if v}
        if flagged:
            text += "\n\nflags:\n" + "\n".join(f"  {k}: {', '.join(sorted(v))}" for k, v in sorted(flagged.items()))
    else:
        text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slicegraph", description="Repository graph tools for agentic localization.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="build and persist a repository graph")
    p.add_argument("repo_root")
    p.add_argument("--mode", choices=[m.value for m in BuildMode], default="full")
    p.add_argument("--out", default="graph.jsonl")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("serve", help="serve the tools over stdio or HTTP")
    p.add_argument("graph")
    p.add_argument("--repo", default=".", help="repository root used for source spans")
    p.add_argument("--transport", choices=("stdio", "http"), default="stdio")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("replay", help="replay a JSONL trace of tool requests")
    p.add_argument("trace")
    p.add_argument("graph")
    p.add_argument("--repo", default=".")
    p.add_argument("--out", help="transcript path (default: stdout)")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("eval", help="score ranked predictions against gold patches")
    p.add_argument("predictions")
    p.add_argument("gold_dir")
    p.add_argument("graph")
    p.add_argument("--repo", help="repository root; enables the lexical coverage window")
    p.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    p.add_argument("--format", choices=("json", "table"), default="json")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
