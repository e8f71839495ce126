"""JSON tool facade: schema-checked dispatch, token ledger, stdio/HTTP transports, replay.

Wire shape, one JSON object per line on stdio (or one per POST body to ``/tool``)::

    request:  {"id": ..., "tool": "search_entities", "arguments": {...}}
    response: {"id": ..., "ok": true, "result": {...}}
              {"id": ..., "ok": false, "error": {"code": ..., "message": ...}}
"""

from __future__ import annotations

import json
import logging
import math
import threading
from dataclasses import asdict, dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import IO, Any, Callable, Iterable

import jsonschema

from .assemble import STRATEGIES, build_context_bundle, rank_suspect_regions
from .graph import EdgeKind, UnknownNode
from .session import (
    RetrievalSession,
    SourceUnavailable,
    UnknownFile,
    get_code_span,
    get_enclosing_scopes,
    get_entity_info,
    search_entities,
    traverse_relations,
)
from .slicer import DEFAULT_MAX_STEPS, DIRECTIONS, get_dataflow_slice

log = logging.getLogger(__name__)


def canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def estimate_tokens(text: str) -> int:
    return math.ceil(len(text) / 4)


_EDGE_NAMES = [k.value for k in EdgeKind]

_SLICE_SCHEMA = {
    "type": "object",
    "properties": {
        "direction": {"type": "string"},
        "truncated": {"type": "boolean"},
        "note": {"type": "string"},
        "steps": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "file": {"type": "string"},
                    "start_line": {"type": "integer"},
                    "end_line": {"type": "integer"},
                    "variable": {"type": "string"},
                    "role": {"type": "string"},
                    "statement_id": {"type": "string"},
                },
                "required": ["file", "start_line", "end_line", "variable", "role", "statement_id"],
            },
        },
    },
    "required": ["steps"],
}


def _obj(properties: dict, required: list[str]) -> dict:
    return {
        "type": "object",
        "properties": properties,
        "required": required,
        "additionalProperties": False,
    }


TOOL_SCHEMAS: dict[str, dict] = {
    "search_entities": {
        "description": "TF-IDF search over entity names, file paths and docstring first paragraphs; "
        "returns up to k hits with relevance scores in [0, 1].",
        "parameters": _obj(
            {
                "query": {"type": "string"},
                "k": {"type": "integer", "minimum": 1, "default": 10},
            },
            ["query"],
        ),
    },
    "traverse_relations": {
        "description": "Breadth-first traversal from a seed node along the given edge types, "
        "bounded by hop count and node budget.",
        "parameters": _obj(
            {
                "seed": {"type": "string"},
                "edge_types": {"type": "array", "items": {"enum": _EDGE_NAMES}, "minItems": 1},
                "max_hops": {"type": "integer", "minimum": 1, "default": 2},
                "node_budget": {"type": "integer", "minimum": 1, "default": 50},
            },
            ["seed", "edge_types"],
        ),
    },
    "get_enclosing_scopes": {
        "description": "Map a (file, line) pair, e.g. a stack-trace frame, to its enclosing "
        "function, class and module nodes.",
        "parameters": _obj(
            {"file": {"type": "string"}, "line": {"type": "integer"}},
            ["file", "line"],
        ),
    },
    "get_code_span": {
        "description": "Raw source text for lines start_line..end_line of a file.",
        "parameters": _obj(
            {
                "file": {"type": "string"},
                "start_line": {"type": "integer", "minimum": 1},
                "end_line": {"type": "integer", "minimum": 1},
            },
            ["file", "start_line", "end_line"],
        ),
    },
    "get_entity_info": {
        "description": "Metadata and per-edge-kind degree summary for a node id.",
        "parameters": _obj({"node_id": {"type": "string"}}, ["node_id"]),
    },
    "get_dataflow_slice": {
        "description": "Trace how a variable is defined (backward) or consumed (forward) inside "
        "its enclosing function. Returns ordered slice steps; an empty slice carries a note, "
        "in which case fall back to get_code_span.",
        "parameters": _obj(
            {
                "file": {"type": "string"},
                "line": {"type": "integer"},
                "variable": {"type": "string"},
                "direction": {"enum": list(DIRECTIONS), "default": "backward"},
                "max_steps": {"type": "integer", "minimum": 1, "default": DEFAULT_MAX_STEPS},
            },
            ["file", "line", "variable"],
        ),
    },
    "build_context_bundle": {
        "description": "Score candidate code spans by relevance, proximity to the seeds and slice "
        "membership, then pack them greedily under a token budget.",
        "parameters": _obj(
            {
                "seed_ids": {"type": "array", "items": {"type": "string"}},
                "slices": {"type": "array", "items": _SLICE_SCHEMA, "default": []},
                "strategy": {"enum": list(STRATEGIES), "default": "hybrid"},
                "budget": {"type": "integer", "minimum": 0, "default": 8000},
                "issue_text": {"type": "string", "default": ""},
            },
            ["seed_ids"],
        ),
    },
    "rank_suspect_regions": {
        "description": "Heuristic ranking of suspicious functions from the issue text and an "
        "optional stack trace, expanded two hops through the call graph.",
        "parameters": _obj(
            {
                "issue_text": {"type": "string", "minLength": 1},
                "stack_trace": {"type": ["string", "null"], "default": None},
            },
            ["issue_text"],
        ),
    },
    "describe_tools": {
        "description": "JSON schema of every available tool.",
        "parameters": _obj({}, []),
    },
}


def _search(session: RetrievalSession, query: str, k: int = 10) -> dict:
    return {"hits": [asdict(h) for h in search_entities(session, query, k)]}


def _traverse(session, seed, edge_types, max_hops=2, node_budget=50) -> dict:
    report = traverse_relations(session, seed, edge_types, max_hops, node_budget)
    return {"seed": report.seed, "nodes": report.nodes, "truncated": report.truncated}


def _scopes(session, file, line) -> dict:
    return get_enclosing_scopes(session, file, line).to_dict()


def _span(session, file, start_line, end_line) -> dict:
    return asdict(get_code_span(session, file, start_line, end_line))


def _info(session, node_id) -> dict:
    return get_entity_info(session, node_id)


def _slice(session, file, line, variable, direction="backward", max_steps=DEFAULT_MAX_STEPS) -> dict:
    return get_dataflow_slice(session, file, line, variable, direction, max_steps).to_dict()


def _bundle(session, seed_ids, slices=(), strategy="hybrid", budget=8000, issue_text="") -> dict:
    return build_context_bundle(session, seed_ids, slices, strategy, budget, issue_text).to_dict()


def _rank(session, issue_text, stack_trace=None) -> dict:
    return {"regions": [asdict(r) for r in rank_suspect_regions(session, issue_text, stack_trace)]}


def _describe(session) -> dict:
    return {"tools": [{"name": name, **schema} for name, schema in TOOL_SCHEMAS.items()]}


HANDLERS: dict[str, Callable[..., dict]] = {
    "search_entities": _search,
    "traverse_relations": _traverse,
    "get_enclosing_scopes": _scopes,
    "get_code_span": _span,
    "get_entity_info": _info,
    "get_dataflow_slice": _slice,
    "build_context_bundle": _bundle,
    "rank_suspect_regions": _rank,
    "describe_tools": _describe,
}


@dataclass
class TokenLedger:
    per_tool: dict[str, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.per_tool.values())

    def record(self, tool: str, request_text: str, response_text: str) -> None:
        cost = estimate_tokens(request_text) + estimate_tokens(response_text)
        self.per_tool[tool] = self.per_tool.get(tool, 0) + cost

    def to_dict(self) -> dict:
        return {"per_tool": dict(sorted(self.per_tool.items())), "total": self.total}


def _error(req_id: Any, code: str, message: str) -> dict:
    return {"id": req_id, "ok": False, "error": {"code": code, "message": message}}


class ToolService:
    """Dispatches tool requests against one shared session."""

    def __init__(self, session: RetrievalSession):
        self.session = session
        self.ledger = TokenLedger()
        self._ledger_lock = threading.Lock()

    def handle(self, request: Any) -> dict:
        if not isinstance(request, dict):
            return _error(None, "invalid_request", "request must be a JSON object")
        req_id = request.get("id")
        tool = request.get("tool")
        args = request.get("arguments", {})
        if not isinstance(tool, str):
            return _error(req_id, "invalid_request", "missing tool name")
        if tool not in HANDLERS:
            return _error(req_id, "unknown_tool", f"unknown tool: {tool}")
        try:
            jsonschema.validate(args, TOOL_SCHEMAS[tool]["parameters"])
        except jsonschema.ValidationError as exc:
            return _error(req_id, "invalid_arguments", exc.message)
        try:
            result = HANDLERS[tool](self.session, **args)
        except UnknownNode as exc:
            return _error(req_id, "unknown_node", str(exc))
        except UnknownFile as exc:
            return _error(req_id, "unknown_file", str(exc))
        except SourceUnavailable as exc:
            return _error(req_id, "source_unavailable", str(exc))
        except (ValueError, TypeError) as exc:
            return _error(req_id, "invalid_arguments", str(exc))
        except Exception as exc:  # noqa: BLE001 - the server must stay up
            log.exception("tool %s failed", tool)
            return _error(req_id, "internal_error", f"{type(exc).__name__}: {exc}")
        return {"id": req_id, "ok": True, "result": result}

    def handle_text(self, line: str) -> str:
        """One request line in, one canonical response line out (no trailing newline)."""
        try:
            request = json.loads(line)
        except json.JSONDecodeError as exc:
            response = _error(None, "parse_error", f"invalid JSON: {exc.msg}")
            request_text, tool = line.strip(), "<parse_error>"
        else:
            response = self.handle(request)
            tool = request.get("tool") if isinstance(request, dict) else None
            tool = tool if isinstance(tool, str) else "<invalid>"
            request_text = canonical(_strip_expected(request))
        text = canonical(response)
        with self._ledger_lock:
            self.ledger.record(tool, request_text, text)
        return text


def _strip_expected(request: Any) -> Any:
    if isinstance(request, dict) and "expected" in request:
        return {k: v for k, v in request.items() if k != "expected"}
    return request


def serve_stdio(service: ToolService, stdin: IO[str], stdout: IO[str]) -> None:
    for line in stdin:
        if not line.strip():
            continue
        stdout.write(service.handle_text(line) + "\n")
        stdout.flush()


def make_http_server(service: ToolService, host: str = "127.0.0.1", port: int = 8765) -> ThreadingHTTPServer:
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self) -> None:  # noqa: N802
            if self.path.rstrip("/") != "/tool":
                self.send_error(404, "POST /tool")
                return
            length = int(self.headers.get("Content-Length") or 0)
            body = self.rfile.read(length).decode("utf-8", errors="replace")
            payload = service.handle_text(body).encode("utf-8")
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def log_message(self, fmt: str, *args: Any) -> None:
            log.debug("http: " + fmt, *args)

    return ThreadingHTTPServer((host, port), Handler)


# -- replay ------------------------------------------------------------------------


class ReplayMismatch(Exception):
    def __init__(self, request_id: Any, expected: str, actual: str):
        super().__init__(f"response mismatch for request id {request_id!r}")
        self.request_id = request_id
        self.expected = expected
        self.actual = actual


@dataclass
class ReplayResult:
    transcript: list[str]
    ledger: TokenLedger


def replay(trace_lines: Iterable[str], service: ToolService) -> ReplayResult:
    """Run recorded requests in order; stop at the first response differing from ``expected``."""
    transcript = []
    for raw in trace_lines:
        if not raw.strip():
            continue
        try:
            record = json.loads(raw)
        except json.JSONDecodeError:
            record = None
        actual = service.handle_text(raw)
        transcript.append(actual)
        if isinstance(record, dict) and "expected" in record:
            expected = canonical(record["expected"])
            if expected != actual:
                raise ReplayMismatch(record.get("id"), expected, actual)
    return ReplayResult(transcript, service.ledger)


def replay_file(path: str | Path, service: ToolService) -> ReplayResult:
    with open(path, encoding="utf-8") as fh:
        return replay(fh, service)
