"""Regenerate f1_trace.jsonl. Run by hand only when tool output changes on purpose:

    python3 tests/golden/make_f1_trace.py
"""

from __future__ import annotations

import json
from pathlib import Path

from slicegraph.service import ToolService
from slicegraph.session import open_session
from slicegraph.structure import build_graph

HERE = Path(__file__).parent
F1_ROOT = HERE.parent / "fixtures" / "f1"

STACK = (
    "Traceback (most recent call last):\n"
    '  File "/work/checkout/pkg/main.py", line 4, in run\n'
    '  File "/work/checkout/pkg/util.py", line 2, in inc\n'
    "TypeError: unsupported operand\n"
)


def requests(service: ToolService) -> list[dict]:
    slice_req = {
        "id": "r6",
        "tool": "get_dataflow_slice",
        "arguments": {"file": "pkg/main.py", "line": 6, "variable": "y", "direction": "backward"},
    }
    scratch = ToolService(open_session(build_graph(F1_ROOT)[0], repo_root=F1_ROOT))
    sliced = scratch.handle(slice_req)["result"]
    return [
        {"id": "r1", "tool": "search_entities", "arguments": {"query": "inc", "k": 5}},
        {"id": "r2", "tool": "traverse_relations",
         "arguments": {"seed": "Function:pkg.main.run:3", "edge_types": ["Calls", "Contains"], "max_hops": 2, "node_budget": 10}},
        {"id": "r3", "tool": "get_enclosing_scopes", "arguments": {"file": "pkg/main.py", "line": 5}},
        {"id": "r4", "tool": "get_code_span", "arguments": {"file": "pkg/util.py", "start_line": 1, "end_line": 3}},
        {"id": "r5", "tool": "get_entity_info", "arguments": {"node_id": "Function:pkg.util.inc:1"}},
        slice_req,
        {"id": "r7", "tool": "build_context_bundle",
         "arguments": {"seed_ids": ["Function:pkg.main.run:3"], "slices": [sliced],
                       "strategy": "hybrid", "budget": 8000, "issue_text": "run returns the wrong value"}},
        {"id": "r8", "tool": "rank_suspect_regions",
         "arguments": {"issue_text": "inc returns the wrong value", "stack_trace": STACK}},
        {"id": "r9", "tool": "describe_tools", "arguments": {}},
        {"id": "r10", "tool": "get_entity_info", "arguments": {"node_id": "Function:pkg.nowhere:1"}},
    ]


def main() -> None:
    service = ToolService(open_session(build_graph(F1_ROOT)[0], repo_root=F1_ROOT))
    lines = []
    for req in requests(service):
        resp = json.loads(service.handle_text(json.dumps(req)))
        lines.append(json.dumps({**req, "expected": resp}, sort_keys=True))
    (HERE / "f1_trace.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
