from __future__ import annotations

import io
import json
import math
import subprocess
import sys
import threading
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict

import pytest

from slicegraph import cli
from slicegraph.graph import load_graph
from slicegraph.service import (
    HANDLERS,
    TOOL_SCHEMAS,
    ReplayMismatch,
    ToolService,
    canonical,
    make_http_server,
    replay,
    replay_file,
    serve_stdio,
)
from slicegraph.session import open_session, search_entities

from conftest import F1_ROOT, GOLDEN, INC, RUN

TRACE = GOLDEN / "f1_trace.jsonl"
TOOLS = [
    "search_entities", "traverse_relations", "get_enclosing_scopes", "get_code_span",
    "get_entity_info", "get_dataflow_slice", "build_context_bundle", "rank_suspect_regions",
]


@pytest.fixture
def service(f1_session):
    return ToolService(f1_session)


def _call(service, tool, **arguments):
    return json.loads(service.handle_text(json.dumps({"id": 1, "tool": tool, "arguments": arguments})))


class TestDispatch:
    def test_describe_tools(self, service):
        tools = _call(service, "describe_tools")["result"]["tools"]
        assert [t["name"] for t in tools] == TOOLS + ["describe_tools"]
        assert all(t["parameters"]["type"] == "object" for t in tools)

    def test_search_matches_library(self, service, f1_session):
        resp = service.handle_text('{"id":"s","tool":"search_entities","arguments":{"query":"inc","k":3}}')
        lib = [asdict(h) for h in search_entities(f1_session, "inc", 3)]
        assert resp == canonical({"id": "s", "ok": True, "result": {"hits": lib}})

    def test_parse_error_then_alive(self, service):
        bad = json.loads(service.handle_text("{oops"))
        assert bad == {"id": None, "ok": False, "error": bad["error"]}
        assert bad["error"]["code"] == "parse_error"
        assert _call(service, "get_entity_info", node_id=INC)["ok"]

    def test_unknown_tool(self, service):
        assert _call(service, "frobnicate")["error"]["code"] == "unknown_tool"

    def test_invalid_arguments(self, service):
        assert _call(service, "search_entities", query="x", k=0)["error"]["code"] == "invalid_arguments"
        assert _call(service, "search_entities")["error"]["code"] == "invalid_arguments"
        assert _call(service, "traverse_relations", seed=RUN, edge_types=["Bogus"])["error"]["code"] == "invalid_arguments"
        assert _call(service, "get_code_span", file="pkg/util.py", start_line=3, end_line=1)["error"]["code"] == "invalid_arguments"

    def test_unknown_node_and_file(self, service):
        assert _call(service, "get_entity_info", node_id="X:y:1")["error"]["code"] == "unknown_node"
        assert _call(service, "get_enclosing_scopes", file="ghost.py", line=1)["error"]["code"] == "unknown_file"

    def test_non_object_request(self, service):
        assert json.loads(service.handle_text("[1,2]"))["error"]["code"] == "invalid_request"

    def test_id_echoed(self, service):
        resp = json.loads(service.handle_text('{"id":{"n":7},"tool":"describe_tools"}'))
        assert resp["id"] == {"n": 7}

    def test_handlers_cover_schemas(self):
        assert set(HANDLERS) == set(TOOL_SCHEMAS)


class TestLedger:
    def test_totals(self, service):
        req = '{"id":1,"tool":"get_entity_info","arguments":{"node_id":"Function:pkg.util.inc:1"}}'
        resp = service.handle_text(req)
        expected = math.ceil(len(canonical(json.loads(req))) / 4) + math.ceil(len(resp) / 4)
        assert service.ledger.per_tool == {"get_entity_info": expected}
        service.handle_text("nonsense")
        assert service.ledger.total == sum(service.ledger.per_tool.values())


class TestReplay:
    def test_golden_trace(self, service):
        result = replay_file(TRACE, service)
        assert len(result.transcript) == 10
        assert result.ledger.total > 0
        tools = {json.loads(l)["tool"] for l in TRACE.read_text().splitlines()}
        assert set(TOOLS) <= tools

    def test_empty_trace(self, service):
        result = replay([], service)
        assert result.transcript == [] and result.ledger.total == 0

    def test_mismatch_names_request(self, service):
        lines = TRACE.read_text().splitlines()
        rec = json.loads(lines[2])
        rec["expected"]["result"]["module"] = "Module:elsewhere:1"
        lines[2] = json.dumps(rec)
        with pytest.raises(ReplayMismatch) as info:
            replay(lines, service)
        assert info.value.request_id == "r3"

    def test_golden_matches_library(self, f1_session):
        """Each recorded result equals a fresh direct library call."""
        for raw in TRACE.read_text().splitlines():
            rec = json.loads(raw)
            if not rec["expected"]["ok"]:
                continue
            direct = HANDLERS[rec["tool"]](f1_session, **rec["arguments"])
            assert canonical(direct) == canonical(rec["expected"]["result"])


class TestTransports:
    def test_stdio(self, service):
        stdin = io.StringIO('{"id":1,"tool":"describe_tools"}\n\nnot json\n{"id":2,"tool":"get_entity_info","arguments":{"node_id":"Function:pkg.main.run:3"}}\n')
        stdout = io.StringIO()
        serve_stdio(service, stdin, stdout)
        replies = [json.loads(l) for l in stdout.getvalue().splitlines()]
        assert [r["id"] for r in replies] == [1, None, 2]
        assert replies[1]["error"]["code"] == "parse_error"
        assert replies[2]["ok"]

    def test_http(self, service):
        server = make_http_server(service, port=0)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            url = f"http://127.0.0.1:{server.server_address[1]}/tool"

            def post(body: bytes):
                req = urllib.request.Request(url, data=body, method="POST")
                with urllib.request.urlopen(req, timeout=5) as r:
                    return json.loads(r.read())

            assert post(b"{bad")["error"]["code"] == "parse_error"
            ids = list(range(20))
            with ThreadPoolExecutor(8) as pool:
                replies = list(pool.map(
                    lambda i: post(json.dumps({"id": i, "tool": "get_dataflow_slice",
                                               "arguments": {"file": "pkg/main.py", "line": 6, "variable": "y"}}).encode()),
                    ids,
                ))
            assert sorted(r["id"] for r in replies) == ids
            assert all(len(r["result"]["steps"]) == 4 for r in replies)
        finally:
            server.shutdown()
            server.server_close()


class TestCli:
    def test_build_full_and_coarse(self, tmp_path):
        out = tmp_path / "g.jsonl"
        assert cli.main(["build", str(F1_ROOT), "--out", str(out)]) == 0
        assert sum(1 for n in load_graph(out).nodes.values() if n.kind.value == "Statement") == 7
        assert cli.main(["build", str(F1_ROOT), "--mode", "coarse", "--out", str(out)]) == 0
        g = load_graph(out)
        assert not any(n.kind.value == "Statement" for n in g.nodes.values())
        assert not any(e.kind.value.startswith("Dataflow") for e in g.edges)

    def test_build_unreadable(self, tmp_path, capsys):
        assert cli.main(["build", str(tmp_path / "missing"), "--out", str(tmp_path / "g")]) != 0
        assert "error" in capsys.readouterr().err

    def test_replay(self, tmp_path, capsys):
        graph = tmp_path / "g.jsonl"
        cli.main(["build", str(F1_ROOT), "--out", str(graph)])
        capsys.readouterr()
        assert cli.main(["replay", str(TRACE), str(graph), "--repo", str(F1_ROOT)]) == 0
        captured = capsys.readouterr()
        assert len(captured.out.splitlines()) == 10
        assert json.loads(captured.err)["ledger"]["total"] > 0

    def test_replay_mismatch_exit(self, tmp_path, capsys):
        graph = tmp_path / "g.jsonl"
        cli.main(["build", str(F1_ROOT), "--out", str(graph)])
        rec = json.loads(TRACE.read_text().splitlines()[0])
        rec["expected"]["ok"] = False
        trace = tmp_path / "t.jsonl"
        trace.write_text(json.dumps(rec) + "\n")
        assert cli.main(["replay", str(trace), str(graph), "--repo", str(F1_ROOT)]) == 1
        assert "'r1'" in capsys.readouterr().err

    def test_corrupt_graph(self, tmp_path):
        bad = tmp_path / "g.jsonl"
        bad.write_text("garbage\n")
        with pytest.raises(SystemExit) as info:
            cli.main(["replay", str(TRACE), str(bad)])
        assert "corrupt" in str(info.value.code)

    def test_serve_stdio_subprocess(self, tmp_path):
        graph = tmp_path / "g.jsonl"
        cli.main(["build", str(F1_ROOT), "--out", str(graph)])
        proc = subprocess.run(
            [sys.executable, "-m", "slicegraph", "serve", str(graph), "--repo", str(F1_ROOT)],
            input='not json\n{"id":1,"tool":"get_code_span","arguments":{"file":"pkg/util.py","start_line":2,"end_line":2}}\n',
            capture_output=True, text=True, timeout=30,
        )
        replies = [json.loads(l) for l in proc.stdout.splitlines()]
        assert replies[0]["error"]["code"] == "parse_error"
        assert replies[1]["result"]["text"] == "    b = a + 1"


class TestEval:
    @pytest.fixture
    def setup(self, tmp_path):
        graph = tmp_path / "g.jsonl"
        cli.main(["build", str(F1_ROOT), "--out", str(graph)])
        gold = tmp_path / "gold"
        gold.mkdir()
        (gold / "t1.diff").write_text(
            "--- a/pkg/util.py\n+++ b/pkg/util.py\n@@ -1,3 +1,2 @@\n def inc(a):\n-    b = a + 1\n     return b\n"
        )
        (gold / "t2.diff").write_text(
            "--- a/pkg/main.py\n+++ b/pkg/main.py\n@@ -5,1 +5,1 @@\n-    y += 1\n+    y += 2\n"
        )
        return tmp_path, graph, gold

    def test_toy_report(self, setup, capsys):
        tmp, graph, gold = setup
        preds = tmp / "p.jsonl"
        preds.write_text(json.dumps({
            "instance_id": "t1",
            "predictions": [
                {"file": "pkg/util.py", "function": "inc", "start_line": 1, "end_line": 3, "score": 0.9},
                {"file": "pkg/main.py", "function": "run", "start_line": 3, "end_line": 6, "score": 0.1},
            ],
            "bundle": [{"file": "pkg/util.py", "start_line": 2, "end_line": 2}],
        }) + "\n")
        assert cli.main(["eval", str(preds), str(gold), str(graph)]) == 0
        report = json.loads(capsys.readouterr().out)
        t1 = report["instances"]["t1"]
        assert t1["file_recall@1"] == 1 and t1["function_mrr"] == 1.0
        assert t1["function_f1@3"] == pytest.approx(2 / 3)
        assert t1["line_iou"] == pytest.approx(1 / 7)
        assert t1["coverage@budget"] == 1.0
        t2 = report["instances"]["t2"]
        assert all(t2[k] == 0 for k in ("file_recall@5", "function_mrr", "line_recall@10"))
        assert report["flags"]["missing_prediction"] == ["t2"]
        assert report["aggregate"]["file_recall@1"]["mean"] == 0.5

    def test_lexical_window_coverage(self, setup, capsys):
        tmp, graph, gold = setup
        preds = tmp / "p.jsonl"
        preds.write_text(json.dumps({"instance_id": "t1", "predictions": [], "issue_text": "inc is off by one"}) + "\n")
        assert cli.main(["eval", str(preds), str(gold), str(graph), "--repo", str(F1_ROOT)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["instances"]["t1"]["coverage@budget"] == 1.0

    def test_table_format(self, setup, capsys):
        tmp, graph, gold = setup
        preds = tmp / "p.jsonl"
        preds.write_text("")
        assert cli.main(["eval", str(preds), str(gold), str(graph), "--format", "table"]) == 0
        out = capsys.readouterr().out
        assert out.splitlines()[0].split() == ["metric", "mean", "n", "excluded"]
        assert "missing_prediction" in out

    def test_malformed_line(self, setup, capsys):
        tmp, graph, gold = setup
        preds = tmp / "p.jsonl"
        preds.write_text('{"instance_id": "t1", "predictions": []}\n{broken\n')
        assert cli.main(["eval", str(preds), str(gold), str(graph)]) != 0
        assert "line 2" in capsys.readouterr().err
