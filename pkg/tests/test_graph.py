from __future__ import annotations

import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slicegraph.graph import (
    BuildMode,
    CorruptFile,
    EdgeKind,
    EntityNode,
    FrozenGraphError,
    IdCollision,
    InvalidNode,
    MissingDataflowVariable,
    NodeKind,
    RepoGraph,
    UnknownNode,
    VariableOnNonDataflowEdge,
    dumps_graph,
    load_graph,
    loads_graph,
    save_graph,
)
from slicegraph.structure import build_graph, build_graph_from_sources

from conftest import F1_ROOT, INC, RUN, run_stmt


def _mod(qn: str, path: str, end: int = 3) -> EntityNode:
    return EntityNode(NodeKind.MODULE, qn.rsplit(".", 1)[-1], qn, path, 1, end)


def _small_graph() -> RepoGraph:
    g = RepoGraph()
    g.upsert_node(EntityNode(NodeKind.DIRECTORY, ".", "", ".", 0, 0))
    g.upsert_node(EntityNode(NodeKind.DIRECTORY, "pkg", "pkg", "pkg", 0, 0))
    g.upsert_node(_mod("pkg.util", "pkg/util.py"))
    g.upsert_node(_mod("pkg.main", "pkg/main.py", 6))
    return g


class TestNodes:
    def test_module_id_rule(self):
        assert _mod("pkg.util", "pkg/util.py").id == "Module:pkg.util:1"

    def test_upsert_is_idempotent(self):
        g = RepoGraph()
        node = _mod("pkg.util", "pkg/util.py")
        assert g.upsert_node(node) == g.upsert_node(node)
        assert len(g.nodes) == 1

    def test_same_id_different_payload_collides(self):
        g = RepoGraph()
        g.upsert_node(_mod("pkg.util", "pkg/util.py", 3))
        with pytest.raises(IdCollision):
            g.upsert_node(_mod("pkg.util", "pkg/util.py", 4))

    def test_directory_lines_must_be_zero(self):
        with pytest.raises(InvalidNode):
            RepoGraph().upsert_node(EntityNode(NodeKind.DIRECTORY, "pkg", "pkg", "pkg", 1, 1))

    def test_inverted_span_rejected(self):
        with pytest.raises(InvalidNode):
            RepoGraph().upsert_node(_mod("m", "m.py", 0))


class TestConnect:
    def test_dataflow_pair(self):
        g = RepoGraph()
        a = g.upsert_node(EntityNode(NodeKind.STATEMENT, "assign", "f@1", "m.py", 2, 2))
        b = g.upsert_node(EntityNode(NodeKind.STATEMENT, "return", "f@2", "m.py", 3, 3))
        assert g.connect(a, b, EdgeKind.DATAFLOW_DEF_USE, "y") == 2
        assert g.successors(b, EdgeKind.DATAFLOW_USE_DEF) == [a]

    def test_calls_pair_on_f1(self, f1_graph):
        assert f1_graph.successors(RUN, EdgeKind.CALLS) == [INC]
        assert f1_graph.successors(INC, EdgeKind.CALLED_BY) == [RUN]

    def test_contains_is_unmirrored(self):
        g = _small_graph()
        assert g.connect("Directory:pkg:0", "Module:pkg.util:1", EdgeKind.CONTAINS) == 1
        assert g.predecessors("Module:pkg.util:1", EdgeKind.CONTAINS) == ["Directory:pkg:0"]

    def test_duplicate_edge_adds_nothing(self):
        g = _small_graph()
        assert g.connect("Module:pkg.main:1", "Module:pkg.util:1", EdgeKind.IMPORTS) == 2
        assert g.connect("Module:pkg.main:1", "Module:pkg.util:1", EdgeKind.IMPORTS) == 0
        assert len(g.edges) == 2

    def test_variable_rules(self):
        g = _small_graph()
        with pytest.raises(VariableOnNonDataflowEdge):
            g.connect("Module:pkg.main:1", "Module:pkg.util:1", EdgeKind.IMPORTS, "x")
        with pytest.raises(MissingDataflowVariable):
            g.connect("Module:pkg.main:1", "Module:pkg.util:1", EdgeKind.DATAFLOW_DEF_USE)

    def test_unknown_endpoint(self):
        with pytest.raises(UnknownNode):
            _small_graph().connect("Module:pkg.main:1", "Module:nope:1", EdgeKind.CALLS)

    def test_frozen_graph_rejects_writes(self, f1_graph):
        with pytest.raises(FrozenGraphError):
            f1_graph.upsert_node(_mod("x", "x.py"))


class TestInvariants:
    def test_f1_is_sound(self, f1_graph):
        assert f1_graph.check_invariants() == []

    def test_missing_mirror_detected(self):
        from slicegraph.graph import TypedEdge

        g = _small_graph()
        g._add_edge(TypedEdge("Module:pkg.main:1", "Module:pkg.util:1", EdgeKind.IMPORTS))
        assert any("mirror" in p for p in g.check_invariants())

    def test_statements_have_function_ancestor(self, f1_graph):
        for node in f1_graph.nodes_of_kind(NodeKind.STATEMENT):
            assert f1_graph.enclosing_function(node.id) in (RUN, INC)

    def test_dataflow_edges_are_local(self, f1_graph):
        for e in f1_graph.edges:
            if e.kind in (EdgeKind.DATAFLOW_DEF_USE, EdgeKind.DATAFLOW_USE_DEF):
                assert f1_graph.enclosing_function(e.src) == f1_graph.enclosing_function(e.dst)

    def test_degrees(self, f1_graph):
        incoming, outgoing = f1_graph.degrees(run_stmt(1))
        assert incoming == {"Contains": 1, "DataflowDefUse": 1, "DataflowUseDef": 1}
        assert outgoing == {"DataflowDefUse": 1, "DataflowUseDef": 1}


class TestPersistence:
    def test_round_trip(self, f1_graph, tmp_path):
        path = tmp_path / "g.jsonl"
        save_graph(f1_graph, path)
        loaded = load_graph(path)
        assert loaded == f1_graph
        assert loaded.frozen
        assert dumps_graph(loaded) == path.read_text()

    def test_empty_repository_round_trips(self, tmp_path):
        with pytest.warns(UserWarning):
            g, _ = build_graph(tmp_path)
        assert [n.id for n in g.nodes.values()] == ["Directory::0"]
        assert loads_graph(dumps_graph(g)) == g

    def test_determinism(self):
        a, _ = build_graph(F1_ROOT)
        b, _ = build_graph(F1_ROOT)
        assert dumps_graph(a) == dumps_graph(b)

    def test_layout(self, f1_graph):
        lines = dumps_graph(f1_graph).splitlines()
        assert '"rec":"meta"' in lines[0]
        node_lines = [l for l in lines if '"rec":"node"' in l]
        edge_lines = [l for l in lines if '"rec":"edge"' in l]
        assert lines[1 : 1 + len(node_lines)] == node_lines
        assert len(node_lines) == 14 and len(edge_lines) == 27

    def test_truncated_file(self, f1_graph):
        text = dumps_graph(f1_graph)
        cut = "".join(text.splitlines(keepends=True)[:-3])
        with pytest.raises(CorruptFile):
            loads_graph(cut)

    def test_garbage_line_reports_line_number(self, f1_graph):
        lines = dumps_graph(f1_graph).splitlines()
        lines[4] = "{not json"
        with pytest.raises(CorruptFile) as info:
            loads_graph("\n".join(lines))
        assert info.value.line == 5

    def test_empty_text(self):
        with pytest.raises(CorruptFile):
            loads_graph("")

    def test_stream_sink(self, f1_graph):
        buf = io.StringIO()
        save_graph(f1_graph, buf)
        buf.seek(0)
        assert load_graph(buf) == f1_graph

    def test_coarse_mode_survives(self):
        g, _ = build_graph(F1_ROOT, BuildMode.COARSE)
        assert loads_graph(dumps_graph(g)).build_mode is BuildMode.COARSE


_names = st.sampled_from(["a", "b", "c", "d"])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(_names, _names, st.sampled_from(["Calls", "Imports", "Inherits"])), max_size=20))
def test_mirror_completeness_property(edges):
    g = RepoGraph()
    for n in "abcd":
        g.upsert_node(_mod(n, f"{n}.py"))
    for src, dst, kind in edges:
        g.connect(f"Module:{src}:1", f"Module:{dst}:1", kind)
    problems = [p for p in g.check_invariants() if "mirror" in p]
    assert problems == []
    calls = sum(1 for e in g.edges if e.kind is EdgeKind.CALLS)
    called_by = sum(1 for e in g.edges if e.kind is EdgeKind.CALLED_BY)
    assert calls == called_by
    assert loads_graph(dumps_graph(g)) == g


def test_from_sources_matches_disk(f1_sources, f1_graph):
    g, _ = build_graph_from_sources(f1_sources)
    assert dumps_graph(g) == dumps_graph(f1_graph)
