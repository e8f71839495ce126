from __future__ import annotations

import random

import networkx as nx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slicegraph.graph import EdgeKind, EntityNode, NodeKind, RepoGraph, UnknownNode
from slicegraph.session import (
    LexicalIndex,
    UnknownFile,
    get_code_span,
    get_enclosing_scopes,
    get_entity_info,
    open_session,
    search_entities,
    tokenize,
    traverse_relations,
)

from conftest import INC, RUN, session_for


def random_call_graph(rng: random.Random, n: int, density: float) -> tuple[RepoGraph, nx.DiGraph]:
    g = RepoGraph()
    ref = nx.DiGraph()
    ids = []
    for i in range(n):
        nid = g.upsert_node(EntityNode(NodeKind.FUNCTION, f"f{i}", f"m.f{i}", "m.py", i + 1, i + 1))
        ids.append(nid)
        ref.add_node(nid)
    for _ in range(int(n * density)):
        a, b = rng.choice(ids), rng.choice(ids)
        if a != b:
            g.connect(a, b, EdgeKind.CALLS)
            ref.add_edge(a, b)
    return g.freeze(), ref


class TestOpen:
    def test_f1_index_size(self, f1_session):
        assert f1_session.indexed_count() == 7

    def test_empty_graph(self):
        s = open_session(RepoGraph())
        assert search_entities(s, "anything") == []

    def test_reopen_deterministic(self, f1_graph):
        a = open_session(f1_graph).index
        b = open_session(f1_graph).index
        assert a.vectors == b.vectors and a.idf == b.idf


class TestSearch:
    def test_inc_first(self, f1_session):
        hits = search_entities(f1_session, "inc", k=3)
        assert hits[0].entity_id == INC
        assert hits[0].matched_field == "name"

    def test_no_overlap(self, f1_session):
        assert search_entities(f1_session, "zebra quantum") == []

    def test_k_larger_than_corpus(self, f1_session):
        hits = search_entities(f1_session, "pkg main util run inc", k=100)
        # every entity except the root directory, whose document is just "."
        assert len(hits) == 6
        assert "Directory::0" not in {h.entity_id for h in hits}
        assert all(0 < h.score <= 1 for h in hits)

    def test_path_match(self, f1_session):
        hits = search_entities(f1_session, "util", k=10)
        fields = {h.entity_id: h.matched_field for h in hits}
        assert fields["Module:pkg.util:1"] == "name"
        assert fields[INC] == "path"

    def test_k_must_be_positive(self, f1_session):
        with pytest.raises(ValueError):
            search_entities(f1_session, "inc", k=0)

    def test_docstring_field(self):
        s = session_for({"m.py": 'def go():\n    """Parse the config file.\n\n    Details."""\n'})
        [hit] = [h for h in search_entities(s, "config") if h.entity_id.startswith("Function")]
        assert hit.matched_field == "doc"
        assert search_entities(s, "details") == []

    def test_tokenize(self):
        assert tokenize("parseHTTPRequest snake_case v2") == ["parse", "httprequest", "snake", "case", "v2"]

    def test_index_matches_closed_form(self):
        import math

        idx = LexicalIndex({"d1": "alpha beta", "d2": "alpha"})
        idf_beta = math.log(3 / 2) + 1
        idf_alpha = math.log(3 / 3) + 1
        norm = math.sqrt(idf_alpha**2 + idf_beta**2)
        assert idx.score("beta", "d1") == pytest.approx(idf_beta / norm, abs=1e-12)
        assert idx.score("alpha", "d2") == pytest.approx(1.0)


@settings(max_examples=50, deadline=None)
@given(st.text(alphabet="abcdefgh ijkXYZ_", max_size=30))
def test_scores_bounded_and_stable(query):
    s = session_for({"pkg/util.py": "def inc(a):\n    return a\n", "pkg/main.py": "def run_job(x):\n    return x\n"})
    first = search_entities(s, query, k=5)
    assert first == search_entities(s, query, k=5)
    assert all(0.0 < h.score <= 1.0 for h in first)
    assert [h.score for h in first] == sorted((h.score for h in first), reverse=True)


class TestTraverse:
    def test_calls_from_run(self, f1_session):
        report = traverse_relations(f1_session, RUN, ["Calls"], max_hops=2)
        assert report.hops() == {RUN: 0, INC: 1}
        assert not report.truncated

    def test_budget_one(self, f1_session):
        report = traverse_relations(f1_session, RUN, ["Calls"], node_budget=1)
        assert report.hops() == {RUN: 0}
        assert report.truncated

    def test_no_inherits(self, f1_session):
        assert traverse_relations(f1_session, RUN, ["Inherits"]).hops() == {RUN: 0}

    def test_unknown_seed(self, f1_session):
        with pytest.raises(UnknownNode):
            traverse_relations(f1_session, "Function:nope:1", ["Calls"])

    def test_matches_networkx(self):
        rng = random.Random(7)
        for _ in range(20):
            graph, ref = random_call_graph(rng, rng.randint(1, 60), rng.uniform(0.5, 3.0))
            s = open_session(graph)
            seed = rng.choice(sorted(graph.nodes))
            hops = rng.randint(1, 5)
            expected = nx.single_source_shortest_path_length(ref, seed, cutoff=hops)
            assert traverse_relations(s, seed, ["Calls"], hops, 10_000).hops() == expected

    def test_budget_keeps_nearest(self):
        rng = random.Random(11)
        graph, ref = random_call_graph(rng, 80, 3.0)
        s = open_session(graph)
        seed = sorted(graph.nodes)[0]
        full = nx.single_source_shortest_path_length(ref, seed, cutoff=3)
        report = traverse_relations(s, seed, ["Calls"], 3, 10)
        assert len(report.nodes) <= 10
        order = sorted(full, key=lambda n: (full[n], n))
        assert set(report.hops()) == set(order[:10])
        assert report.truncated == (len(full) > 10)


class TestScopes:
    def test_inside_run(self, f1_session):
        rec = get_enclosing_scopes(f1_session, "pkg/main.py", 5)
        assert rec.to_dict() == {"function": RUN, "class": None, "module": "Module:pkg.main:1"}

    def test_import_line(self, f1_session):
        rec = get_enclosing_scopes(f1_session, "pkg/main.py", 1)
        assert rec.function is None and rec.module == "Module:pkg.main:1"

    def test_unknown_file(self, f1_session):
        with pytest.raises(UnknownFile):
            get_enclosing_scopes(f1_session, "ghost.py", 3)

    def test_innermost(self):
        src = "class A:\n    def m(self):\n        def inner():\n            return 1\n        return inner\n"
        s = session_for({"a.py": src})
        rec = get_enclosing_scopes(s, "a.py", 4)
        assert rec.function == "Function:a.A.m.inner:3"
        assert rec.class_ == "Class:a.A:1"


class TestSpans:
    def test_one_line(self, f1_session):
        span = get_code_span(f1_session, "pkg/util.py", 2, 2)
        assert span.text == "    b = a + 1" and not span.clamped

    def test_clamp(self, f1_session):
        span = get_code_span(f1_session, "pkg/util.py", 2, 99)
        assert span.text == "    b = a + 1\n    return b"
        assert span.clamped and span.end_line == 3

    def test_start_past_end(self, f1_session):
        span = get_code_span(f1_session, "pkg/util.py", 10, 12)
        assert span.text == "" and span.clamped

    def test_unknown_file(self, f1_session):
        with pytest.raises(UnknownFile):
            get_code_span(f1_session, "ghost.py", 1, 1)


class TestEntityInfo:
    def test_inc(self, f1_session):
        info = get_entity_info(f1_session, INC)
        assert info["node"]["kind"] == "Function"
        assert info["degrees"]["in"] == {"Calls": 1, "Contains": 1}
        assert info["statement_children"] == 3

    def test_root_directory(self, f1_session):
        info = get_entity_info(f1_session, "Directory::0")
        assert info["degrees"]["in"] == {}
        assert set(info["degrees"]["out"]) == {"Contains"}

    def test_unknown(self, f1_session):
        with pytest.raises(UnknownNode):
            get_entity_info(f1_session, "Function:ghost:1")
