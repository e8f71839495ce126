"""Structural retrieval over a frozen graph: lexical search, traversal, scopes, source spans."""

from __future__ import annotations

import math
import re
import threading
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .frontend import EntityDecl, ModuleSyntax, StatementFact, parse_module
from .dataflow import function_statements
from .graph import EdgeKind, EntityNode, NodeKind, RepoGraph, UnknownNode

_CAMEL = re.compile(r"([a-z])([A-Z])")
_WORD = re.compile(r"[a-z0-9]+")


class UnknownFile(LookupError):
    def __str__(self) -> str:
        return f"unknown file: {self.args[0]}" if self.args else "unknown file"


class SourceUnavailable(LookupError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercased unigrams split on non-alphanumerics, underscores and camelCase humps."""
    return _WORD.findall(_CAMEL.sub(r"\1 \2", text).lower())


def _path_text(node: EntityNode) -> str:
    return f"{node.qualified_name.replace('.', ' ')} {node.file_path}"


def entity_document(node: EntityNode) -> str:
    return f"{node.name} {_path_text(node)} {node.doc_head}".strip()


class LexicalIndex:
    """Smoothed TF-IDF over entity documents with L2-normalised vectors."""

    def __init__(self, documents: Mapping[str, str]):
        self.ids = sorted(documents)
        counts = {i: Counter(tokenize(documents[i])) for i in self.ids}
        df: Counter[str] = Counter()
        for c in counts.values():
            df.update(c.keys())
        n = len(self.ids)
        self.idf = {t: math.log((1 + n) / (1 + d)) + 1.0 for t, d in sorted(df.items())}
        self.vectors: dict[str, dict[str, float]] = {i: self._weigh(counts[i]) for i in self.ids}
        self.postings: dict[str, list[str]] = {}
        for i in self.ids:
            for term in self.vectors[i]:
                self.postings.setdefault(term, []).append(i)

    def _weigh(self, tf: Counter[str]) -> dict[str, float]:
        vec = {t: c * self.idf[t] for t, c in tf.items() if t in self.idf}
        norm = math.sqrt(sum(w * w for w in vec.values()))
        return {t: w / norm for t, w in sorted(vec.items())} if norm else {}

    def query_vector(self, text: str) -> dict[str, float]:
        return self._weigh(Counter(tokenize(text)))

    def scores(self, text: str) -> dict[str, float]:
        q = self.query_vector(text)
        out: dict[str, float] = {}
        for term, qw in q.items():
            for doc in self.postings.get(term, ()):
                out[doc] = out.get(doc, 0.0) + qw * self.vectors[doc][term]
        return {d: min(1.0, s) for d, s in out.items() if s > 0.0}

    def score(self, text: str, entity_id: str) -> float:
        q = self.query_vector(text)
        vec = self.vectors.get(entity_id, {})
        return min(1.0, sum(w * vec.get(t, 0.0) for t, w in q.items()))


@dataclass(frozen=True)
class ScopeEntry:
    start_line: int
    end_line: int
    kind: NodeKind
    id: str


class ScopeIndex:
    """Per-file interval table from line spans to Module/Class/Function/Method ids."""

    def __init__(self, graph: RepoGraph):
        self.modules: dict[str, str] = {}
        self.entries: dict[str, list[ScopeEntry]] = {}
        for node in graph.nodes_of_kind(NodeKind.MODULE, NodeKind.CLASS, NodeKind.FUNCTION, NodeKind.METHOD):
            if node.kind is NodeKind.MODULE:
                self.modules[node.file_path] = node.id
            else:
                self.entries.setdefault(node.file_path, []).append(
                    ScopeEntry(node.start_line, node.end_line, node.kind, node.id)
                )
        for entries in self.entries.values():
            entries.sort(key=lambda e: (e.start_line, -e.end_line, e.id))

    def knows(self, file: str) -> bool:
        return file in self.modules

    def covering(self, file: str, line: int) -> list[ScopeEntry]:
        """Entries containing ``line``, innermost first."""
        if file not in self.modules:
            raise UnknownFile(file)
        hits = [e for e in self.entries.get(file, ()) if e.start_line <= line <= e.end_line]
        return sorted(hits, key=lambda e: (-e.start_line, e.end_line, e.id))


@dataclass(frozen=True)
class SearchHit:
    entity_id: str
    score: float
    matched_field: str


@dataclass
class TraversalReport:
    seed: str
    nodes: list[dict]  # {"id": ..., "hop": ...} in visit order
    truncated: bool

    def hops(self) -> dict[str, int]:
        return {n["id"]: n["hop"] for n in self.nodes}


@dataclass(frozen=True)
class ScopeRecord:
    module: str
    function: str | None = None
    class_: str | None = None

    def to_dict(self) -> dict:
        return {"function": self.function, "class": self.class_, "module": self.module}


@dataclass(frozen=True)
class CodeSpan:
    file: str
    start_line: int
    end_line: int
    text: str
    clamped: bool


@dataclass
class RetrievalSession:
    graph: RepoGraph
    index: LexicalIndex
    scopes: ScopeIndex
    repo_root: Path | None = None
    sources: dict[str, str] = field(default_factory=dict)
    _registry: set[tuple[str, int, int]] = field(default_factory=set)
    _lines: dict[str, list[str]] = field(default_factory=dict)
    _syntax: dict[str, ModuleSyntax] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock)

    # -- sources ---------------------------------------------------------

    def source_text(self, file: str) -> str:
        if not self.scopes.knows(file):
            raise UnknownFile(file)
        if file not in self.sources:
            if self.repo_root is None:
                raise SourceUnavailable(f"no source available for {file}")
            try:
                text = (self.repo_root / file).read_bytes().decode("utf-8")
            except OSError as exc:
                raise SourceUnavailable(f"{file}: {exc}") from None
            with self._lock:
                self.sources.setdefault(file, text)
        return self.sources[file]

    def source_lines(self, file: str) -> list[str]:
        if file not in self._lines:
            lines = self.source_text(file).splitlines()
            with self._lock:
                self._lines.setdefault(file, lines)
        return self._lines[file]

    def module_syntax(self, file: str) -> ModuleSyntax:
        if file not in self._syntax:
            syntax = parse_module(file, self.source_text(file))
            with self._lock:
                self._syntax.setdefault(file, syntax)
        return self._syntax[file]

    def function_facts(self, function_id: str) -> dict[int, StatementFact]:
        """Statement facts of one function keyed by statement index (0 = signature)."""
        node = self.graph.node(function_id)
        syntax = self.module_syntax(node.file_path)
        prefix = f"{syntax.module_name}." if syntax.module_name else ""
        decl: EntityDecl | None = None
        for cand in syntax.entities:
            if prefix + cand.qualname == node.qualified_name and cand.start_line == node.start_line:
                decl = cand
                break
        if decl is None:
            return {}
        return dict(function_statements(decl))

    # -- slice registry ----------------------------------------------------

    def register_spans(self, spans: Iterable[tuple[str, int, int]]) -> None:
        with self._lock:
            self._registry.update(spans)

    def registry_snapshot(self) -> frozenset[tuple[str, int, int]]:
        with self._lock:
            return frozenset(self._registry)

    def indexed_count(self) -> int:
        return len(self.index.ids)


def open_session(
    graph: RepoGraph,
    repo_root: str | Path | None = None,
    sources: Mapping[str, str] | None = None,
) -> RetrievalSession:
    if not graph.frozen:
        graph.freeze()
    docs = {
        nid: entity_document(node)
        for nid, node in graph.nodes.items()
        if node.kind is not NodeKind.STATEMENT
    }
    return RetrievalSession(
        graph=graph,
        index=LexicalIndex(docs),
        scopes=ScopeIndex(graph),
        repo_root=Path(repo_root) if repo_root is not None else None,
        sources=dict(sources or {}),
    )


# -- tools -------------------------------------------------------------------


def _matched_field(query_terms: set[str], node: EntityNode) -> str:
    if query_terms & set(tokenize(node.name)):
        return "name"
    if query_terms & set(tokenize(_path_text(node))):
        return "path"
    return "doc"


def search_entities(session: RetrievalSession, query: str, k: int = 10) -> list[SearchHit]:
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = session.index.scores(query)
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
    terms = set(tokenize(query))
    return [
        SearchHit(nid, score, _matched_field(terms, session.graph.nodes[nid]))
        for nid, score in ranked
    ]


def traverse_relations(
    session: RetrievalSession,
    seed: str,
    edge_types: Iterable[EdgeKind | str],
    max_hops: int = 2,
    node_budget: int = 50,
) -> TraversalReport:
    """Layered BFS along outgoing edges of the given kinds.

    Each layer is visited in node-id order; ``truncated`` is set when the
    node budget cuts off a non-empty frontier.
    """
    graph = session.graph
    graph.node(seed)
    if max_hops < 1 or node_budget < 1:
        raise ValueError("max_hops and node_budget must be >= 1")
    kinds = [EdgeKind(k) for k in edge_types]
    hops = {seed: 0}
    frontier = [seed]
    truncated = False
    for hop in range(1, max_hops + 1):
        layer = sorted(
            {dst for nid in frontier for kind in kinds for dst in graph.successors(nid, kind)}
            - hops.keys()
        )
        if not layer:
            break
        frontier = []
        for nid in layer:
            if len(hops) >= node_budget:
                truncated = True
                break
            hops[nid] = hop
            frontier.append(nid)
        if truncated:
            break
    return TraversalReport(seed, [{"id": n, "hop": h} for n, h in hops.items()], truncated)


def get_enclosing_scopes(session: RetrievalSession, file: str, line: int) -> ScopeRecord:
    entries = session.scopes.covering(file, line)
    function = next((e.id for e in entries if e.kind in (NodeKind.FUNCTION, NodeKind.METHOD)), None)
    cls = next((e.id for e in entries if e.kind is NodeKind.CLASS), None)
    return ScopeRecord(module=session.scopes.modules[file], function=function, class_=cls)


def get_code_span(session: RetrievalSession, file: str, start_line: int, end_line: int) -> CodeSpan:
    if start_line < 1 or end_line < start_line:
        raise ValueError("need 1 <= start_line <= end_line")
    lines = session.source_lines(file)
    n = len(lines)
    clamped = end_line > n
    end = min(end_line, n)
    text = "\n".join(lines[start_line - 1 : end]) if start_line <= n else ""
    return CodeSpan(file, start_line, end, text, clamped)


def get_entity_info(session: RetrievalSession, node_id: str) -> dict:
    graph = session.graph
    node = graph.node(node_id)
    incoming, outgoing = graph.degrees(node_id)
    payload = asdict(node)
    payload["kind"] = node.kind.value
    payload["id"] = node_id
    children = sum(
        1
        for c in graph.successors(node_id, EdgeKind.CONTAINS)
        if graph.nodes[c].kind is NodeKind.STATEMENT
    )
    return {
        "node": payload,
        "degrees": {"in": incoming, "out": outgoing},
        "statement_children": children,
    }


__all__ = [
    "CodeSpan",
    "LexicalIndex",
    "RetrievalSession",
    "ScopeIndex",
    "ScopeRecord",
    "SearchHit",
    "SourceUnavailable",
    "TraversalReport",
    "UnknownFile",
    "UnknownNode",
    "get_code_span",
    "get_enclosing_scopes",
    "get_entity_info",
    "open_session",
    "search_entities",
    "tokenize",
    "traverse_relations",
]
