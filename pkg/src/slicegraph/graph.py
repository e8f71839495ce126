"""Typed property graph over a repository: nodes, mirrored edges, JSONL persistence."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Iterator

FORMAT_VERSION = "slicegraph/1"


class NodeKind(str, Enum):
    DIRECTORY = "Directory"
    MODULE = "Module"
    CLASS = "Class"
    FUNCTION = "Function"
    METHOD = "Method"
    STATEMENT = "Statement"


class EdgeKind(str, Enum):
    CONTAINS = "Contains"
    IMPORTS = "Imports"
    IMPORTED_BY = "ImportedBy"
    CALLS = "Calls"
    CALLED_BY = "CalledBy"
    INHERITS = "Inherits"
    DATAFLOW_DEF_USE = "DataflowDefUse"
    DATAFLOW_USE_DEF = "DataflowUseDef"


class BuildMode(str, Enum):
    FULL = "full"
    COARSE = "coarse"


MIRRORS: dict[EdgeKind, EdgeKind] = {
    EdgeKind.IMPORTS: EdgeKind.IMPORTED_BY,
    EdgeKind.IMPORTED_BY: EdgeKind.IMPORTS,
    EdgeKind.CALLS: EdgeKind.CALLED_BY,
    EdgeKind.CALLED_BY: EdgeKind.CALLS,
    EdgeKind.DATAFLOW_DEF_USE: EdgeKind.DATAFLOW_USE_DEF,
    EdgeKind.DATAFLOW_USE_DEF: EdgeKind.DATAFLOW_DEF_USE,
}
DATAFLOW_KINDS = frozenset({EdgeKind.DATAFLOW_DEF_USE, EdgeKind.DATAFLOW_USE_DEF})
FUNCTION_KINDS = frozenset({NodeKind.FUNCTION, NodeKind.METHOD})


class GraphError(Exception):
    """Base class for graph-core failures."""


class IdCollision(GraphError):
    pass


class UnknownNode(GraphError, KeyError):
    def __str__(self) -> str:
        return f"unknown node: {self.args[0]}" if self.args else "unknown node"


class VariableOnNonDataflowEdge(GraphError):
    pass


class MissingDataflowVariable(GraphError):
    pass


class InvalidNode(GraphError):
    pass


class FrozenGraphError(GraphError):
    pass


class CorruptFile(GraphError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


def node_id(kind: NodeKind | str, qualified_name: str, start_line: int) -> str:
    return f"{NodeKind(kind).value}:{qualified_name}:{start_line}"


@dataclass(frozen=True)
class EntityNode:
    kind: NodeKind
    name: str
    qualified_name: str
    file_path: str
    start_line: int
    end_line: int
    doc_head: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", NodeKind(self.kind))

    @property
    def id(self) -> str:
        return node_id(self.kind, self.qualified_name, self.start_line)

    def validate(self) -> None:
        if self.kind is NodeKind.DIRECTORY:
            if self.start_line != 0 or self.end_line != 0:
                raise InvalidNode(f"{self.id}: Directory nodes carry lines 0/0")
        elif not 1 <= self.start_line <= self.end_line:
            raise InvalidNode(
                f"{self.id}: bad line span {self.start_line}..{self.end_line}"
            )

    def contains_line(self, line: int) -> bool:
        return self.start_line <= line <= self.end_line

    def to_record(self) -> dict:
        rec = {"rec": "node", "id": self.id}
        rec.update(asdict(self))
        rec["kind"] = self.kind.value
        return rec


@dataclass(frozen=True, order=True)
class TypedEdge:
    src: str
    dst: str
    kind: EdgeKind
    variable: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", EdgeKind(self.kind))

    @property
    def sort_key(self) -> tuple[str, str, str, str]:
        return (self.src, self.dst, self.kind.value, self.variable)

    def to_record(self) -> dict:
        rec = {"rec": "edge", "src": self.src, "dst": self.dst, "kind": self.kind.value}
        if self.variable:
            rec["variable"] = self.variable
        return rec


class RepoGraph:
    """Node store plus a set of typed edges with per-node, per-kind adjacency.

    Edges are kept unique per ``(src, dst, kind, variable)``; repeated call
    sites between the same pair collapse into one Calls edge.
    """

    def __init__(self, build_mode: BuildMode | str = BuildMode.FULL):
        self.build_mode = BuildMode(build_mode)
        self.nodes: dict[str, EntityNode] = {}
        self.edges: set[TypedEdge] = set()
        self._out: dict[str, dict[EdgeKind, list[str]]] = defaultdict(lambda: defaultdict(list))
        self._in: dict[str, dict[EdgeKind, list[str]]] = defaultdict(lambda: defaultdict(list))
        self._out_edges: dict[str, list[TypedEdge]] = defaultdict(list)
        self._frozen = False

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> RepoGraph:
        self._frozen = True
        return self

    def _check_mutable(self) -> None:
        if self._frozen:
            raise FrozenGraphError("graph is frozen")

    def upsert_node(self, node: EntityNode) -> str:
        self._check_mutable()
        node.validate()
        nid = node.id
        existing = self.nodes.get(nid)
        if existing is not None:
            if existing != node:
                raise IdCollision(f"{nid} already stored with a different payload")
            return nid
        self.nodes[nid] = node
        return nid

    def connect(
        self, src: str, dst: str, kind: EdgeKind | str, variable: str | None = None
    ) -> int:
        """Store ``src -kind-> dst`` and, for mirrored kinds, the reverse edge.

        Returns the number of edges newly stored: 2 for mirrored kinds, 1 for
        Contains/Inherits, 0 when the edge was already present.
        """
        self._check_mutable()
        kind = EdgeKind(kind)
        for nid in (src, dst):
            if nid not in self.nodes:
                raise UnknownNode(nid)
        if kind in DATAFLOW_KINDS:
            if not variable:
                raise MissingDataflowVariable(f"{kind.value} edge needs a variable")
        elif variable:
            raise VariableOnNonDataflowEdge(f"{kind.value} edge cannot carry {variable!r}")
        edge = TypedEdge(src, dst, kind, variable or "")
        if edge in self.edges:
            return 0
        added = self._add_edge(edge)
        mirror = MIRRORS.get(kind)
        if mirror is not None:
            added += self._add_edge(TypedEdge(dst, src, mirror, variable or ""))
        return added

    def _add_edge(self, edge: TypedEdge) -> int:
        if edge in self.edges:
            return 0
        self.edges.add(edge)
        self._out[edge.src][edge.kind].append(edge.dst)
        self._in[edge.dst][edge.kind].append(edge.src)
        self._out_edges[edge.src].append(edge)
        return 1

    # -- queries ---------------------------------------------------------

    def node(self, nid: str) -> EntityNode:
        try:
            return self.nodes[nid]
        except KeyError:
            raise UnknownNode(nid) from None

    def successors(self, nid: str, kind: EdgeKind) -> list[str]:
        return list(self._out.get(nid, {}).get(kind, ()))

    def predecessors(self, nid: str, kind: EdgeKind) -> list[str]:
        return list(self._in.get(nid, {}).get(kind, ()))

    def out_edges(self, nid: str, kind: EdgeKind | None = None) -> list[TypedEdge]:
        edges = self._out_edges.get(nid, ())
        return [e for e in edges if kind is None or e.kind is kind]

    def degrees(self, nid: str) -> tuple[dict[str, int], dict[str, int]]:
        self.node(nid)
        out = {k.value: len(v) for k, v in self._out.get(nid, {}).items() if v}
        inc = {k.value: len(v) for k, v in self._in.get(nid, {}).items() if v}
        return dict(sorted(inc.items())), dict(sorted(out.items()))

    def parent(self, nid: str) -> str | None:
        parents = self.predecessors(nid, EdgeKind.CONTAINS)
        return parents[0] if parents else None

    def ancestors(self, nid: str) -> Iterator[str]:
        cur = self.parent(nid)
        while cur is not None:
            yield cur
            cur = self.parent(cur)

    def enclosing_function(self, nid: str) -> str | None:
        for anc in self.ancestors(nid):
            if self.nodes[anc].kind in FUNCTION_KINDS:
                return anc
        return None

    def nodes_of_kind(self, *kinds: NodeKind) -> list[EntityNode]:
        wanted = set(kinds)
        return [n for _, n in sorted(self.nodes.items()) if n.kind in wanted]

    def count(self, kind: NodeKind | EdgeKind) -> int:
        if isinstance(kind, NodeKind):
            return sum(1 for n in self.nodes.values() if n.kind is kind)
        return sum(1 for e in self.edges if e.kind is kind)

    def files(self) -> list[str]:
        return sorted({n.file_path for n in self.nodes.values() if n.kind is NodeKind.MODULE})

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RepoGraph):
            return NotImplemented
        return (
            self.build_mode == other.build_mode
            and self.nodes == other.nodes
            and self.edges == other.edges
        )

    def __repr__(self) -> str:
        return (
            f"RepoGraph(mode={self.build_mode.value}, nodes={len(self.nodes)}, "
            f"edges={len(self.edges)})"
        )

    # -- invariants ------------------------------------------------------

    def check_invariants(self) -> list[str]:
        """Return human-readable violations; an empty list means the graph is sound."""
        problems: list[str] = []
        for edge in self.edges:
            mirror = MIRRORS.get(edge.kind)
            if mirror and TypedEdge(edge.dst, edge.src, mirror, edge.variable) not in self.edges:
                problems.append(f"missing mirror for {edge}")
            if edge.kind in DATAFLOW_KINDS:
                fa = self.enclosing_function(edge.src)
                fb = self.enclosing_function(edge.dst)
                if fa is None or fa != fb:
                    problems.append(f"dataflow edge crosses functions: {edge}")
        for nid, node in self.nodes.items():
            parents = self.predecessors(nid, EdgeKind.CONTAINS)
            if len(parents) > 1:
                problems.append(f"{nid} has {len(parents)} containers")
            if node.kind is NodeKind.STATEMENT and self.enclosing_function(nid) is None:
                problems.append(f"{nid} has no function ancestor")
            if node.kind is not NodeKind.DIRECTORY and not parents:
                problems.append(f"{nid} is not contained by anything")
            seen = {nid}
            for anc in self.ancestors(nid):
                if anc in seen:
                    problems.append(f"containment cycle through {nid}")
                    break
                seen.add(anc)
        if self.build_mode is BuildMode.COARSE:
            if self.count(NodeKind.STATEMENT) or any(e.kind in DATAFLOW_KINDS for e in self.edges):
                problems.append("coarse graph carries statement-level data")
        return problems


# -- persistence -----------------------------------------------------------


def _dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def iter_records(graph: RepoGraph) -> Iterable[str]:
    yield _dumps(
        {
            "rec": "meta",
            "format": FORMAT_VERSION,
            "build_mode": graph.build_mode.value,
            "nodes": len(graph.nodes),
            "edges": len(graph.edges),
        }
    )
    for nid in sorted(graph.nodes):
        yield _dumps(graph.nodes[nid].to_record())
    for edge in sorted(graph.edges, key=lambda e: e.sort_key):
        yield _dumps(edge.to_record())


def save_graph(graph: RepoGraph, sink: str | Path | IO[str]) -> None:
    text = "".join(line + "\n" for line in iter_records(graph))
    if isinstance(sink, (str, Path)):
        Path(sink).write_text(text, encoding="utf-8")
    else:
        sink.write(text)


def dumps_graph(graph: RepoGraph) -> str:
    return "".join(line + "\n" for line in iter_records(graph))


def load_graph(source: str | Path | IO[str]) -> RepoGraph:
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    return loads_graph(text)


def loads_graph(text: str) -> RepoGraph:
    lines = text.splitlines()
    if not lines:
        raise CorruptFile(1, "empty file")
    try:
        meta = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CorruptFile(1, f"invalid JSON: {exc.msg}") from None
    if not isinstance(meta, dict) or meta.get("rec") != "meta":
        raise CorruptFile(1, "first record must be the meta record")
    if meta.get("format") != FORMAT_VERSION:
        raise CorruptFile(1, f"unsupported format {meta.get('format')!r}")
    try:
        graph = RepoGraph(meta["build_mode"])
        expect_nodes, expect_edges = int(meta["nodes"]), int(meta["edges"])
    except (KeyError, ValueError, TypeError) as exc:
        raise CorruptFile(1, f"bad meta record: {exc}") from None

    seen_edges = False
    for lineno, raw in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise CorruptFile(lineno, f"invalid JSON: {exc.msg}") from None
        if not isinstance(rec, dict):
            raise CorruptFile(lineno, "record is not an object")
        tag = rec.get("rec")
        try:
            if tag == "node":
                if seen_edges:
                    raise CorruptFile(lineno, "node record after edge records")
                node = EntityNode(
                    kind=rec["kind"],
                    name=rec["name"],
                    qualified_name=rec["qualified_name"],
                    file_path=rec["file_path"],
                    start_line=int(rec["start_line"]),
                    end_line=int(rec["end_line"]),
                    doc_head=rec.get("doc_head", ""),
                )
                if rec.get("id") != node.id:
                    raise CorruptFile(lineno, f"id {rec.get('id')!r} does not match payload")
                graph.upsert_node(node)
            elif tag == "edge":
                seen_edges = True
                edge = TypedEdge(rec["src"], rec["dst"], rec["kind"], rec.get("variable", ""))
                for nid in (edge.src, edge.dst):
                    if nid not in graph.nodes:
                        raise CorruptFile(lineno, f"edge references unknown node {nid}")
                if (edge.kind in DATAFLOW_KINDS) != bool(edge.variable):
                    raise CorruptFile(lineno, "variable present iff dataflow edge")
                graph._add_edge(edge)
            else:
                raise CorruptFile(lineno, f"unknown record tag {tag!r}")
        except CorruptFile:
            raise
        except (KeyError, ValueError, TypeError, GraphError) as exc:
            raise CorruptFile(lineno, f"malformed {tag} record: {exc}") from None

    if len(graph.nodes) != expect_nodes or len(graph.edges) != expect_edges:
        raise CorruptFile(
            len(lines) + 1,
            f"truncated: expected {expect_nodes} nodes/{expect_edges} edges, "
            f"found {len(graph.nodes)}/{len(graph.edges)}",
        )
    for edge in graph.edges:
        mirror = MIRRORS.get(edge.kind)
        if mirror and TypedEdge(edge.dst, edge.src, mirror, edge.variable) not in graph.edges:
            raise CorruptFile(len(lines), f"edge without mirror: {edge.sort_key}")
    return graph.freeze()
