"""Statement nodes and intra-procedural def-use edges.

Reaching definitions follow textual order inside one function body: a use of
``v`` at statement ``s`` links to the latest earlier statement that defines
``v``. Compound statements are single nodes, so the scan is flow-insensitive
across branches by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .frontend import DefRole, EntityDecl, StatementFact, StatementForm, signature_fact
from .graph import BuildMode, EdgeKind, EntityNode, NodeKind, RepoGraph, TypedEdge

_SKIPPED_FORMS = (StatementForm.NESTED_DEF, StatementForm.NESTED_CLASS)


def statement_qualname(function_qualname: str, index: int) -> str:
    """Index 0 is the signature pseudo-statement; body statements count from 1."""
    return f"{function_qualname}@{index}"


def statement_index(statement: EntityNode) -> int:
    return int(statement.qualified_name.rsplit("@", 1)[1])


def function_statements(decl: EntityDecl) -> list[tuple[int, StatementFact]]:
    """(index, fact) for every statement that gets a node, signature first."""
    out = [(0, signature_fact(decl))]
    out.extend(
        (i, fact) for i, fact in enumerate(decl.body, start=1) if fact.form not in _SKIPPED_FORMS
    )
    return out


@dataclass
class ScopeState:
    last_def: dict[str, str] = field(default_factory=dict)
    globals: set[str] = field(default_factory=set)
    nonlocals: set[str] = field(default_factory=set)

    def define(self, name: str, stmt_id: str, role: DefRole) -> None:
        if role is DefRole.PARAMETER and (name in self.globals or name in self.nonlocals):
            return
        self.last_def[name] = stmt_id


def emit_statement_nodes(
    graph: RepoGraph, function: EntityNode, decl: EntityDecl
) -> list[tuple[str, StatementFact]]:
    if graph.build_mode is BuildMode.COARSE:
        return []
    emitted = []
    for index, fact in function_statements(decl):
        node = EntityNode(
            kind=NodeKind.STATEMENT,
            name=fact.form.value,
            qualified_name=statement_qualname(function.qualified_name, index),
            file_path=function.file_path,
            start_line=fact.start_line,
            end_line=fact.end_line,
        )
        sid = graph.upsert_node(node)
        graph.connect(function.id, sid, EdgeKind.CONTAINS)
        emitted.append((sid, fact))
    return emitted


def link_def_use(
    graph: RepoGraph, statements: list[tuple[str, StatementFact]]
) -> list[TypedEdge]:
    """Connect each use to its reaching definition; returns the DefUse edges added."""
    state = ScopeState()
    for _, fact in statements:
        state.globals.update(fact.declares_global)
        state.nonlocals.update(fact.declares_nonlocal)

    edges: list[TypedEdge] = []
    for sid, fact in statements:
        for var in fact.uses:
            src = state.last_def.get(var)
            if src is not None:
                edge = TypedEdge(src, sid, EdgeKind.DATAFLOW_DEF_USE, var)
                if graph.connect(src, sid, EdgeKind.DATAFLOW_DEF_USE, var):
                    edges.append(edge)
        for var, role in fact.defs:
            state.define(var, sid, role)
    return edges


def run_dataflow_pass(graph: RepoGraph, function: EntityNode, decl: EntityDecl) -> int:
    """Emit statements and def-use edges for one function; returns the edge-pair count."""
    statements = emit_statement_nodes(graph, function, decl)
    if not statements:
        return 0
    return len(link_def_use(graph, statements))
