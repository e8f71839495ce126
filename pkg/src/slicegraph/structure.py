"""Structural pass: directory/module/class/function nodes, imports, inheritance, calls.

Call and base-class resolution is restricted to two unambiguous rules:

* a bare name that is a top-level function (or class) of the caller's module,
  or an alias imported into it that names a top-level definition of a known
  module;
* ``alias.name`` where ``alias`` is bound to a known module that defines
  ``name`` at top level.

Anything else (method calls, attribute chains, star imports) is dropped.
"""

from __future__ import annotations

import logging
import os
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath
from typing import Mapping

from .dataflow import run_dataflow_pass
from .frontend import Diagnostic, EntityDecl, ModuleSyntax, parse_module
from .graph import (
    BuildMode,
    EdgeKind,
    EntityNode,
    GraphError,
    NodeKind,
    RepoGraph,
    TypedEdge,
)

log = logging.getLogger(__name__)

_SKIP_DIRS = {"__pycache__", "node_modules"}


class EmptyRepository(UserWarning):
    pass


@dataclass(frozen=True)
class PendingCall:
    caller_id: str
    callee_raw_name: str
    module: str
    scope: str = ""  # caller qualname relative to its module


@dataclass
class BuildReport:
    files: int = 0
    diagnostics: list[Diagnostic] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    unresolved_calls: int = 0
    dropped_calls: int = 0
    dataflow_pairs: int = 0

    def summary(self) -> str:
        return (
            f"{self.files} files, {len(self.diagnostics)} diagnostics, "
            f"{self.unresolved_calls} unresolved calls, {self.dropped_calls} dynamic calls dropped, "
            f"{self.dataflow_pairs} def-use pairs"
        )


@dataclass
class SymbolTable:
    """Per-module top-level definitions and import-alias maps."""

    modules: dict[str, str] = field(default_factory=dict)  # qualname -> node id
    toplevel: dict[str, dict[str, list[str]]] = field(
        default_factory=lambda: defaultdict(lambda: defaultdict(list))
    )
    aliases: dict[tuple[str, str], dict[str, str]] = field(
        default_factory=lambda: defaultdict(dict)
    )

    def lookup_alias(self, module: str, scope: str, name: str) -> str | None:
        parts = scope.split(".") if scope else []
        while True:
            found = self.aliases.get((module, ".".join(parts)), {}).get(name)
            if found is not None:
                return found
            if not parts:
                return None
            parts.pop()

    def definition(self, module: str, name: str, graph: RepoGraph, kinds: set[NodeKind]) -> str | None:
        ids = [i for i in self.toplevel.get(module, {}).get(name, []) if graph.nodes[i].kind in kinds]
        return ids[0] if len(ids) == 1 else None

    def _qualified(self, dotted: str, graph: RepoGraph, kinds: set[NodeKind]) -> str | None:
        module, _, name = dotted.rpartition(".")
        if module in self.modules and name:
            return self.definition(module, name, graph, kinds)
        return None

    def resolve(
        self, raw: str, module: str, scope: str, graph: RepoGraph, kinds: set[NodeKind]
    ) -> str | None:
        if "." not in raw:
            local = self.toplevel.get(module, {}).get(raw, [])
            alias = self.lookup_alias(module, scope, raw)
            if local and alias is not None:
                return None  # shadowed one way or the other; refuse to guess
            if local:
                return self.definition(module, raw, graph, kinds)
            if alias is not None:
                return self._qualified(alias, graph, kinds)
            return None
        head, _, attr = raw.partition(".")
        if "." in attr:
            return None
        target = self.lookup_alias(module, scope, head)
        if target is None or target not in self.modules:
            return None
        return self.definition(target, attr, graph, kinds)

    def known_module_prefix(self, dotted: str) -> str | None:
        parts = dotted.split(".")
        while parts:
            candidate = ".".join(parts)
            if candidate in self.modules:
                return candidate
            parts.pop()
        return None


_FUNCTION_TARGETS = {NodeKind.FUNCTION}
_CLASS_TARGETS = {NodeKind.CLASS}


def resolve_calls(
    pending: list[PendingCall], table: SymbolTable, graph: RepoGraph
) -> tuple[list[TypedEdge], int]:
    """Resolve recorded call sites. Returns Calls edges and the unresolved count."""
    edges: list[TypedEdge] = []
    seen: set[tuple[str, str]] = set()
    unresolved = 0
    for call in pending:
        dst = table.resolve(call.callee_raw_name, call.module, call.scope, graph, _FUNCTION_TARGETS)
        if dst is None:
            unresolved += 1
            continue
        if (call.caller_id, dst) not in seen:
            seen.add((call.caller_id, dst))
            edges.append(TypedEdge(call.caller_id, dst, EdgeKind.CALLS))
    return edges, unresolved


def discover_sources(repo_root: str | Path) -> tuple[dict[str, str], list[Diagnostic]]:
    root = Path(repo_root)
    if not root.is_dir():
        raise NotADirectoryError(f"not a readable directory: {repo_root}")
    sources: dict[str, str] = {}
    diagnostics: list[Diagnostic] = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames[:] = sorted(
            d for d in dirnames if not d.startswith(".") and d not in _SKIP_DIRS
        )
        for fname in sorted(filenames):
            if not fname.endswith(".py"):
                continue
            full = Path(dirpath) / fname
            rel = full.relative_to(root).as_posix()
            try:
                sources[rel] = full.read_bytes().decode("utf-8")
            except UnicodeDecodeError as exc:
                diagnostics.append(Diagnostic(rel, 0, f"skipped, not UTF-8: {exc.reason}"))
            except OSError as exc:
                diagnostics.append(Diagnostic(rel, 0, f"skipped, unreadable: {exc}"))
    return sources, diagnostics


def build_graph(
    repo_root: str | Path, build_mode: BuildMode | str = BuildMode.FULL
) -> tuple[RepoGraph, BuildReport]:
    sources, diagnostics = discover_sources(repo_root)
    graph, report = build_graph_from_sources(sources, build_mode)
    report.diagnostics[:0] = diagnostics
    return graph, report


def _directory_node(path: str) -> EntityNode:
    if not path:
        return EntityNode(NodeKind.DIRECTORY, ".", "", ".", 0, 0)
    parts = PurePosixPath(path).parts
    return EntityNode(NodeKind.DIRECTORY, parts[-1], ".".join(parts), path, 0, 0)


def _ensure_directory(graph: RepoGraph, path: str) -> str:
    node = _directory_node(path)
    if node.id in graph.nodes:
        return node.id
    nid = graph.upsert_node(node)
    if path:
        parent = PurePosixPath(path).parent.as_posix()
        graph.connect(_ensure_directory(graph, "" if parent == "." else parent), nid, EdgeKind.CONTAINS)
    return nid


_DECL_KINDS = {"class": NodeKind.CLASS, "function": NodeKind.FUNCTION, "method": NodeKind.METHOD}


def build_graph_from_sources(
    sources: Mapping[str, str], build_mode: BuildMode | str = BuildMode.FULL
) -> tuple[RepoGraph, BuildReport]:
    """Build the repository graph from ``{repo-relative path: source text}``."""
    graph = RepoGraph(build_mode)
    report = BuildReport()
    _ensure_directory(graph, "")
    if not sources:
        msg = "no .py files found; graph holds the root directory only"
        report.warnings.append(msg)
        warnings.warn(msg, EmptyRepository, stacklevel=2)
        return graph.freeze(), report

    table = SymbolTable()
    parsed: list[tuple[ModuleSyntax, str, list[tuple[EntityDecl, str]]]] = []

    for path in sorted(sources):
        syntax = parse_module(path, sources[path])
        report.files += 1
        report.diagnostics.extend(syntax.diagnostics)
        report.dropped_calls += syntax.dropped_calls
        parent_dir = PurePosixPath(path).parent.as_posix()
        dir_id = _ensure_directory(graph, "" if parent_dir == "." else parent_dir)
        qn = syntax.module_name
        module = EntityNode(
            NodeKind.MODULE,
            qn.rpartition(".")[2],
            qn,
            path,
            1,
            max(1, syntax.line_count),
            syntax.doc_head,
        )
        if module.id in graph.nodes:
            report.diagnostics.append(Diagnostic(path, 0, f"module {qn!r} already defined; skipped"))
            continue
        mod_id = graph.upsert_node(module)
        graph.connect(dir_id, mod_id, EdgeKind.CONTAINS)
        table.modules[qn] = mod_id

        decl_ids: list[tuple[EntityDecl, str]] = []
        latest: dict[str, str] = {}
        for decl in syntax.entities:
            full = f"{qn}.{decl.qualname}" if qn else decl.qualname
            node = EntityNode(
                _DECL_KINDS[decl.kind], decl.name, full, path,
                decl.start_line, decl.end_line, decl.doc_head,
            )
            try:
                nid = graph.upsert_node(node)
            except GraphError as exc:
                report.diagnostics.append(Diagnostic(path, decl.start_line, str(exc)))
                continue
            container = latest.get(decl.parent, mod_id) if decl.parent else mod_id
            graph.connect(container, nid, EdgeKind.CONTAINS)
            latest[decl.qualname] = nid
            decl_ids.append((decl, nid))
            if decl.parent is None:
                table.toplevel[qn][decl.name].append(nid)
        for fact in syntax.imports:
            table.aliases[(qn, fact.scope)][fact.alias] = fact.target
        parsed.append((syntax, mod_id, decl_ids))

    # Second pass: everything below needs the complete module table.
    pending: list[PendingCall] = []
    for syntax, mod_id, decl_ids in parsed:
        qn = syntax.module_name
        for fact in syntax.imports:
            target = table.known_module_prefix(fact.imported)
            if target is not None and table.modules[target] != mod_id:
                graph.connect(mod_id, table.modules[target], EdgeKind.IMPORTS)
        by_qualname = {}
        for decl, nid in decl_ids:
            by_qualname[(decl.qualname, decl.start_line)] = nid
            if decl.kind == "class":
                for base in decl.bases:
                    dst = table.resolve(base, qn, decl.parent or "", graph, _CLASS_TARGETS)
                    if dst is not None and dst != nid:
                        graph.connect(nid, dst, EdgeKind.INHERITS)
        for call in syntax.call_sites:
            caller = by_qualname.get((call.caller, call.caller_start))
            if caller is not None:
                pending.append(PendingCall(caller, call.callee_raw_name, qn, call.caller))

    edges, report.unresolved_calls = resolve_calls(pending, table, graph)
    for edge in edges:
        graph.connect(edge.src, edge.dst, edge.kind)

    if graph.build_mode is BuildMode.FULL:
        for syntax, _, decl_ids in parsed:
            for decl, nid in decl_ids:
                if decl.kind != "class":
                    report.dataflow_pairs += run_dataflow_pass(graph, graph.nodes[nid], decl)

    log.info("built graph: %s (%s)", graph, report.summary())
    return graph.freeze(), report
