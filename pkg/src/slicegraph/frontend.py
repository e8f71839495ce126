"""Python source -> neutral syntax facts consumed by the structural and dataflow passes.

Everything here is a pure function of ``(file_path, source_text)``.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field
from enum import Enum
from pathlib import PurePosixPath


class DefRole(str, Enum):
    DEFINITION = "definition"
    AUGMENTED = "augmented"
    LOOP_TARGET = "loop_target"
    WITH_TARGET = "with_target"
    PARAMETER = "parameter"


class StatementForm(str, Enum):
    SIGNATURE = "signature"
    ASSIGN = "assign"
    AUG_ASSIGN = "aug_assign"
    ANN_ASSIGN = "ann_assign"
    FOR_LOOP = "for_loop"
    WITH_BLOCK = "with_block"
    RETURN = "return"
    EXPRESSION = "expression"
    COMPOUND_OTHER = "compound_other"
    NESTED_DEF = "nested_def"
    NESTED_CLASS = "nested_class"


@dataclass(frozen=True)
class Diagnostic:
    file_path: str
    line: int
    message: str

    def __str__(self) -> str:
        return f"{self.file_path}:{self.line}: {self.message}"


@dataclass
class StatementFact:
    start_line: int
    end_line: int
    form: StatementForm
    defs: list[tuple[str, DefRole]] = field(default_factory=list)
    uses: list[str] = field(default_factory=list)
    declares_global: list[str] = field(default_factory=list)
    declares_nonlocal: list[str] = field(default_factory=list)

    def defined_names(self) -> set[str]:
        return {name for name, _ in self.defs}

    def role_of(self, name: str) -> DefRole | None:
        for var, role in self.defs:
            if var == name:
                return role
        return None


@dataclass
class EntityDecl:
    kind: str  # "class" | "function" | "method"
    name: str
    qualname: str  # dotted path relative to the module
    start_line: int
    end_line: int
    doc_head: str = ""
    parent: str | None = None  # qualname of the enclosing entity, None at module level
    params: list[str] = field(default_factory=list)
    signature_span: tuple[int, int] = (0, 0)
    body: list[StatementFact] = field(default_factory=list)
    bases: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class ImportFact:
    alias: str  # local name bound by the import
    target: str  # absolute dotted object the alias refers to
    imported: str  # full dotted name named by the statement (for Imports edges)
    line: int
    scope: str = ""  # enclosing function qualname, "" at module level


@dataclass(frozen=True)
class CallSite:
    caller: str  # qualname of the calling function/method
    callee_raw_name: str
    line: int
    caller_start: int = 0


@dataclass
class ModuleSyntax:
    file_path: str
    module_name: str
    is_package: bool
    line_count: int = 0
    doc_head: str = ""
    entities: list[EntityDecl] = field(default_factory=list)
    imports: list[ImportFact] = field(default_factory=list)
    call_sites: list[CallSite] = field(default_factory=list)
    dropped_calls: int = 0
    diagnostics: list[Diagnostic] = field(default_factory=list)

    @property
    def body_statements(self) -> dict[str, list[StatementFact]]:
        return {e.qualname: e.body for e in self.entities if e.kind != "class"}

    def entity(self, qualname: str) -> EntityDecl | None:
        for e in self.entities:
            if e.qualname == qualname:
                return e
        return None


def module_name_for(file_path: str) -> tuple[str, bool]:
    """``pkg/sub/mod.py`` -> ``("pkg.sub.mod", False)``; ``pkg/__init__.py`` -> ``("pkg", True)``."""
    parts = list(PurePosixPath(file_path).with_suffix("").parts)
    is_package = bool(parts) and parts[-1] == "__init__"
    if is_package:
        parts = parts[:-1]
    return ".".join(parts), is_package


def first_paragraph(doc: str | None) -> str:
    if not doc:
        return ""
    para: list[str] = []
    for line in doc.strip().splitlines():
        if not line.strip():
            break
        para.append(line.strip())
    return " ".join(para)


# -- def/use extraction ----------------------------------------------------


class _DefUseCollector(ast.NodeVisitor):
    """Collects definitions and load-context uses for one statement subtree."""

    def __init__(self) -> None:
        self.defs: list[tuple[str, DefRole]] = []
        self.uses: list[str] = []
        self.globals: list[str] = []
        self.nonlocals: list[str] = []
        self._store_role: DefRole = DefRole.DEFINITION
        self._suppress_store = False

    def add_def(self, name: str, role: DefRole) -> None:
        if all(name != n for n, _ in self.defs):
            self.defs.append((name, role))

    def add_use(self, name: str) -> None:
        if name not in self.uses:
            self.uses.append(name)

    def _targets(self, node: ast.AST, role: DefRole) -> None:
        prev = self._store_role
        self._store_role = role
        self.visit(node)
        self._store_role = prev

    def visit_Name(self, node: ast.Name) -> None:
        if isinstance(node.ctx, ast.Load):
            self.add_use(node.id)
        elif isinstance(node.ctx, ast.Store) and not self._suppress_store:
            self.add_def(node.id, self._store_role)

    def visit_Assign(self, node: ast.Assign) -> None:
        self.visit(node.value)
        for target in node.targets:
            self._targets(target, DefRole.DEFINITION)

    def visit_AugAssign(self, node: ast.AugAssign) -> None:
        self.visit(node.value)
        if isinstance(node.target, ast.Name):
            self.add_use(node.target.id)
            self.add_def(node.target.id, DefRole.AUGMENTED)
        else:
            self.visit(node.target)

    def visit_AnnAssign(self, node: ast.AnnAssign) -> None:
        # Local annotations are never evaluated; a bare `x: int` binds nothing.
        if node.value is None:
            if not isinstance(node.target, ast.Name):
                self.visit(node.target)
            return
        self.visit(node.value)
        self._targets(node.target, DefRole.DEFINITION)

    def visit_NamedExpr(self, node: ast.NamedExpr) -> None:
        self.visit(node.value)
        self.add_def(node.target.id, DefRole.DEFINITION)

    def _visit_for(self, node: ast.For | ast.AsyncFor) -> None:
        self.visit(node.iter)
        self._targets(node.target, DefRole.LOOP_TARGET)
        for stmt in node.body + node.orelse:
            self.visit(stmt)

    visit_For = _visit_for
    visit_AsyncFor = _visit_for

    def _visit_with(self, node: ast.With | ast.AsyncWith) -> None:
        for item in node.items:
            self.visit(item.context_expr)
            if item.optional_vars is not None:
                self._targets(item.optional_vars, DefRole.WITH_TARGET)
        for stmt in node.body:
            self.visit(stmt)

    visit_With = _visit_with
    visit_AsyncWith = _visit_with

    def visit_ExceptHandler(self, node: ast.ExceptHandler) -> None:
        if node.type is not None:
            self.visit(node.type)
        if node.name:
            self.add_def(node.name, DefRole.DEFINITION)
        for stmt in node.body:
            self.visit(stmt)

    def visit_Import(self, node: ast.Import) -> None:
        for alias in node.names:
            self.add_def(alias.asname or alias.name.split(".")[0], DefRole.DEFINITION)

    def visit_ImportFrom(self, node: ast.ImportFrom) -> None:
        for alias in node.names:
            if alias.name != "*":
                self.add_def(alias.asname or alias.name, DefRole.DEFINITION)

    def visit_Global(self, node: ast.Global) -> None:
        self.globals.extend(n for n in node.names if n not in self.globals)

    def visit_Nonlocal(self, node: ast.Nonlocal) -> None:
        self.nonlocals.extend(n for n in node.names if n not in self.nonlocals)

    def _visit_def(self, node: ast.FunctionDef | ast.AsyncFunctionDef) -> None:
        # Only what the enclosing scope evaluates: decorators and defaults.
        for expr in node.decorator_list + node.args.defaults:
            self.visit(expr)
        for expr in node.args.kw_defaults:
            if expr is not None:
                self.visit(expr)
        self.add_def(node.name, DefRole.DEFINITION)

    visit_FunctionDef = _visit_def
    visit_AsyncFunctionDef = _visit_def

    def visit_ClassDef(self, node: ast.ClassDef) -> None:
        for expr in node.decorator_list + node.bases:
            self.visit(expr)
        for kw in node.keywords:
            self.visit(kw.value)
        self.add_def(node.name, DefRole.DEFINITION)

    def visit_Lambda(self, node: ast.Lambda) -> None:
        for expr in node.args.defaults:
            self.visit(expr)
        for expr in node.args.kw_defaults:
            if expr is not None:
                self.visit(expr)
        inner = _DefUseCollector()
        inner.visit(node.body)
        params = set(_param_names(node.args))
        for name in inner.uses:
            if name not in params:
                self.add_use(name)
        for name, role in inner.defs:
            self.add_def(name, role)

    def _visit_comprehension_owner(self, node: ast.AST) -> None:
        # Comprehension targets are not definitions at the enclosing statement.
        for gen in node.generators:  # type: ignore[attr-defined]
            self.visit(gen.iter)
            prev = self._suppress_store
            self._suppress_store = True
            self.visit(gen.target)
            self._suppress_store = prev
            for cond in gen.ifs:
                self.visit(cond)
        for part in ("elt", "key", "value"):
            sub = getattr(node, part, None)
            if sub is not None:
                self.visit(sub)

    visit_ListComp = _visit_comprehension_owner
    visit_SetComp = _visit_comprehension_owner
    visit_GeneratorExp = _visit_comprehension_owner
    visit_DictComp = _visit_comprehension_owner

    def visit_MatchAs(self, node: ast.MatchAs) -> None:
        if node.pattern is not None:
            self.visit(node.pattern)
        if node.name:
            self.add_def(node.name, DefRole.DEFINITION)

    def visit_MatchStar(self, node: ast.MatchStar) -> None:
        if node.name:
            self.add_def(node.name, DefRole.DEFINITION)

    def visit_MatchMapping(self, node: ast.MatchMapping) -> None:
        self.generic_visit(node)
        if node.rest:
            self.add_def(node.rest, DefRole.DEFINITION)


def _param_names(args: ast.arguments) -> list[str]:
    names = [a.arg for a in args.posonlyargs + args.args]
    if args.vararg:
        names.append(args.vararg.arg)
    names.extend(a.arg for a in args.kwonlyargs)
    if args.kwarg:
        names.append(args.kwarg.arg)
    return names


_FORMS: dict[type, StatementForm] = {
    ast.Assign: StatementForm.ASSIGN,
    ast.AugAssign: StatementForm.AUG_ASSIGN,
    ast.AnnAssign: StatementForm.ANN_ASSIGN,
    ast.For: StatementForm.FOR_LOOP,
    ast.AsyncFor: StatementForm.FOR_LOOP,
    ast.With: StatementForm.WITH_BLOCK,
    ast.AsyncWith: StatementForm.WITH_BLOCK,
    ast.Return: StatementForm.RETURN,
    ast.Expr: StatementForm.EXPRESSION,
    ast.FunctionDef: StatementForm.NESTED_DEF,
    ast.AsyncFunctionDef: StatementForm.NESTED_DEF,
    ast.ClassDef: StatementForm.NESTED_CLASS,
}


def extract_defs_uses(statement: ast.stmt) -> StatementFact:
    """Definitions (with roles) and uses for one direct child of a function body.

    Uses cover every load-context name anywhere inside the statement, so a
    compound statement owns everything in its nested blocks. Attribute and
    subscript targets contribute a use of their base and no definition.
    """
    collector = _DefUseCollector()
    collector.visit(statement)
    return StatementFact(
        start_line=statement.lineno,
        end_line=statement.end_lineno or statement.lineno,
        form=_FORMS.get(type(statement), StatementForm.COMPOUND_OTHER),
        defs=collector.defs,
        uses=collector.uses,
        declares_global=collector.globals,
        declares_nonlocal=collector.nonlocals,
    )


def signature_fact(decl: EntityDecl) -> StatementFact:
    start, end = decl.signature_span
    return StatementFact(
        start_line=start,
        end_line=end,
        form=StatementForm.SIGNATURE,
        defs=[(p, DefRole.PARAMETER) for p in decl.params],
    )


# -- module walk -------------------------------------------------------------


def _is_type_checking(test: ast.expr) -> bool:
    if isinstance(test, ast.Name):
        return test.id == "TYPE_CHECKING"
    return isinstance(test, ast.Attribute) and test.attr == "TYPE_CHECKING"


class _ModuleWalker(ast.NodeVisitor):
    def __init__(self, syntax: ModuleSyntax):
        self.syntax = syntax
        self.stack: list[EntityDecl] = []
        self.import_aliases: set[str] = set()
        self._skip_imports = 0

    @property
    def current_function(self) -> EntityDecl | None:
        if self.stack and self.stack[-1].kind != "class":
            return self.stack[-1]
        return None

    def _declare(self, node: ast.AST, kind: str, name: str) -> EntityDecl:
        parent = self.stack[-1] if self.stack else None
        qualname = f"{parent.qualname}.{name}" if parent else name
        decorators = getattr(node, "decorator_list", [])
        start = min([node.lineno] + [d.lineno for d in decorators])
        decl = EntityDecl(
            kind=kind,
            name=name,
            qualname=qualname,
            start_line=start,
            end_line=node.end_lineno or node.lineno,
            doc_head=first_paragraph(ast.get_docstring(node)),  # type: ignore[arg-type]
            parent=parent.qualname if parent else None,
        )
        self.syntax.entities.append(decl)
        return decl

    def _visit_def(self, node: ast.FunctionDef | ast.AsyncFunctionDef) -> None:
        for expr in node.decorator_list + node.args.defaults:
            self.visit(expr)
        for expr in node.args.kw_defaults:
            if expr is not None:
                self.visit(expr)
        in_class = bool(self.stack) and self.stack[-1].kind == "class"
        decl = self._declare(node, "method" if in_class else "function", node.name)
        decl.params = _param_names(node.args)
        first_body = node.body[0].lineno
        decl.signature_span = (node.lineno, max(node.lineno, first_body - 1))
        decl.body = [extract_defs_uses(stmt) for stmt in node.body]
        self.stack.append(decl)
        for stmt in node.body:
            self.visit(stmt)
        self.stack.pop()

    visit_FunctionDef = _visit_def
    visit_AsyncFunctionDef = _visit_def

    def visit_ClassDef(self, node: ast.ClassDef) -> None:
        for expr in node.decorator_list + node.bases:
            self.visit(expr)
        for kw in node.keywords:
            self.visit(kw.value)
        decl = self._declare(node, "class", node.name)
        decl.bases = [b for b in (_dotted(base) for base in node.bases) if b]
        self.stack.append(decl)
        for stmt in node.body:
            self.visit(stmt)
        self.stack.pop()

    def visit_If(self, node: ast.If) -> None:
        self.visit(node.test)
        guarded = _is_type_checking(node.test)
        self._skip_imports += guarded
        for stmt in node.body:
            self.visit(stmt)
        self._skip_imports -= guarded
        for stmt in node.orelse:
            self.visit(stmt)

    def visit_Call(self, node: ast.Call) -> None:
        func = self.current_function
        if func is not None:
            raw = None
            if isinstance(node.func, ast.Name):
                raw = node.func.id
            elif (
                isinstance(node.func, ast.Attribute)
                and isinstance(node.func.value, ast.Name)
                and node.func.value.id in self.import_aliases
            ):
                raw = f"{node.func.value.id}.{node.func.attr}"
            if raw is None:
                self.syntax.dropped_calls += 1
            else:
                self.syntax.call_sites.append(
                    CallSite(func.qualname, raw, node.lineno, func.start_line)
                )
        self.generic_visit(node)

    def _scope(self) -> str:
        func = self.current_function
        return func.qualname if func else ""

    def visit_Import(self, node: ast.Import) -> None:
        if self._skip_imports:
            return
        for alias in node.names:
            if alias.asname:
                local, target = alias.asname, alias.name
            else:
                local = target = alias.name.split(".")[0]
            self.syntax.imports.append(
                ImportFact(local, target, alias.name, node.lineno, self._scope())
            )

    def visit_ImportFrom(self, node: ast.ImportFrom) -> None:
        if self._skip_imports:
            return
        base = self._resolve_from(node)
        if base is None:
            return
        for alias in node.names:
            if alias.name == "*":
                continue
            full = f"{base}.{alias.name}" if base else alias.name
            self.syntax.imports.append(
                ImportFact(alias.asname or alias.name, full, full, node.lineno, self._scope())
            )

    def _resolve_from(self, node: ast.ImportFrom) -> str | None:
        if not node.level:
            return node.module or ""
        package = self.syntax.module_name.split(".") if self.syntax.module_name else []
        if not self.syntax.is_package:
            package = package[:-1]
        up = node.level - 1
        if up > len(package):
            self.syntax.diagnostics.append(
                Diagnostic(self.syntax.file_path, node.lineno, "relative import beyond repository root")
            )
            return None
        parts = package[: len(package) - up] if up else package
        if node.module:
            parts = parts + node.module.split(".")
        return ".".join(parts)


def _dotted(expr: ast.expr) -> str | None:
    if isinstance(expr, ast.Name):
        return expr.id
    if isinstance(expr, ast.Attribute):
        inner = _dotted(expr.value)
        return f"{inner}.{expr.attr}" if inner else None
    return None


class _AliasScan(ast.NodeVisitor):
    def __init__(self) -> None:
        self.names: set[str] = set()

    def visit_Import(self, node: ast.Import) -> None:
        for alias in node.names:
            self.names.add(alias.asname or alias.name.split(".")[0])

    def visit_ImportFrom(self, node: ast.ImportFrom) -> None:
        for alias in node.names:
            if alias.name != "*":
                self.names.add(alias.asname or alias.name)


def parse_module(file_path: str, source_text: str) -> ModuleSyntax:
    """Parse one file. Syntax errors yield empty facts plus one diagnostic."""
    module_name, is_package = module_name_for(file_path)
    syntax = ModuleSyntax(
        file_path=file_path,
        module_name=module_name,
        is_package=is_package,
        line_count=len(source_text.splitlines()),
    )
    try:
        tree = ast.parse(source_text, filename=file_path)
    except (SyntaxError, ValueError) as exc:
        line = getattr(exc, "lineno", None) or 0
        syntax.diagnostics.append(Diagnostic(file_path, line, f"syntax error: {exc}"))
        return syntax
    syntax.doc_head = first_paragraph(ast.get_docstring(tree))
    scan = _AliasScan()
    scan.visit(tree)
    walker = _ModuleWalker(syntax)
    walker.import_aliases = scan.names
    walker.visit(tree)
    return syntax
