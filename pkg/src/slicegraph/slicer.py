"""Bounded def-use slicing from a (file, line, variable) seed, confined to one function."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .dataflow import statement_index
from .frontend import DefRole, StatementFact
from .graph import BuildMode, EdgeKind, NodeKind
from .session import RetrievalSession, UnknownFile

DIRECTIONS = ("backward", "forward", "both")
DEFAULT_MAX_STEPS = 50

FALLBACK_HINT = "use get_code_span to read the source directly"

_ROLE_NAMES = {
    DefRole.PARAMETER: "parameter",
    DefRole.AUGMENTED: "augmented_assignment",
}


@dataclass(frozen=True)
class SliceStep:
    file: str
    start_line: int
    end_line: int
    variable: str
    role: str
    statement_id: str


@dataclass
class DataflowSlice:
    steps: list[SliceStep] = field(default_factory=list)
    direction: str = "backward"
    truncated: bool = False
    note: str = ""

    @property
    def statement_ids(self) -> set[str]:
        return {s.statement_id for s in self.steps}

    def to_dict(self) -> dict:
        return {
            "direction": self.direction,
            "truncated": self.truncated,
            "note": self.note,
            "steps": [vars(s).copy() for s in self.steps],
        }

    @classmethod
    def from_dict(cls, data: dict) -> DataflowSlice:
        return cls(
            steps=[SliceStep(**s) for s in data.get("steps", [])],
            direction=data.get("direction", "backward"),
            truncated=bool(data.get("truncated", False)),
            note=data.get("note", ""),
        )


def _role(fact: StatementFact | None, variable: str) -> str:
    role = fact.role_of(variable) if fact else None
    if role is None:
        return "use"
    return _ROLE_NAMES.get(role, "definition")


def _seed_candidates(session: RetrievalSession, file: str, line: int) -> list[tuple[str, str]]:
    """(function id, statement id) pairs covering ``line``, innermost function first."""
    graph = session.graph
    out = []
    for entry in session.scopes.covering(file, line):
        if entry.kind not in (NodeKind.FUNCTION, NodeKind.METHOD):
            continue
        stmts = [
            graph.nodes[c]
            for c in graph.successors(entry.id, EdgeKind.CONTAINS)
            if graph.nodes[c].kind is NodeKind.STATEMENT and graph.nodes[c].contains_line(line)
        ]
        # A body statement sharing the `def` line wins over the signature.
        stmts.sort(key=lambda s: (statement_index(s) == 0, s.start_line, s.id))
        out.extend((entry.id, s.id) for s in stmts)
    return out


def _bfs(
    session: RetrievalSession,
    seed: str,
    kind: EdgeKind,
    first_hop_variable: str | None,
    max_steps: int,
) -> tuple[dict[str, str], bool]:
    """Statement id -> linking variable, in discovery order (seed excluded)."""
    graph = session.graph
    found: dict[str, str] = {}
    seen = {seed}
    queue = deque([seed])
    while queue:
        cur = queue.popleft()
        edges = sorted(graph.out_edges(cur, kind), key=lambda e: (e.dst, e.variable))
        if cur == seed and first_hop_variable is not None:
            edges = [e for e in edges if e.variable == first_hop_variable]
        for edge in edges:
            if edge.dst in seen:
                continue
            if len(found) >= max_steps:
                return found, True
            seen.add(edge.dst)
            found[edge.dst] = edge.variable
            queue.append(edge.dst)
    return found, False


def get_dataflow_slice(
    session: RetrievalSession,
    file: str,
    line: int,
    variable: str,
    direction: str = "backward",
    max_steps: int = DEFAULT_MAX_STEPS,
) -> DataflowSlice:
    """Trace ``variable`` from the statement covering ``line``.

    Backward follows DataflowUseDef edges, forward DataflowDefUse, ``both``
    takes the union. At the seed only edges of ``variable`` are followed when
    the seed uses it (backward) or defines it (forward); past the seed every
    variable is followed, so indirect provenance (y <- x <- a) is included.
    Steps come back in source order and are recorded in the session registry.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    if not session.scopes.knows(file):
        raise UnknownFile(file)
    result = DataflowSlice(direction=direction)
    graph = session.graph

    if graph.build_mode is BuildMode.COARSE:
        result.note = (
            "graph was built without statement nodes or dataflow edges (coarse mode); "
            + FALLBACK_HINT
        )
        return result

    candidates = _seed_candidates(session, file, line)
    if not candidates:
        result.note = f"no statement node covers {file}:{line} (outside any analysed function); {FALLBACK_HINT}"
        return result

    seed = seed_fact = function_id = None
    facts: dict[int, StatementFact] = {}
    for fid, sid in candidates:
        if fid != function_id:
            function_id, facts = fid, session.function_facts(fid)
        fact = facts.get(statement_index(graph.nodes[sid]))
        if fact is not None and (variable in fact.uses or variable in fact.defined_names()):
            seed, seed_fact = sid, fact
            break
    if seed is None or seed_fact is None:
        result.note = (
            f"variable {variable!r} not referenced at seed statement {candidates[0][1]}; "
            + FALLBACK_HINT
        )
        return result

    linked: dict[str, str] = {}
    if direction in ("backward", "both"):
        first = variable if variable in seed_fact.uses else None
        found, cut = _bfs(session, seed, EdgeKind.DATAFLOW_USE_DEF, first, max_steps)
        linked.update(found)
        result.truncated |= cut
    if direction in ("forward", "both"):
        first = variable if variable in seed_fact.defined_names() else None
        found, cut = _bfs(session, seed, EdgeKind.DATAFLOW_DEF_USE, first, max_steps)
        for sid, var in found.items():
            linked.setdefault(sid, var)
        result.truncated |= cut
    if len(linked) > max_steps:
        linked = dict(list(linked.items())[:max_steps])
        result.truncated = True

    seed_node = graph.nodes[seed]
    steps = [SliceStep(file, seed_node.start_line, seed_node.end_line, variable, "seed", seed)]
    for sid, var in linked.items():
        node = graph.nodes[sid]
        steps.append(
            SliceStep(file, node.start_line, node.end_line, var,
                      _role(facts.get(statement_index(node)), var), sid)
        )
    steps.sort(key=lambda s: (s.start_line, s.statement_id))
    result.steps = steps
    session.register_spans((s.file, s.start_line, s.end_line) for s in steps)
    return result
