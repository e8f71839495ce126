"""Test oracles: a straight-line program generator, brute-force reaching definitions and slicing.

Nothing here imports the production frontend or dataflow pass. The generator
knows the defs and uses of every statement it emits, so the oracle works from
that ground truth rather than from a second parse.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass
from pathlib import Path

VARIABLES = ("a", "b", "c", "d", "e")
MAX_STATEMENTS = 10
FORMS = ("assign", "aug_assign", "return")

F1_FILES = {
    "pkg/__init__.py": "",
    "pkg/util.py": "def inc(a):\n    b = a + 1\n    return b\n",
    "pkg/main.py": "from pkg.util import inc\n\ndef run(x):\n    y = inc(x)\n    y += 1\n    return y\n",
}


@dataclass(frozen=True)
class GeneratedStatement:
    form: str
    target: str | None
    operands: tuple[str, ...]
    text: str

    @property
    def defs(self) -> frozenset[str]:
        return frozenset([self.target]) if self.target else frozenset()

    @property
    def uses(self) -> frozenset[str]:
        extra = (self.target,) if self.form == "aug_assign" else ()
        return frozenset(self.operands + extra)


@dataclass(frozen=True)
class GeneratedFunction:
    seed: int
    params: tuple[str, ...]
    statements: tuple[GeneratedStatement, ...]
    source: str
    name: str = "f"

    def facts(self) -> list[tuple[frozenset[str], frozenset[str]]]:
        """(defs, uses) per position; position 0 is the parameter list."""
        return [(frozenset(self.params), frozenset())] + [(s.defs, s.uses) for s in self.statements]

    def line_of(self, index: int) -> int:
        return index + 1


def _expr(rng: random.Random) -> tuple[str, tuple[str, ...]]:
    picks = rng.randint(0, 2)
    names = tuple(rng.choice(VARIABLES) for _ in range(picks))
    terms = list(names) + [str(rng.randint(0, 9))] * (1 if picks < 2 else 0)
    ops = [rng.choice(("+", "-", "*")) for _ in range(len(terms) - 1)]
    text = terms[0]
    for op, term in zip(ops, terms[1:]):
        text += f" {op} {term}"
    return text, tuple(dict.fromkeys(names))


def generate_function(seed: int) -> GeneratedFunction:
    """Deterministic straight-line function over variables a..e."""
    rng = random.Random(seed)
    params = tuple(sorted(rng.sample(VARIABLES, rng.randint(0, 3))))
    count = rng.randint(1, MAX_STATEMENTS)
    statements = []
    for i in range(count):
        last = i == count - 1
        form = rng.choice(FORMS if last else FORMS[:2])
        if form == "return":
            name = rng.choice(VARIABLES)
            statements.append(GeneratedStatement("return", None, (name,), f"return {name}"))
            continue
        target = rng.choice(VARIABLES)
        expr, operands = _expr(rng)
        op = "=" if form == "assign" else rng.choice(("+=", "-=", "*="))
        statements.append(GeneratedStatement(form, target, operands, f"{target} {op} {expr}"))
    body = "".join(f"    {s.text}\n" for s in statements)
    source = f"def f({', '.join(params)}):\n{body}"
    return GeneratedFunction(seed, params, tuple(statements), source)


# -- reaching definitions and slicing ------------------------------------------------


def oracle_reaching_defs(facts: list[tuple[frozenset[str], frozenset[str]]]) -> set[tuple[int, int, str]]:
    """Def-use edges (def position, use position, variable) by backwards scan."""
    edges = set()
    for pos, (_, uses) in enumerate(facts):
        for var in uses:
            for prior in range(pos - 1, -1, -1):
                if var in facts[prior][0]:
                    edges.add((prior, pos, var))
                    break
    return edges


def oracle_slice(
    edges: set[tuple[int, int, str]],
    facts: list[tuple[frozenset[str], frozenset[str]]],
    seed: int,
    variable: str,
    direction: str,
) -> set[int]:
    """Positions reachable from ``seed``; the first hop keeps to ``variable`` when the seed touches it."""
    if direction == "both":
        return oracle_slice(edges, facts, seed, variable, "backward") | oracle_slice(
            edges, facts, seed, variable, "forward"
        )
    defs, uses = facts[seed]
    if direction == "backward":
        step = {}
        for d, u, v in edges:
            step.setdefault(u, []).append((d, v))
        restrict = variable in uses
    elif direction == "forward":
        step = {}
        for d, u, v in edges:
            step.setdefault(d, []).append((u, v))
        restrict = variable in defs
    else:
        raise ValueError(direction)
    reached = {seed}
    todo = deque([seed])
    while todo:
        cur = todo.popleft()
        for nxt, v in step.get(cur, ()):
            if cur == seed and restrict and v != variable:
                continue
            if nxt not in reached:
                reached.add(nxt)
                todo.append(nxt)
    return reached


def oracle_bfs(adjacency: dict[str, list[str]], seed: str, max_hops: int) -> dict[str, int]:
    """Plain hop distances, no budget."""
    dist = {seed: 0}
    todo = deque([seed])
    while todo:
        cur = todo.popleft()
        if dist[cur] == max_hops:
            continue
        for nxt in adjacency.get(cur, ()):
            if nxt not in dist:
                dist[nxt] = dist[cur] + 1
                todo.append(nxt)
    return dist


def write_f1(root: str | Path) -> Path:
    """Materialise fixture F1 under ``root`` and return it."""
    root = Path(root)
    for rel, text in F1_FILES.items():
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    return root
