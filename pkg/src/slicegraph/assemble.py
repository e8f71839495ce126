"""Context bundling and suspect ranking.

Every candidate span is scored as

    score = alpha * rel + beta * prox + gamma * [span overlaps a slice step]

with ``rel`` the TF-IDF cosine of the span's entity against the issue text and
``prox = 1 / (1 + d)`` for hop distance ``d`` to the nearest seed.
"""

from __future__ import annotations

import math
import re
from collections import Counter, deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .graph import FUNCTION_KINDS, EdgeKind, RepoGraph, UnknownNode
from .session import RetrievalSession, get_code_span, get_enclosing_scopes, search_entities, tokenize
from .slicer import DataflowSlice

STRATEGIES = ("structural_only", "slices_only", "hybrid")
DEFAULT_BUDGET = 8000
PROX_HOP_CAP = 4
SUSPECT_HOPS = 2
SUSPECT_SEARCH_K = 10

_PROX_EDGES = (EdgeKind.CALLS, EdgeKind.CALLED_BY, EdgeKind.IMPORTS, EdgeKind.IMPORTED_BY)
_CALL_EDGES = (EdgeKind.CALLS, EdgeKind.CALLED_BY)


class EmptySeedSet(ValueError):
    pass


@dataclass(frozen=True)
class BundleWeights:
    alpha: float = 1.0
    beta: float = 0.5
    gamma: float = 1.5

    @classmethod
    def for_strategy(cls, strategy: str, base: BundleWeights | None = None) -> BundleWeights:
        base = base or cls()
        if strategy == "structural_only":
            return replace(base, gamma=0.0)
        if strategy == "slices_only":
            return replace(base, alpha=0.0, beta=0.0)
        if strategy == "hybrid":
            return base
        raise ValueError(f"strategy must be one of {STRATEGIES}")


def score_span(rel: float, prox: float, in_slice: bool, weights: BundleWeights = BundleWeights()) -> float:
    if not (0.0 <= rel <= 1.0 and 0.0 <= prox <= 1.0):
        raise ValueError("rel and prox must lie in [0, 1]")
    return weights.alpha * rel + weights.beta * prox + weights.gamma * (1.0 if in_slice else 0.0)


def token_cost(text: str) -> int:
    return math.ceil(len(text) / 4)


@dataclass(frozen=True)
class ScoredSpan:
    entity_id: str
    file: str
    start_line: int
    end_line: int
    rel: float
    prox: float
    in_slice: bool
    score: float
    token_cost: int = 0


@dataclass
class ContextBundle:
    strategy: str
    budget_tokens: int
    spans: list[ScoredSpan] = field(default_factory=list)
    total_tokens: int = 0
    skipped_count: int = 0

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "budget_tokens": self.budget_tokens,
            "total_tokens": self.total_tokens,
            "skipped_count": self.skipped_count,
            "spans": [vars(s).copy() for s in self.spans],
        }


def hop_distances(
    graph: RepoGraph, seeds: Iterable[str], kinds: Sequence[EdgeKind], max_hops: int
) -> dict[str, int]:
    """Multi-source BFS distances over ``kinds`` (mirrored kinds make it undirected)."""
    dist = {s: 0 for s in seeds}
    queue = deque(sorted(dist))
    while queue:
        cur = queue.popleft()
        if dist[cur] >= max_hops:
            continue
        for kind in kinds:
            for nxt in graph.successors(cur, kind):
                if nxt not in dist:
                    dist[nxt] = dist[cur] + 1
                    queue.append(nxt)
    return dist


def _overlaps(a: tuple[str, int, int], b: tuple[str, int, int]) -> bool:
    return a[0] == b[0] and a[1] <= b[2] and b[1] <= a[2]


def _relevance(session: RetrievalSession, issue_text: str, entity_id: str | None) -> float:
    if not issue_text or entity_id is None:
        return 0.0
    return session.index.score(issue_text, entity_id)


def _merge(spans: list[ScoredSpan], weights: BundleWeights) -> list[ScoredSpan]:
    """Collapse overlapping same-file spans; the widest constituent names the result."""
    merged: list[ScoredSpan] = []
    group: list[ScoredSpan] = []

    def flush() -> None:
        if not group:
            return
        widest = max(group, key=lambda s: (s.end_line - s.start_line, -s.start_line))
        rel = max(s.rel for s in group)
        prox = max(s.prox for s in group)
        in_slice = any(s.in_slice for s in group)
        merged.append(
            ScoredSpan(
                widest.entity_id, group[0].file,
                min(s.start_line for s in group), max(s.end_line for s in group),
                rel, prox, in_slice, score_span(rel, prox, in_slice, weights),
            )
        )
        group.clear()

    for span in sorted(spans, key=lambda s: (s.file, s.start_line, -s.end_line, s.entity_id)):
        if group and span.file == group[0].file and span.start_line <= max(s.end_line for s in group):
            group.append(span)
        else:
            flush()
            group.append(span)
    flush()
    return merged


def _as_slice(obj: DataflowSlice | dict) -> DataflowSlice:
    return obj if isinstance(obj, DataflowSlice) else DataflowSlice.from_dict(obj)


def build_context_bundle(
    session: RetrievalSession,
    seed_ids: Sequence[str],
    slices: Sequence[DataflowSlice | dict] = (),
    strategy: str = "hybrid",
    budget: int = DEFAULT_BUDGET,
    issue_text: str = "",
    weights: BundleWeights | None = None,
) -> ContextBundle:
    """Score candidate spans and pack them greedily under ``budget`` tokens.

    Candidates are function/method bodies within four Calls/Imports hops of a
    seed (a seed module or class lends its distance to its members) plus
    every slice-step span. A span that does not fit is skipped and packing
    continues with the next one.
    """
    active = BundleWeights.for_strategy(strategy, weights)
    if not seed_ids and strategy != "slices_only":
        raise EmptySeedSet(f"strategy {strategy!r} needs at least one seed")
    graph = session.graph
    for sid in seed_ids:
        graph.node(sid)
    evidence = [] if strategy == "structural_only" else [_as_slice(s) for s in slices]
    step_spans = sorted(
        {(st.file, st.start_line, st.end_line, st.statement_id) for sl in evidence for st in sl.steps}
    )
    step_keys = [(f, a, b) for f, a, b, _ in step_spans]

    dist = hop_distances(graph, seed_ids, _PROX_EDGES, PROX_HOP_CAP)

    def distance(nid: str) -> int | None:
        ds = [dist[x] for x in (nid, *graph.ancestors(nid)) if x in dist]
        return min(ds) if ds else None

    candidates: list[ScoredSpan] = []
    for node in graph.nodes_of_kind(*FUNCTION_KINDS):
        d = distance(node.id)
        if d is None:
            continue
        key = (node.file_path, node.start_line, node.end_line)
        rel = _relevance(session, issue_text, node.id)
        prox = 1.0 / (1 + d)
        in_slice = any(_overlaps(key, s) for s in step_keys)
        candidates.append(
            ScoredSpan(node.id, *key, rel, prox, in_slice, score_span(rel, prox, in_slice, active))
        )
    for file, start, end, stmt_id in step_spans:
        owner = graph.enclosing_function(stmt_id) if stmt_id in graph.nodes else None
        d = distance(owner) if owner else None
        rel = _relevance(session, issue_text, owner)
        prox = 1.0 / (1 + d) if d is not None else 0.0
        candidates.append(
            ScoredSpan(stmt_id, file, start, end, rel, prox, True, score_span(rel, prox, True, active))
        )

    merged = _merge(candidates, active)
    priced = []
    for span in merged:
        text = get_code_span(session, span.file, span.start_line, span.end_line).text
        priced.append(replace(span, token_cost=token_cost(text)))
    priced.sort(key=lambda s: (-s.score, s.file, s.start_line))

    bundle = ContextBundle(strategy=strategy, budget_tokens=budget)
    for span in priced:
        if bundle.total_tokens + span.token_cost <= budget:
            bundle.spans.append(span)
            bundle.total_tokens += span.token_cost
        else:
            bundle.skipped_count += 1
    return bundle


# -- suspect ranking -----------------------------------------------------------

_FRAME = re.compile(r'^\s*File "(?P<file>[^"]+)", line (?P<line>\d+), in (?P<func>\S+)\s*$')


@dataclass(frozen=True)
class Frame:
    file: str
    line: int
    function: str


def parse_stack_trace(text: str | None) -> list[Frame]:
    if not text:
        return []
    frames = []
    for raw in text.splitlines():
        m = _FRAME.match(raw)
        if m:
            frames.append(Frame(m["file"], int(m["line"]), m["func"]))
    return frames


def resolve_frame_file(session: RetrievalSession, path: str) -> str | None:
    """Map a traceback path (often absolute) onto a repo-relative file in the graph."""
    path = path.replace("\\", "/")
    if session.scopes.knows(path):
        return path
    matches = [f for f in session.scopes.modules if path.endswith("/" + f)]
    return max(matches, key=len) if matches else None


@dataclass(frozen=True)
class SuspectRegion:
    entity_id: str
    file: str
    start_line: int
    end_line: int
    rel: float
    prox: float
    in_slice: bool
    score: float


def rank_suspect_regions(
    session: RetrievalSession,
    issue_text: str,
    stack_trace: str | None = None,
    weights: BundleWeights | None = None,
) -> list[SuspectRegion]:
    """Rank functions seeded by stack frames and lexical hits, two call hops out.

    Slice membership comes from the session registry, so scores rise by gamma
    for functions the agent has already sliced through.
    """
    if not issue_text or not issue_text.strip():
        raise ValueError("issue_text must be non-empty")
    weights = weights or BundleWeights()
    graph = session.graph
    seeds: set[str] = set()
    for frame in parse_stack_trace(stack_trace):
        file = resolve_frame_file(session, frame.file)
        if file is None:
            continue
        scope = get_enclosing_scopes(session, file, frame.line)
        if scope.function:
            seeds.add(scope.function)
    hits = [
        h for h in search_entities(session, issue_text, k=max(1, session.indexed_count()))
        if graph.nodes[h.entity_id].kind in FUNCTION_KINDS
    ]
    seeds.update(h.entity_id for h in hits[:SUSPECT_SEARCH_K])
    if not seeds:
        return []

    dist = hop_distances(graph, seeds, _CALL_EDGES, SUSPECT_HOPS)
    registry = session.registry_snapshot()
    out = []
    for nid, d in dist.items():
        node = graph.nodes[nid]
        if node.kind not in FUNCTION_KINDS:
            continue
        key = (node.file_path, node.start_line, node.end_line)
        rel = session.index.score(issue_text, nid)
        prox = 1.0 / (1 + d)
        in_slice = any(_overlaps(key, r) for r in registry)
        out.append(SuspectRegion(nid, *key, rel, prox, in_slice, score_span(rel, prox, in_slice, weights)))
    out.sort(key=lambda r: (-r.score, r.entity_id))
    return out


BM25_K1 = 1.5
BM25_B = 0.75


def bm25_scores(documents: dict[str, list[str]], query_terms: Sequence[str]) -> dict[str, float]:
    """Okapi BM25 with the non-negative idf variant ln(1 + (N - df + 0.5) / (df + 0.5))."""
    n = len(documents)
    if n == 0:
        return {}
    avgdl = sum(len(toks) for toks in documents.values()) / n or 1.0
    tfs = {d: Counter(toks) for d, toks in documents.items()}
    df: Counter[str] = Counter()
    for tf in tfs.values():
        df.update(tf.keys())
    out = {}
    for d, tf in tfs.items():
        dl = len(documents[d])
        total = 0.0
        for term in set(query_terms):
            f = tf.get(term, 0)
            if not f:
                continue
            idf = math.log(1 + (n - df[term] + 0.5) / (df[term] + 0.5))
            total += idf * f * (BM25_K1 + 1) / (f + BM25_K1 * (1 - BM25_B + BM25_B * dl / avgdl))
        if total > 0:
            out[d] = total
    return out


def lexical_window(session: RetrievalSession, query: str, budget: int = DEFAULT_BUDGET) -> list[tuple[str, int, int]]:
    """BM25 top function/method spans over raw source, packed to ``budget`` tokens.

    Stand-in for Coverage@budget when a condition produced no bundle.
    """
    graph = session.graph
    texts = {}
    docs = {}
    for node in graph.nodes_of_kind(*FUNCTION_KINDS):
        text = get_code_span(session, node.file_path, node.start_line, node.end_line).text
        texts[node.id] = text
        docs[node.id] = tokenize(text)
    ranked = sorted(bm25_scores(docs, tokenize(query)).items(), key=lambda kv: (-kv[1], kv[0]))
    spans = []
    used = 0
    for nid, _ in ranked:
        node = graph.nodes[nid]
        cost = token_cost(texts[nid])
        if used + cost <= budget:
            spans.append((node.file_path, node.start_line, node.end_line))
            used += cost
    return spans


__all__ = [
    "BundleWeights",
    "ContextBundle",
    "EmptySeedSet",
    "Frame",
    "ScoredSpan",
    "SuspectRegion",
    "UnknownNode",
    "bm25_scores",
    "build_context_bundle",
    "lexical_window",
    "parse_stack_trace",
    "rank_suspect_regions",
    "score_span",
]
