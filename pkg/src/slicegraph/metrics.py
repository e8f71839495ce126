"""Localization metrics: gold sets from unified diffs, rank metrics, line overlap, coverage."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

from .graph import FUNCTION_KINDS, NodeKind, RepoGraph
from .session import ScopeIndex

_HUNK = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")
DEV_NULL = "/dev/null"


class MalformedDiff(ValueError):
    def __init__(self, line_no: int, line: str, reason: str):
        super().__init__(f"line {line_no}: {reason}: {line!r}")
        self.line_no = line_no
        self.line = line


@dataclass
class GoldSets:
    files: set[str] = field(default_factory=set)
    functions: set[str] = field(default_factory=set)
    lines: set[tuple[str, int]] = field(default_factory=set)


def _strip_prefix(path: str) -> str:
    path = path.split("\t", 1)[0].strip()
    if path == DEV_NULL:
        return path
    if path.startswith(("a/", "b/")):
        return path[2:]
    return path


def _diff_lines(diff_text: str) -> dict[str, set[int]]:
    """Old-file line numbers touched per file (pre-patch coordinates)."""
    touched: dict[str, set[int]] = {}
    lines = diff_text.splitlines()
    old_path = new_path = None
    current: set[int] | None = None
    old_left = new_left = 0
    old_cur = 0
    saw_header = False
    i = 0
    while i < len(lines):
        raw = lines[i]
        no = i + 1
        i += 1
        if old_left > 0 or new_left > 0:
            tag, body = (raw[:1], raw[1:]) if raw else (" ", "")
            if tag == " ":
                old_cur += 1
                old_left -= 1
                new_left -= 1
            elif tag == "-":
                if current is not None and body.strip():
                    current.add(old_cur)
                old_cur += 1
                old_left -= 1
            elif tag == "+":
                if current is not None and body.strip():
                    current.add(max(1, old_cur - 1))
                new_left -= 1
            elif tag == "\\":
                pass
            else:
                raise MalformedDiff(no, raw, "unexpected line inside hunk")
            if old_left < 0 or new_left < 0:
                raise MalformedDiff(no, raw, "hunk longer than its header")
            continue
        if raw.startswith("\\"):
            continue
        if raw.startswith("--- "):
            old_path = _strip_prefix(raw[4:])
            continue
        if raw.startswith("+++ "):
            if old_path is None:
                raise MalformedDiff(no, raw, "'+++' header without '---'")
            new_path = _strip_prefix(raw[4:])
            saw_header = True
            if old_path == DEV_NULL:
                current = None  # file addition: nothing pre-patch to localize
            else:
                current = touched.setdefault(old_path, set())
            continue
        m = _HUNK.match(raw)
        if m:
            if not saw_header:
                raise MalformedDiff(no, raw, "hunk before any file header")
            old_cur = int(m.group(1))
            old_left = int(m.group(2)) if m.group(2) is not None else 1
            new_left = int(m.group(4)) if m.group(4) is not None else 1
            continue
    if old_left > 0 or new_left > 0:
        raise MalformedDiff(len(lines), lines[-1] if lines else "", "truncated hunk")
    if not saw_header:
        first = lines[0] if lines else ""
        raise MalformedDiff(1, first, "no file headers found")
    return touched


def parse_gold_patch(diff_text: str, graph_or_scopes: RepoGraph | ScopeIndex) -> GoldSets:
    """Gold files, lines and functions, all in pre-patch coordinates.

    Removed lines count at their old numbers; a pure insertion counts at the
    old line just before the insertion point. Whitespace-only lines never
    count. Added files are ignored.
    """
    scopes = graph_or_scopes if isinstance(graph_or_scopes, ScopeIndex) else ScopeIndex(graph_or_scopes)
    gold = GoldSets()
    for path, nums in _diff_lines(diff_text).items():
        gold.files.add(path)
        for n in nums:
            gold.lines.add((path, n))
            if not scopes.knows(path):
                continue
            fn = next(
                (e.id for e in scopes.covering(path, n) if e.kind in (NodeKind.FUNCTION, NodeKind.METHOD)),
                None,
            )
            if fn is not None:
                gold.functions.add(fn)
    return gold


# -- rank metrics ----------------------------------------------------------------


def dedupe(items: Iterable[Hashable]) -> list:
    seen: set = set()
    out = []
    for item in items:
        if item not in seen:
            seen.add(item)
            out.append(item)
    return out


def recall_at_k(predicted: Sequence[Hashable], gold: set, k: int) -> int:
    if k < 1:
        raise ValueError("k must be >= 1")
    return int(any(p in gold for p in dedupe(predicted)[:k]))


def mrr(predicted: Sequence[Hashable], gold: set) -> float:
    for rank, p in enumerate(dedupe(predicted), start=1):
        if p in gold:
            return 1.0 / rank
    return 0.0


def f1_at_k(predicted: Sequence[Hashable], gold: set, k: int) -> float:
    top = dedupe(predicted)[:k]
    if not top or not gold:
        return 0.0
    hits = sum(1 for p in top if p in gold)
    if hits == 0:
        return 0.0
    precision = hits / len(top)
    recall = hits / len(gold)
    return 2 * precision * recall / (precision + recall)


def line_iou(predicted: set, gold: set) -> float:
    union = predicted | gold
    if not union:
        return 0.0
    return len(predicted & gold) / len(union)


def coverage_at_budget(spans: Iterable, gold_lines: set[tuple[str, int]]) -> float:
    """Fraction of gold lines inside any span; spans are (file, start, end) or ScoredSpan-like."""
    if not gold_lines:
        return 0.0
    norm = []
    for s in spans:
        if isinstance(s, tuple):
            norm.append(s)
        else:
            norm.append((s.file, s.start_line, s.end_line))
    covered = sum(
        1 for (f, n) in gold_lines if any(f == sf and a <= n <= b for sf, a, b in norm)
    )
    return covered / len(gold_lines)


def _average_ranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for t in range(i, j + 1):
            ranks[order[t]] = avg
        i = j + 1
    return ranks


@dataclass(frozen=True)
class Correlation:
    value: float
    defined: bool


def spearman_rho(a: Sequence[float], b: Sequence[float]) -> Correlation:
    """Pearson correlation of average ranks; NaN with ``defined=False`` on zero variance."""
    if len(a) != len(b):
        raise ValueError("series must have equal length")
    if len(a) < 2:
        return Correlation(math.nan, False)
    ra, rb = _average_ranks(a), _average_ranks(b)
    ma, mb = sum(ra) / len(ra), sum(rb) / len(rb)
    cov = sum((x - ma) * (y - mb) for x, y in zip(ra, rb))
    va = sum((x - ma) ** 2 for x in ra)
    vb = sum((y - mb) ** 2 for y in rb)
    if va == 0 or vb == 0:
        return Correlation(math.nan, False)
    return Correlation(cov / math.sqrt(va * vb), True)


# -- per-instance report ------------------------------------------------------------


@dataclass(frozen=True)
class Prediction:
    file: str
    function: str
    start_line: int
    end_line: int
    score: float


FILE_KS = (1, 3, 5)
FUNCTION_KS = (1, 3, 5)
LINE_KS = (1, 5, 10)


def resolve_prediction_function(graph: RepoGraph, scopes: ScopeIndex, pred: Prediction) -> str:
    """Graph id for a predicted function; unresolvable predictions get a sentinel id."""
    short = pred.function.rsplit(".", 1)[-1]
    matches = [
        n for n in graph.nodes_of_kind(*FUNCTION_KINDS)
        if n.file_path == pred.file
        and (n.qualified_name == pred.function or n.qualified_name.endswith("." + pred.function) or n.name == short)
    ]
    containing = [n for n in matches if n.contains_line(pred.start_line)]
    pick = (containing or matches or [None])[0]
    if pick is not None:
        return pick.id
    if scopes.knows(pred.file):
        for e in scopes.covering(pred.file, pred.start_line):
            if e.kind in FUNCTION_KINDS:
                return e.id
    return f"unresolved:{pred.file}:{pred.function}"


def instance_metrics(
    predictions: Sequence[Prediction],
    gold: GoldSets,
    graph: RepoGraph,
    scopes: ScopeIndex,
    coverage_spans: Iterable | None = None,
) -> dict[str, float | None]:
    """All per-instance metrics; ``None`` marks a metric excluded for empty gold."""
    files = [p.file for p in predictions]
    functions = [resolve_prediction_function(graph, scopes, p) for p in predictions]
    line_sets = [{(p.file, n) for n in range(p.start_line, p.end_line + 1)} for p in predictions]
    out: dict[str, float | None] = {}

    for k in FILE_KS:
        out[f"file_recall@{k}"] = recall_at_k(files, gold.files, k) if gold.files else None
    out["file_mrr"] = mrr(files, gold.files) if gold.files else None
    for k in FUNCTION_KS:
        out[f"function_recall@{k}"] = recall_at_k(functions, gold.functions, k) if gold.functions else None
    out["function_mrr"] = mrr(functions, gold.functions) if gold.functions else None
    for k in FUNCTION_KS:
        out[f"function_f1@{k}"] = f1_at_k(functions, gold.functions, k) if gold.functions else None
    for k in LINE_KS:
        if gold.lines:
            top = set().union(*line_sets[:k]) if line_sets else set()
            out[f"line_recall@{k}"] = int(bool(top & gold.lines))
        else:
            out[f"line_recall@{k}"] = None
    all_lines = set().union(*line_sets) if line_sets else set()
    out["line_iou"] = line_iou(all_lines, gold.lines) if gold.lines else None
    if coverage_spans is None or not gold.lines:
        out["coverage@budget"] = None
    else:
        out["coverage@budget"] = coverage_at_budget(coverage_spans, gold.lines)
    return out


METRIC_NAMES = (
    [f"file_recall@{k}" for k in FILE_KS]
    + ["file_mrr"]
    + [f"function_recall@{k}" for k in FUNCTION_KS]
    + ["function_mrr"]
    + [f"function_f1@{k}" for k in FUNCTION_KS]
    + [f"line_recall@{k}" for k in LINE_KS]
    + ["line_iou", "coverage@budget"]
)


@dataclass
class LocalizationReport:
    per_instance: dict[str, dict[str, float | None]] = field(default_factory=dict)
    flags: dict[str, list[str]] = field(default_factory=dict)

    def aggregate(self) -> dict[str, dict[str, float | int | None]]:
        agg = {}
        for name in METRIC_NAMES:
            vals = [m[name] for m in self.per_instance.values() if m.get(name) is not None]
            excluded = sum(1 for m in self.per_instance.values() if m.get(name) is None)
            agg[name] = {
                "mean": sum(vals) / len(vals) if vals else None,
                "n": len(vals),
                "excluded": excluded,
            }
        return agg

    def to_dict(self) -> dict:
        return {
            "instances": {k: self.per_instance[k] for k in sorted(self.per_instance)},
            "aggregate": self.aggregate(),
            "flags": {k: sorted(v) for k, v in sorted(self.flags.items())},
        }

    def to_table(self) -> str:
        rows = [("metric", "mean", "n", "excluded")]
        for name, a in self.aggregate().items():
            mean = "-" if a["mean"] is None else f"{a['mean']:.4f}"
            rows.append((name, mean, str(a["n"]), str(a["excluded"])))
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = []
        for r in rows:
            lines.append(
                "  ".join(c.ljust(widths[i]) if i == 0 else c.rjust(widths[i]) for i, c in enumerate(r))
            )
        return "\n".join(lines)
