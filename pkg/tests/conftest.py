from __future__ import annotations

from pathlib import Path

import pytest

from slicegraph.oracles import F1_FILES
from slicegraph.session import open_session
from slicegraph.structure import build_graph, build_graph_from_sources

HERE = Path(__file__).parent
F1_ROOT = HERE / "fixtures" / "f1"
GOLDEN = HERE / "golden"

RUN = "Function:pkg.main.run:3"
INC = "Function:pkg.util.inc:1"


def run_stmt(i: int) -> str:
    return f"Statement:pkg.main.run@{i}:{3 + i}"


def inc_stmt(i: int) -> str:
    return f"Statement:pkg.util.inc@{i}:{1 + i}"


@pytest.fixture
def f1_graph():
    graph, _ = build_graph(F1_ROOT)
    return graph


@pytest.fixture
def f1_session(f1_graph):
    return open_session(f1_graph, repo_root=F1_ROOT)


@pytest.fixture
def f1_sources():
    return dict(F1_FILES)


def session_for(sources: dict[str, str], mode: str = "full"):
    graph, _ = build_graph_from_sources(sources, mode)
    return open_session(graph, sources=sources)


# One summary line per acceptance criterion, filled in by test_acceptance.
ACCEPTANCE_RESULTS: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        status, label = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {label}")
