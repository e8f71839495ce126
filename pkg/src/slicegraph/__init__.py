"""Typed repository graphs with statement-level dataflow, exposed as agent tools."""

from __future__ import annotations

from .assemble import (
    BundleWeights,
    ContextBundle,
    ScoredSpan,
    SuspectRegion,
    build_context_bundle,
    rank_suspect_regions,
    score_span,
)
from .graph import BuildMode, EdgeKind, EntityNode, NodeKind, RepoGraph, TypedEdge, load_graph, save_graph
from .metrics import GoldSets, LocalizationReport, parse_gold_patch
from .service import ToolService, replay
from .session import (
    RetrievalSession,
    get_code_span,
    get_enclosing_scopes,
    get_entity_info,
    open_session,
    search_entities,
    traverse_relations,
)
from .slicer import DataflowSlice, SliceStep, get_dataflow_slice
from .structure import build_graph, build_graph_from_sources

__version__ = "0.1.0"

__all__ = [
    "BuildMode",
    "BundleWeights",
    "ContextBundle",
    "DataflowSlice",
    "EdgeKind",
    "EntityNode",
    "GoldSets",
    "LocalizationReport",
    "NodeKind",
    "RepoGraph",
    "RetrievalSession",
    "ScoredSpan",
    "SliceStep",
    "SuspectRegion",
    "ToolService",
    "TypedEdge",
    "build_context_bundle",
    "build_graph",
    "build_graph_from_sources",
    "get_code_span",
    "get_dataflow_slice",
    "get_enclosing_scopes",
    "get_entity_info",
    "load_graph",
    "open_session",
    "parse_gold_patch",
    "rank_suspect_regions",
    "replay",
    "save_graph",
    "score_span",
    "search_entities",
    "traverse_relations",
]
