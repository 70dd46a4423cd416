"""Vulnerability knowledge graph: construction, splits, persistence, analyses."""
from .analysis import DEFAULT_WINDOWS, cpe_delay_report, graph_stats, missing_cwe_report
from .build import CATALOG_EPOCH, BuildReport, build_graph
from .graph import (INVERSE_SUFFIX, SCHEMAS, VULN_KINDS, VULN_SCHEMA, KnowledgeGraph, RelationType, Schema,
                    augment_inverses, forward_only, register_schema)
from .split import DatasetSplit, SplitWarning, split_inductive, split_transductive
from .storage import FORMAT_VERSION, GraphFormatError, graph_checksum, load_graph, save_graph

__all__ = [
    "BuildReport", "CATALOG_EPOCH", "DEFAULT_WINDOWS", "DatasetSplit", "FORMAT_VERSION", "GraphFormatError",
    "INVERSE_SUFFIX", "KnowledgeGraph", "RelationType", "SCHEMAS", "Schema", "SplitWarning", "VULN_KINDS",
    "VULN_SCHEMA", "augment_inverses", "build_graph", "cpe_delay_report", "forward_only", "graph_checksum",
    "graph_stats", "load_graph", "missing_cwe_report", "register_schema", "save_graph", "split_inductive",
    "split_transductive",
]
