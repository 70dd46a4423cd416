"""Link prediction over a CVE / CWE / CPE knowledge graph with an inductive
two-level relational GNN, optional text-embedding fusion and a TransE baseline."""

__version__ = "0.1.0"
