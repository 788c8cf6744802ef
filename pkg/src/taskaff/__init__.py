"""Higher-order task affinity estimation and task grouping for graph MTL."""

__version__ = "0.1.0"
