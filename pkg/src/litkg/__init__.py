"""Literal-aware knowledge-graph embedding for record/disease link prediction."""

__version__ = "0.1.0"
