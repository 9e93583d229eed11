"""Desk-scale flow-matching video lab with temporal-coherence guidance."""

__version__ = "0.1.0"
