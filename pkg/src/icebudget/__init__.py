"""Distributed in-context-example retrieval with learned per-client budgets."""

__version__ = "0.1.0"
