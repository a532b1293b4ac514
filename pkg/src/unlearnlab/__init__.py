"""Desk-scale laboratory for studying unlearning objectives on a tiny LM."""

__version__ = "0.1.0"
