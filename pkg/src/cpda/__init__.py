"""Causal program dependence analysis over a small imperative language.

Typical use goes through :mod:`cpda.pipeline` (``analyze``, ``localize``) or
the ``cpda`` command line tool.
"""
from .minilang import NodeTable, parse
from .pipeline import analyze, localize

__version__ = "0.1.0"
__all__ = ["NodeTable", "parse", "analyze", "localize", "__version__"]
