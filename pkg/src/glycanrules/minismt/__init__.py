"""Bundled finite-domain SMT solver speaking an SMT-LIB2 subset."""

from .engine import Engine, SolverError

__all__ = ["Engine", "SolverError"]
