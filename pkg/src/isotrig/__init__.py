"""Guaranteed inter-execution time bounds for self-triggered control.

Builds extended closed-loop fields, homogenizes them, bounds the
triggering condition by a linear comparison model, and turns ray
intersections with the approximate isochronous manifold into certified
lower bounds on inter-execution times, validated against an
event-triggered simulation oracle.
"""

from . import errors
from .expr import Expr, differentiate, evaluate, parse, substitute, to_string

__all__ = [
    "errors",
    "Expr",
    "parse",
    "differentiate",
    "evaluate",
    "substitute",
    "to_string",
]
