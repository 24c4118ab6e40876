"""Benchmark systems used throughout the tests, configs, and scripts."""

from __future__ import annotations

import math
from functools import lru_cache

from . import expr as ex
from .model import ControlModel, ExtendedField, Region, build_extended, homogenize_field, lie_chain

__all__ = [
    "cubic_system",
    "rigid_body",
    "pendulum_field",
    "pendulum_trigger",
    "cubic_chain",
    "rigid_body_chain",
]

# Relative-trigger gains |e| = coeff * sigma * |x| for the two benchmarks.
CUBIC_TRIGGER_COEFF = 0.0127
RIGID_TRIGGER_COEFF = 0.79


def _relative_trigger(n: int, coeff: float, sigma: float) -> ex.Expr:
    e2 = " + ".join(f"e{i + 1}^2" for i in range(n))
    x2 = " + ".join(f"x{i + 1}^2" for i in range(n))
    names = [f"x{i + 1}" for i in range(n)] + [f"e{i + 1}" for i in range(n)]
    return ex.parse(f"{e2} - c^2*sigma^2*({x2})", names, params={"c": coeff, "sigma": sigma})


@lru_cache(maxsize=None)
def cubic_system(sigma: float, radius: float = 1.0) -> ControlModel:
    """Two-state cubic polynomial plant with a cubic feedback law.

    The extended closed loop is homogeneous of degree 2 as is, so no
    embedding is needed; the relative trigger uses gain 0.0127 * sigma.
    """
    f = (
        ex.parse("-x1^3 + x1*x2^2", ("x1", "x2")),
        ex.parse("x1*x2^2 + u1 - x1^2*x2", ("x1", "x2", "u1")),
    )
    k = (ex.parse("-x2^3 - x1*x2^2", ("x1", "x2")),)
    return ControlModel(
        n=2, m=1, f=f, k=k, gamma=_relative_trigger(2, CUBIC_TRIGGER_COEFF, sigma),
        region=Region(radius),
    )


@lru_cache(maxsize=None)
def rigid_body(sigma: float, radius: float = 2.0) -> ControlModel:
    """Rigid body with two torque inputs and a stabilizing cubic feedback."""
    f = (
        ex.parse("u1", ("u1",)),
        ex.parse("u2", ("u2",)),
        ex.parse("x1*x2", ("x1", "x2")),
    )
    k = (
        ex.parse("-x1*x2 - 2*x2*x3 - x1 - x3", ("x1", "x2", "x3")),
        ex.parse("2*x1*x2*x3 + 3*x3^2 - x2", ("x1", "x2", "x3")),
    )
    return ControlModel(
        n=3, m=2, f=f, k=k, gamma=_relative_trigger(3, RIGID_TRIGGER_COEFF, sigma),
        region=Region(radius),
    )


@lru_cache(maxsize=None)
def pendulum_field(g_over_l: float = 9.8, k_over_m: float = 0.1) -> ExtendedField:
    """Unforced damped pendulum as a plain two-state field (no error state)."""
    comps = (
        ex.var("x2"),
        ex.parse("-a*sin(x1) - b*x2", ("x1", "x2"), params={"a": g_over_l, "b": k_over_m}),
    )
    return ExtendedField(names=("x1", "x2"), Z=comps)


def pendulum_trigger(angle: float = math.pi / 6) -> ex.Expr:
    """Crossing condition: the pendulum angle reaches ``angle``."""
    return ex.sub(ex.var("x1"), ex.const(angle))


@lru_cache(maxsize=None)
def cubic_chain(sigma: float, p: int):
    """Lie chain of the cubic benchmark's extended loop (cached: large trees)."""
    field = build_extended(cubic_system(sigma))
    field.xi = 2.0
    return lie_chain(field, cubic_system(sigma).gamma, p)


@lru_cache(maxsize=None)
def rigid_body_chain(sigma: float, p: int, xi: float = 1.0):
    """Lie chain of the homogenized rigid-body loop (cached: large trees)."""
    model = rigid_body(sigma)
    field = homogenize_field(build_extended(model), xi)
    return lie_chain(field, model.gamma, p)
