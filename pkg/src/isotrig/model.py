"""Extended closed-loop fields, homogenization, and Lie-derivative chains.

The extended state z = (x, e) stacks the plant state with the measurement
error (last sample minus current state); the sample-and-hold closed loop
then reads dz/dt = (f(x, k(x+e)), -f(x, k(x+e))).  Any smooth field can be
embedded one dimension up, via an auxiliary coordinate w with dw/dt = 0,
into a field homogeneous of a chosen degree; original dynamics are the
w = 1 slice.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from . import expr as ex
from .errors import DimensionError, ToolkitError
from .expr import Expr, ZERO
from .sampling import random_ball

__all__ = [
    "Region",
    "ControlModel",
    "ExtendedField",
    "LieChain",
    "HomogeneityReport",
    "build_extended",
    "homogenize_field",
    "homogenize_trigger",
    "verify_homogeneity",
    "lie_chain",
    "scaling_exponent",
]

W_NAME = "w"


@dataclass(frozen=True)
class Region:
    """Origin-centered ball in extended-state space.

    ``kind`` selects how verification/training points are drawn from it:
    "ball" covers the whole ball; "pretrigger" restricts to the sub-level
    set of the trigger (the states a sound bound can ever be consulted on),
    constructed for relative triggers as the cone |e| <= collar * C * |x|,
    with the w coordinate (when present) scaled along rays.
    """

    radius: float
    kind: str = "ball"
    collar: float = 0.98

    def __post_init__(self):
        if not self.radius > 0.0:
            raise ValueError("region radius must be positive")
        if self.kind not in ("ball", "pretrigger"):
            raise ValueError("region kind must be 'ball' or 'pretrigger'")
        if not 0.0 < self.collar <= 1.0:
            raise ValueError("collar must be in (0, 1]")


@dataclass(frozen=True)
class ControlModel:
    """Plant dx/dt = f(x, u), state feedback u = k(x), and trigger Gamma(x, e)."""

    n: int
    m: int
    f: tuple[Expr, ...]
    k: tuple[Expr, ...]
    gamma: Expr
    region: Region = Region(1.0)

    def __post_init__(self):
        if len(self.f) != self.n:
            raise DimensionError(f"f has {len(self.f)} components, expected n={self.n}")
        if len(self.k) != self.m:
            raise DimensionError(f"k has {len(self.k)} components, expected m={self.m}")
        xs = {f"x{i + 1}" for i in range(self.n)}
        us = {f"u{j + 1}" for j in range(self.m)}
        es = {f"e{i + 1}" for i in range(self.n)}
        for i, fi in enumerate(self.f):
            extra = fi.free_vars - xs - us
            if extra:
                raise DimensionError(f"f[{i}] uses unknown variables {sorted(extra)}")
        for j, kj in enumerate(self.k):
            extra = kj.free_vars - xs
            if extra:
                raise DimensionError(f"k[{j}] uses unknown variables {sorted(extra)}")
        extra = self.gamma.free_vars - xs - es - {W_NAME}
        if extra:
            raise DimensionError(f"gamma uses unknown variables {sorted(extra)}")

    @property
    def x_names(self) -> tuple[str, ...]:
        return tuple(f"x{i + 1}" for i in range(self.n))

    @property
    def e_names(self) -> tuple[str, ...]:
        return tuple(f"e{i + 1}" for i in range(self.n))


@dataclass(eq=False)
class ExtendedField:
    """Autonomous vector field over named coordinates.

    ``names`` is the coordinate order used everywhere downstream (state
    vectors, samples, integrators).  When ``homogenized`` the last
    coordinate is w, its component is the zero expression, and ``xi`` is
    the homogeneity degree of the field.  Treat instances as immutable.
    """

    names: tuple[str, ...]
    Z: tuple[Expr, ...]
    xi: float | None = None
    homogenized: bool = False
    theta: float | None = None  # scaling exponent of the trigger it was built for

    def __post_init__(self):
        if len(self.names) != len(self.Z):
            raise DimensionError("one component expression per coordinate")
        allowed = set(self.names)
        for name, zi in zip(self.names, self.Z):
            extra = zi.free_vars - allowed
            if extra:
                raise DimensionError(f"component {name} uses unknown variables {sorted(extra)}")
        if self.homogenized:
            if self.names[-1] != W_NAME:
                raise DimensionError("homogenized fields end with the w coordinate")
            if self.Z[-1] is not ZERO:
                raise DimensionError("dw/dt must be the zero expression")
            if self.xi is None or not self.xi > 0.0:
                raise DimensionError("homogenized fields need xi > 0")

    @property
    def dim(self) -> int:
        return len(self.names)

    @cached_property
    def _rhs(self):
        return ex.compile_scalar(self.Z, self.names)

    @cached_property
    def _rhs_batch(self):
        return ex.compile_batch(self.Z, self.names)

    def ode_rhs(self, t: float, y: np.ndarray):
        """Right-hand side in scipy's (t, y) convention."""
        return self._rhs(y)

    def eval_batch(self, pts: np.ndarray) -> np.ndarray:
        """Field components at an (N, dim) array of points, shape (dim, N)."""
        return self._rhs_batch(pts)


@dataclass(eq=False)
class LieChain:
    """A trigger and its first p Lie derivatives along a field.

    ``entries[k]`` is the k-th Lie derivative (entry 0 is the trigger
    itself).  The map mu_p(z) is the vector of entries 0..p-1; entry p
    feeds the comparison inequality.
    """

    field: ExtendedField
    entries: tuple[Expr, ...]
    theta: float | None = None  # scaling exponent: gamma(lam*z) = lam^theta * gamma(z)

    @property
    def p(self) -> int:
        return len(self.entries) - 1

    @property
    def gamma(self) -> Expr:
        return self.entries[0]

    @cached_property
    def _eval_scalar(self):
        return ex.compile_scalar(self.entries, self.field.names)

    @cached_property
    def _eval_batch(self):
        return ex.compile_batch(self.entries, self.field.names)

    def values(self, z: Sequence[float]) -> np.ndarray:
        """All p+1 Lie values at one point."""
        return np.array(self._eval_scalar(z))

    def values_batch(self, pts: np.ndarray) -> np.ndarray:
        """All p+1 Lie values at an (N, dim) array, shape (p+1, N)."""
        return self._eval_batch(pts)

    def mu(self, z: Sequence[float], p: int | None = None) -> np.ndarray:
        """First p Lie values (the comparison-model initial condition)."""
        p = self.p if p is None else p
        if p > self.p:
            raise DimensionError(f"chain holds {self.p} derivatives, asked for {p}")
        return self.values(z)[:p]

    def truncated(self, p: int) -> "LieChain":
        if p > self.p:
            raise DimensionError(f"chain holds {self.p} derivatives, asked for {p}")
        return LieChain(field=self.field, entries=self.entries[: p + 1], theta=self.theta)


def build_extended(model: ControlModel) -> ExtendedField:
    """Extended closed loop: dx/dt = f(x, k(x+e)), de/dt = -dx/dt."""
    shift = {
        f"x{i + 1}": ex.add(ex.var(f"x{i + 1}"), ex.var(f"e{i + 1}"))
        for i in range(model.n)
    }
    k_held = [ex.substitute(kj, shift) for kj in model.k]
    u_bind = {f"u{j + 1}": k_held[j] for j in range(model.m)}
    z_x = tuple(ex.substitute(fi, u_bind) for fi in model.f)
    z_e = tuple(ex.neg(zi) for zi in z_x)
    return ExtendedField(names=model.x_names + model.e_names, Z=z_x + z_e)


def homogenize_field(field: ExtendedField, target_xi: float) -> ExtendedField:
    """Embed into one higher dimension, homogeneous of degree ``target_xi``.

    Components become w^(xi+1) * Z_i(z / w) with dw/dt = 0; the original
    field is recovered on the w = 1 slice.
    """
    if not target_xi > 0.0:
        raise ValueError("target_xi must be positive")
    if field.homogenized or W_NAME in field.names:
        raise DimensionError("field already carries the w coordinate")
    w = ex.var(W_NAME)
    unscale = {name: ex.div(ex.var(name), w) for name in field.names}
    weight = (
        ex.powi(w, int(target_xi) + 1)
        if float(target_xi).is_integer()
        else ex.powr(w, target_xi + 1.0)
    )
    comps = tuple(ex.mul(weight, ex.substitute(zi, unscale)) for zi in field.Z)
    return ExtendedField(
        names=field.names + (W_NAME,),
        Z=comps + (ZERO,),
        xi=float(target_xi),
        homogenized=True,
        theta=field.theta,
    )


def homogenize_trigger(gamma: Expr, target_theta: float) -> Expr:
    """w^(theta+1) * Gamma(z / w); equals Gamma on the w = 1 slice."""
    w = ex.var(W_NAME)
    unscale = {name: ex.div(ex.var(name), w) for name in gamma.free_vars if name != W_NAME}
    weight = (
        ex.powi(w, int(target_theta) + 1)
        if float(target_theta).is_integer() and target_theta >= -1
        else ex.powr(w, target_theta + 1.0)
    )
    return ex.mul(weight, ex.substitute(gamma, unscale))


@dataclass(frozen=True)
class HomogeneityReport:
    passed: bool
    max_residual: float
    xi: float
    samples: int


def verify_homogeneity(
    field: ExtendedField,
    xi: float,
    samples: int = 50,
    *,
    radius: float = 1.0,
    lambdas: Sequence[float] = (0.5, 2.0),
    rel_tol: float = 1e-9,
    seed: int = 0,
) -> HomogeneityReport:
    """Check Z(lam * z) = lam^(xi+1) * Z(z) componentwise at random points."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    pts = random_ball(field.dim, samples, radius, rng)
    if field.homogenized or W_NAME in field.names:
        iw = field.names.index(W_NAME)
        pts[:, iw] = np.maximum(np.abs(pts[:, iw]), 1e-3 * radius)
    base = field.eval_batch(pts)
    worst = 0.0
    for lam in lambdas:
        scaled = field.eval_batch(lam * pts)
        want = lam ** (xi + 1.0) * base
        scale = np.maximum(np.maximum(np.abs(scaled), np.abs(want)), 1e-12)
        worst = max(worst, float(np.max(np.abs(scaled - want) / scale)))
    return HomogeneityReport(
        passed=worst <= rel_tol, max_residual=worst, xi=float(xi), samples=samples
    )


def lie_chain(field: ExtendedField, gamma: Expr, p: int) -> LieChain:
    """Gamma and its first p Lie derivatives along the field, symbolically."""
    if p < 1:
        raise ValueError("p must be >= 1")
    extra = gamma.free_vars - set(field.names)
    if extra:
        raise DimensionError(f"gamma uses unknown variables {sorted(extra)}")
    entries = [gamma]
    for _ in range(p):
        g = entries[-1]
        total = ZERO
        for name, zi in zip(field.names, field.Z):
            if zi is ZERO or name not in g.free_vars:
                continue
            total = ex.add(total, ex.mul(ex.differentiate(g, name), zi))
        entries.append(total)
    try:
        theta = scaling_exponent(gamma, field.names)
    except ToolkitError:
        theta = None
    return LieChain(field=field, entries=tuple(entries), theta=theta)


def scaling_exponent(
    e: Expr,
    names: Sequence[str],
    *,
    seed: int = 0,
    samples: int = 8,
    rel_tol: float = 1e-7,
) -> float:
    """Exponent a with e(lam * z) = lam^a * e(z), inferred numerically.

    Raises ToolkitError if the values are inconsistent with a single
    exponent (the expression is not homogeneous under uniform scaling).
    """
    rng = np.random.default_rng(seed)
    fn = ex.compile_scalar([e], tuple(names))
    estimates = []
    tried = 0
    while len(estimates) < samples and tried < 20 * samples:
        tried += 1
        z = rng.uniform(0.25, 1.0, size=len(names)) * rng.choice([-1.0, 1.0], size=len(names))
        if W_NAME in names:
            iw = list(names).index(W_NAME)
            z[iw] = abs(z[iw])
        v1 = fn(z)[0]
        v2 = fn(2.0 * z)[0]
        if abs(v1) < 1e-9 or abs(v2) < 1e-9 or not np.isfinite(v1) or not np.isfinite(v2):
            continue
        if v1 * v2 < 0.0:
            raise ToolkitError("expression is not homogeneous under uniform scaling")
        estimates.append(np.log2(v2 / v1))
    if not estimates:
        raise ToolkitError("could not infer a scaling exponent (degenerate expression)")
    a = float(np.mean(estimates))
    if max(abs(v - a) for v in estimates) > rel_tol * max(1.0, abs(a)):
        raise ToolkitError("expression is not homogeneous under uniform scaling")
    rounded = round(a)
    return float(rounded) if abs(a - rounded) <= 1e-6 else a
