"""Certified inter-execution time bounds.

A fresh sample z with Gamma(z) < 0 defines a homogeneous ray; intersecting
that ray with the approximate isochronous manifold of a comparison model
gives the scale factor lambda, and the field's scaling law turns it into a
guaranteed lower bound tau = lambda^xi * t_star on the event time.  A
higher-order model refines the bound iteratively while staying one-sided;
a reversed-inequality model gives matching upper bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np

from .comparison import LOWER, UPPER, ComparisonModel
from .errors import ImmediateTriggerError, TStarSelectionError
from .model import LieChain, Region, W_NAME
from .roots import min_positive_root
from .sampling import sphere_directions

__all__ = [
    "TriggerBound",
    "IterationRecord",
    "beta",
    "tau_closed_form_p3",
    "tau_poly_root",
    "tau_iterative",
    "tau_upper",
    "self_trigger_time",
    "ray_crossing",
    "ray_directions",
    "default_t_grid",
    "select_t_star",
]

# One-sided rounding keeps the guarantees under floating point.
ROUND_DOWN = 1.0 - 1e-9
ROUND_UP = 1.0 + 1e-9

CLOSED_FORM_P3 = "closed_form_p3"
POLY_ROOT = "poly_root"
ITERATIVE = "iterative"


@dataclass(frozen=True)
class IterationRecord:
    """One refinement step: the ray scale found and the propagated bound vector."""

    lam: float
    o: tuple[float, ...]


@dataclass(frozen=True)
class TriggerBound:
    """A guaranteed execution-time window [tau_lower, tau_upper]."""

    tau_lower: float
    method: str
    tau_upper: float | None = None
    iterations: tuple[IterationRecord, ...] = ()

    def __post_init__(self):
        if self.tau_upper is not None and self.tau_lower > self.tau_upper:
            raise ValueError("tau_lower exceeds tau_upper")
        if self.iterations and self.method != ITERATIVE:
            raise ValueError("iteration trace only belongs to the iterative method")


def beta(cm: ComparisonModel, chain: LieChain, z: Sequence[float]) -> np.ndarray:
    """beta_i = exp(A t_star)[1, i+1] * L^i Gamma(z), i = 0..p-1."""
    vals = chain.mu(z, cm.p)
    if vals[0] >= 0.0:
        raise ImmediateTriggerError(
            f"trigger is {vals[0]:.3e} >= 0 at the sampled state"
        )
    return cm.exp_at[0] * vals


def _as_bound(q: float, t_star: float, method: str, **kw) -> TriggerBound:
    if math.isinf(q):
        return TriggerBound(tau_lower=math.inf, method=method, **kw)
    return TriggerBound(tau_lower=q * t_star * ROUND_DOWN, method=method, **kw)


def tau_closed_form_p3(betav: Sequence[float], xi: float, t_star: float) -> TriggerBound:
    """p = 3 closed form: tau = 2 b0 / (-b1 + sign(b0) sqrt(b1^2 - 4 b2 b0)) * t_star.

    Returns the +inf marker when the quadratic admits no positive real root.
    """
    b0, b1, b2 = (float(v) for v in betav)
    if b0 >= 0.0:
        raise ValueError(f"beta_0 must be negative (got {b0})")
    disc = b1 * b1 - 4.0 * b2 * b0
    if disc < 0.0:
        return _as_bound(math.inf, t_star, CLOSED_FORM_P3)
    denom = -b1 - math.sqrt(disc)  # sign(b0) = -1
    if denom == 0.0:
        return _as_bound(math.inf, t_star, CLOSED_FORM_P3)
    q = 2.0 * b0 / denom
    if q <= 0.0:
        return _as_bound(math.inf, t_star, CLOSED_FORM_P3)
    return _as_bound(q, t_star, CLOSED_FORM_P3)


def tau_poly_root(betav: Sequence[float], xi: float, t_star: float) -> TriggerBound:
    """Minimal positive root of sum_i beta_i q^i, rounded down; q = lam^xi."""
    betav = np.asarray(betav, dtype=float)
    if betav[0] >= 0.0:
        raise ValueError(f"beta_0 must be negative (got {betav[0]})")
    q = min_positive_root(betav, side="lower")
    return _as_bound(q, t_star, POLY_ROOT)


def tau_upper(
    cm_upper: ComparisonModel, chain: LieChain, z: Sequence[float]
) -> float:
    """Upper bound on the event time from a reversed-inequality model."""
    if cm_upper.direction != UPPER:
        raise ValueError("cm_upper must be synthesized with the reversed inequality")
    b = beta(cm_upper, chain, z)
    q = min_positive_root(b, side="upper")
    return math.inf if math.isinf(q) else q * cm_upper.t_star * ROUND_UP


def tau_iterative(
    cm_low: ComparisonModel,
    cm_high: ComparisonModel,
    chain: LieChain,
    z: Sequence[float],
    n_iter: int,
) -> TriggerBound:
    """Anytime refinement: accumulate scaled t_star increments, propagating
    the high-order bound vector between steps and re-solving the low-order
    ray crossing on its truncation.  Stops early once the high-order model
    reports the trigger as already fired."""
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    if cm_low.t_star != cm_high.t_star:
        raise ValueError("both models must share t_star")
    if cm_low.p > cm_high.p:
        raise ValueError("cm_low order must not exceed cm_high order")
    if chain.p < cm_high.p:
        raise ValueError(f"chain holds {chain.p} derivatives, need {cm_high.p}")
    xi = chain.field.xi
    if xi is None or not xi > 0.0:
        raise ValueError("the chain's field needs a positive homogeneity degree")
    theta = chain.theta if chain.theta is not None else 0.0
    t_star = cm_low.t_star
    p_low, p_high = cm_low.p, cm_high.p

    o = chain.mu(z, p_high)
    if o[0] >= 0.0:
        raise ImmediateTriggerError(f"trigger is {o[0]:.3e} >= 0 at the sampled state")
    scale_exps = theta + xi * np.arange(p_high)
    row_low = cm_low.exp_at[0]

    total = 0.0
    cum_q = 1.0
    records: list[IterationRecord] = []
    for step in range(n_iter):
        if step > 0 and o[0] > 0.0:
            break  # high-order model says the trigger already fired
        betav = row_low * o[:p_low]
        if step > 0 and betav[0] >= 0.0:
            break
        q = min_positive_root(betav, side="lower")
        if math.isinf(q):
            return TriggerBound(
                tau_lower=math.inf, method=ITERATIVE, iterations=tuple(records)
            )
        lam = q ** (1.0 / xi)
        cum_q *= q
        total += cum_q * t_star
        o = cm_high.exp_at @ (lam**scale_exps * o)
        records.append(IterationRecord(lam=lam, o=tuple(float(v) for v in o)))
    return TriggerBound(
        tau_lower=total * ROUND_DOWN, method=ITERATIVE, iterations=tuple(records)
    )


def self_trigger_time(
    cm: ComparisonModel,
    chain: LieChain,
    z: Sequence[float],
    *,
    method: str = POLY_ROOT,
    cm_high: ComparisonModel | None = None,
    n_iter: int = 1,
    cm_upper: ComparisonModel | None = None,
) -> TriggerBound:
    """One-stop bound computation for a fresh sample."""
    if method == CLOSED_FORM_P3:
        if cm.p != 3:
            raise ValueError("closed_form_p3 needs a p = 3 model")
        xi = chain.field.xi or 1.0
        out = tau_closed_form_p3(beta(cm, chain, z), xi, cm.t_star)
    elif method == POLY_ROOT:
        out = tau_poly_root(beta(cm, chain, z), chain.field.xi or 1.0, cm.t_star)
    elif method == ITERATIVE:
        if cm_high is None:
            raise ValueError("iterative method needs cm_high")
        out = tau_iterative(cm, cm_high, chain, z, n_iter)
    else:
        raise ValueError(f"unknown method {method!r}")
    if cm_upper is not None:
        up = tau_upper(cm_upper, chain, z)
        out = TriggerBound(
            tau_lower=out.tau_lower,
            method=out.method,
            tau_upper=max(up, out.tau_lower),
            iterations=out.iterations,
        )
    return out


# ---------------------------------------------------------------------------
# Ray geometry: isochrone crossings, directions, t_star selection
# ---------------------------------------------------------------------------

def ray_crossing(
    cm: ComparisonModel,
    chain: LieChain,
    direction: Sequence[float],
    t_star: float | None = None,
) -> float | None:
    """Minimal lam > 0 placing lam * direction on the approximate isochrone,
    or None when the ray never crosses it (stable ray)."""
    xi = chain.field.xi
    if xi is None or not xi > 0.0:
        raise ValueError("ray geometry needs a positive homogeneity degree")
    row = cm.first_row(t_star)
    vals = chain.mu(direction, cm.p)
    q = min_positive_root(row * vals, side="lower")
    if math.isinf(q):
        return None
    return q ** (1.0 / xi)


def ray_directions(chain_or_field, count: int) -> np.ndarray:
    """Unit directions on the fresh-sample slice: e = 0, x on the unit
    sphere, with the w coordinate (when present) set to match |x| before
    normalization."""
    field = getattr(chain_or_field, "field", chain_or_field)
    extra = 1 if W_NAME in field.names else 0
    n = (field.dim - extra) // 2
    xs = sphere_directions(n, count)
    dirs = np.zeros((xs.shape[0], field.dim))
    dirs[:, :n] = xs
    if extra:
        dirs[:, -1] = 1.0
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs


def default_t_grid(
    t_min: float = 1e-5, t_max: float = 10.0, per_decade: int = 32
) -> np.ndarray:
    """Ascending logarithmic grid, 32 points per decade by default."""
    decades = math.log10(t_max / t_min)
    return np.geomspace(t_min, t_max, max(2, int(round(decades * per_decade)) + 1))


def select_t_star(
    cm: ComparisonModel,
    chain: LieChain,
    region: Region,
    t_grid: Sequence[float] | None = None,
    *,
    n_directions: int = 64,
    directions: np.ndarray | None = None,
) -> float:
    """Smallest grid time whose approximate isochrone fits inside the region.

    Containment is sampled: every ray crossing lam * d (unit d) must satisfy
    lam <= radius; stable rays impose no constraint.
    """
    grid = np.asarray(default_t_grid() if t_grid is None else t_grid, dtype=float)
    if np.any(np.diff(grid) <= 0) or np.any(grid <= 0):
        raise ValueError("t_grid must be ascending and positive")
    if directions is None:
        directions = ray_directions(chain, n_directions)
    for t in grid:
        lams = [ray_crossing(cm, chain, d, float(t)) for d in directions]
        if all(lam is None or lam <= region.radius * (1 + 1e-12) for lam in lams):
            return float(t)
    raise TStarSelectionError(
        f"no grid time in [{grid[0]:.3e}, {grid[-1]:.3e}] keeps the isochrone inside "
        f"the radius-{region.radius} ball"
    )
