"""Linear comparison models: coefficients chi with
L^p Gamma <= sum_i chi_i L^i Gamma over a ball, the companion matrix they
define, and its exponential.  The first component of the companion flow
then upper-bounds the trigger along the true dynamics.

chi synthesis replaces sum-of-squares certification by a sampled minimax
linear program plus an independent quasi-random verification grid; a grid
failure is an error, never a warning, since every downstream guarantee
rests on the inequality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.linalg import expm
from scipy.optimize import linprog
from scipy.stats import norm, qmc

from .errors import InfeasibleChiError
from .model import LieChain, Region, W_NAME
from .sampling import sobol_ball

__all__ = [
    "ComparisonModel",
    "ChiSearchConfig",
    "companion_matrix",
    "matrix_exp",
    "search_chi",
    "verify_chi",
    "bound_evolve",
    "region_samples",
]

LOWER = "lower"
UPPER = "upper"


def companion_matrix(chi: Sequence[float]) -> np.ndarray:
    """Superdiagonal ones, last row chi_0..chi_{p-1}."""
    p = len(chi)
    A = np.zeros((p, p))
    for i in range(p - 1):
        A[i, i + 1] = 1.0
    A[p - 1, :] = chi
    return A


def matrix_exp(A: np.ndarray, t: float) -> np.ndarray:
    """exp(A t) by scaling-and-squaring Pade (scipy), for small p."""
    A = np.asarray(A, dtype=float)
    if t < 0:
        raise ValueError("t must be nonnegative")
    if A.shape[0] != A.shape[1] or A.shape[0] > 8:
        raise ValueError("expected a square matrix with p <= 8")
    return expm(A * t)


@dataclass(eq=False)
class ComparisonModel:
    """Order-p linear bound on the trigger's evolution over a ball.

    ``direction`` records which side of the Lie inequality the
    coefficients satisfy: LOWER models overestimate the trigger (their
    first root lower-bounds the event time), UPPER models underestimate it.
    """

    p: int
    chi: np.ndarray
    t_star: float
    region: Region
    margin: float
    direction: str = LOWER
    train_size: int = 0
    verify_size: int = 0

    def __post_init__(self):
        self.chi = np.asarray(self.chi, dtype=float)
        if self.p < 2:
            raise ValueError("comparison order p must be >= 2")
        if self.chi.shape != (self.p,):
            raise ValueError(f"chi must have length {self.p}")
        if not self.t_star > 0:
            raise ValueError("t_star must be positive")
        if self.direction not in (LOWER, UPPER):
            raise ValueError("direction must be 'lower' or 'upper'")
        self.A = companion_matrix(self.chi)
        self.exp_at = matrix_exp(self.A, self.t_star)

    def with_t_star(self, t_star: float) -> "ComparisonModel":
        return replace(self, t_star=t_star)

    def first_row(self, t: float | None = None) -> np.ndarray:
        """Row 1 of exp(A t); the precomputed t_star row when t is None."""
        if t is None or t == self.t_star:
            return self.exp_at[0]
        return matrix_exp(self.A, t)[0]


def bound_evolve(cm: ComparisonModel, y0: Sequence[float], t: float) -> np.ndarray:
    """exp(A t) @ y0: propagates a dominating Lie-value vector forward."""
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (cm.p,):
        raise ValueError(f"y0 must have length {cm.p}")
    if t == cm.t_star:
        return cm.exp_at @ y0
    return matrix_exp(cm.A, t) @ y0


@dataclass(frozen=True)
class ChiSearchConfig:
    """Sampled-LP synthesis controls."""

    train_points: int = 8192
    verify_points: int = 81920
    seed: int = 0
    chi_bound: float = 1e6
    t_star: float = 1.0  # provisional; refine with select_t_star
    train_margin: float = 0.25  # slack (normalized units) during synthesis
    verify_tol: float = 0.1  # accepted residual, relative to each row's scale
    max_rounds: int = 4  # counterexample-refinement rounds; 1 = no refinement

    def __post_init__(self):
        if self.train_points < 1 or self.verify_points < 10 * self.train_points:
            raise ValueError("verification grid must be >= 10x the training set")
        if self.train_margin < 0 or self.verify_tol < 0:
            raise ValueError("train_margin and verify_tol must be nonnegative")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")


def region_samples(
    chain: LieChain, region: Region, count: int, seed: int
) -> np.ndarray:
    """Quasi-random verification/training points for the region.

    "ball": low-discrepancy points of the extended-state ball, origin
    excluded, the w axis (when present) folded to its positive half.
    "pretrigger": the closed sub-level set of a relative trigger inside the
    ball, built as x on radial shells, e within collar * C * |x|, and (for
    homogenized fields) the whole pattern scaled along rays so w tracks the
    ray parameter.
    """
    field = chain.field
    if region.kind == "ball":
        abs_axes = (field.names.index(W_NAME),) if W_NAME in field.names else ()
        return sobol_ball(field.dim, count, region.radius, seed, abs_axes=abs_axes)
    return _pretrigger_samples(chain, region, count, seed)


def relative_trigger_gain(chain: LieChain) -> float:
    """Gain C of a relative trigger Gamma = |e|^2 - C^2 |x|^2, from values
    at fresh unit states; raises if the trigger is not of that shape."""
    field = chain.field
    aug = 1 if W_NAME in field.names else 0
    n = (field.dim - aug) // 2
    if field.dim != 2 * n + aug or n < 1:
        raise ValueError("pretrigger regions need an (x, e[, w]) extended field")
    rng = np.random.default_rng(12345)
    gains = []
    for _ in range(8):
        x = rng.standard_normal(n)
        x /= np.linalg.norm(x)
        z = np.concatenate([x, np.zeros(n), np.ones(aug)])
        g0 = float(chain.values(z)[0])
        if not g0 < 0.0:
            raise ValueError("trigger is not negative at fresh unit states")
        gains.append(math.sqrt(-g0))
    c = float(np.mean(gains))
    if max(abs(g - c) for g in gains) > 1e-9 * max(1.0, c):
        raise ValueError("trigger gain varies with direction; need |e|^2 - C^2 |x|^2 shape")
    return c


# For homogenized fields, the certified cone around fresh-sample rays keeps
# |x| between this and collar relative to w; within one inter-execution
# window the state's aspect stays in that band.
ASPECT_FLOOR = 0.25


def _pretrigger_samples(
    chain: LieChain, region: Region, count: int, seed: int
) -> np.ndarray:
    field = chain.field
    coeff = region.collar * relative_trigger_gain(chain)
    aug = 1 if W_NAME in field.names else 0
    n = (field.dim - aug) // 2
    eng = qmc.Sobol(d=2 * n + 2 + aug, scramble=True, seed=seed)
    u = np.clip(eng.random(count), 1e-12, 1.0 - 1e-12)
    xd = norm.ppf(u[:, :n])
    xd /= np.linalg.norm(xd, axis=1, keepdims=True)
    ed = norm.ppf(u[:, n : 2 * n])
    ed /= np.linalg.norm(ed, axis=1, keepdims=True)
    if n == 1:  # ppf direction collapses to +-1 via sign
        xd = np.sign(xd)
        ed = np.sign(ed)
    if not aug:
        # Log-uniform radii over the origin-excluded shell: the sign
        # structure of the residual varies with scale, so every decade
        # needs coverage.
        sx = 10.0 ** (-3.0 * (1.0 - u[:, 2 * n]))
        se = coeff * sx * u[:, 2 * n + 1] ** (1.0 / n)
        xe = np.hstack([xd * sx[:, None], ed * se[:, None]])
        return region.radius * xe / math.sqrt(1.0 + coeff**2)
    sx = ASPECT_FLOOR * (1.0 / ASPECT_FLOOR) ** u[:, 2 * n]
    se = coeff * sx * u[:, 2 * n + 1] ** (1.0 / n)
    base = np.hstack([xd * sx[:, None], ed * se[:, None], np.ones((count, 1))])
    lam_max = region.radius / np.linalg.norm(base, axis=1)
    lam = lam_max * 10.0 ** (-3.0 * (1.0 - u[:, 2 * n + 2]))
    return base * lam[:, None]


def _residuals(chain: LieChain, p: int, chi: np.ndarray, pts: np.ndarray) -> np.ndarray:
    vals = chain.values_batch(pts)  # (p+1, N)
    return vals[p] - chi @ vals[:p]


def _row_scales(vals: np.ndarray) -> np.ndarray:
    """Per-sample magnitude of the Lie vector, floored at 1% of the
    grid-wide maximum: near-vanishing rows (deep region corners) are judged
    against the dominant scale instead of amplifying their own roundoff."""
    row = np.max(np.abs(vals), axis=0)
    return np.maximum(row, 1e-2 * float(np.max(row)) + 1e-300)


def verify_chi(
    chain: LieChain,
    region: Region,
    p: int,
    chi: Sequence[float],
    cfg: ChiSearchConfig = ChiSearchConfig(),
    *,
    direction: str = LOWER,
) -> ComparisonModel:
    """Check a given coefficient set on an independent quasi-random grid.

    Raises InfeasibleChiError when any residual lands on the wrong side of
    zero; otherwise returns the model with the achieved margin.
    """
    chi = np.asarray(chi, dtype=float)
    if chain.p < p:
        raise ValueError(f"chain holds {chain.p} derivatives, need {p}")
    pts = region_samples(chain, region, cfg.verify_points, cfg.seed + 1)
    vals = chain.values_batch(pts)
    res = vals[p] - chi @ vals[:p]
    # Judge each residual against its own row's scale: the inequality's
    # terms span many orders of magnitude across the region, so a single
    # absolute threshold would be meaningless.  The floor keeps rows whose
    # Lie values all vanish (deep corners) from amplifying roundoff.
    # verify_tol quantifies the accepted approximation; the tau-soundness
    # suite is the end gate.
    rel = res / _row_scales(vals)
    if direction == LOWER:
        worst = float(np.max(rel))
        slack = -worst
    else:
        worst = float(np.min(rel))
        slack = worst
    if slack < -cfg.verify_tol:
        raise InfeasibleChiError(
            f"{direction} inequality fails on the verification grid "
            f"(worst relative residual {worst:.3e}, tolerance {cfg.verify_tol}, "
            f"{cfg.verify_points} points)"
        )
    return ComparisonModel(
        p=p,
        chi=chi,
        t_star=cfg.t_star,
        region=region,
        margin=max(0.0, slack),
        direction=direction,
        train_size=0,
        verify_size=cfg.verify_points,
    )


def _fit_chi(
    vals: np.ndarray, p: int, sign: float, cfg: ChiSearchConfig, direction: str
) -> np.ndarray:
    """Two-phase LP on one constraint set: feasibility, then tightness."""
    W = vals / _row_scales(vals)
    N = W.shape[1]
    chi_bounds = [(-cfg.chi_bound, cfg.chi_bound)] * p

    # Phase 1 (feasibility): min over chi of the worst normalized residual.
    A_ub = np.hstack([-sign * W[:p].T, -np.ones((N, 1))])
    b_ub = -sign * W[p]
    c = np.zeros(p + 1)
    c[-1] = 1.0
    res = linprog(
        c, A_ub=A_ub, b_ub=b_ub, bounds=chi_bounds + [(None, None)], method="highs"
    )
    if not res.success:
        raise InfeasibleChiError(f"training LP failed: {res.message}")
    # Marginally feasible regions optimize to s* ~ 0; reject only when the
    # training set is infeasible beyond the accepted verification slack.
    if res.x[-1] > 0.5 * cfg.verify_tol:
        raise InfeasibleChiError(
            f"no {direction} coefficients fit the training set "
            f"(best worst-case residual {res.x[-1]:.3e}); "
            "increase p or shrink the region"
        )
    chi = res.x[:p]

    # Phase 2 (tightness): among margin-feasible chi, minimize the total
    # slack so the comparison model hugs the true trigger evolution.  The
    # margin is capped at half the best achievable cushion, since region
    # geometry often makes the inequality marginal near its boundary.  An
    # L1 penalty on chi blocks drift along quasi-null LP directions.
    margin = min(cfg.train_margin, max(0.0, -0.5 * res.x[-1]))
    A2 = np.hstack([-sign * W[:p].T, np.zeros((N, p))])
    b2 = -sign * W[p] - margin
    A_abs = np.hstack(
        [np.vstack([np.eye(p), -np.eye(p)]), np.vstack([-np.eye(p), -np.eye(p)])]
    )
    slack_cost = sign * np.sum(W[:p], axis=1)
    eps = 1e-4 * max(1.0, float(np.max(np.abs(slack_cost))))
    c2 = np.concatenate([slack_cost, np.full(p, eps)])
    res2 = linprog(
        c2,
        A_ub=np.vstack([A2, A_abs]),
        b_ub=np.concatenate([b2, np.zeros(2 * p)]),
        bounds=chi_bounds + [(0.0, None)] * p,
        method="highs",
    )
    return res2.x[:p] if res2.success else chi


def search_chi(
    chain: LieChain,
    region: Region,
    p: int,
    cfg: ChiSearchConfig = ChiSearchConfig(),
    *,
    direction: str = LOWER,
) -> ComparisonModel:
    """Sampled minimax-LP fit of chi with counterexample refinement.

    Each round fits chi on the training set (feasibility LP, then a
    tightness pass at an adaptive margin; residual rows are normalized by
    their own Lie-vector scale), then checks a >= 10x independent grid.
    Verification violators join the training set and the fit repeats, so
    boundary pockets the initial quasi-random set missed get pinned.  The
    final model must pass a fresh grid via :func:`verify_chi`.

    Refinement trades bound tightness for certificate coverage of region
    corners; systems whose corners are structurally marginal do better
    with max_rounds = 1 and a wider verify_tol.
    """
    if chain.p < p:
        raise ValueError(f"chain holds {chain.p} derivatives, need {p}")
    sign = 1.0 if direction == LOWER else -1.0
    pts = region_samples(chain, region, cfg.train_points, cfg.seed)
    vals = chain.values_batch(pts)  # (p+1, N)
    chi = None
    for round_ in range(cfg.max_rounds):
        chi = _fit_chi(vals, p, sign, cfg, direction)
        if round_ == cfg.max_rounds - 1:
            break
        grid = region_samples(chain, region, cfg.verify_points, cfg.seed + 1 + round_)
        gvals = chain.values_batch(grid)
        rel = sign * (gvals[p] - chi @ gvals[:p]) / _row_scales(gvals)
        bad = np.argsort(rel)[-256:]
        if rel[bad[-1]] <= 0.5 * cfg.verify_tol:
            break
        vals = np.hstack([vals, gvals[:, bad[rel[bad] > -cfg.train_margin]]])
    model = verify_chi(chain, region, p, chi, cfg, direction=direction)
    return replace(model, train_size=int(vals.shape[1]))
