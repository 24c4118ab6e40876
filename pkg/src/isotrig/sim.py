"""Ground-truth dynamics: adaptive integration, the event-time oracle, and
sample-and-hold closed-loop simulation under the four execution strategies."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from . import expr as ex
from .errors import IntegrationError, ToolkitError
from .expr import Expr
from .model import ExtendedField, W_NAME

__all__ = [
    "IntegratorConfig",
    "Trajectory",
    "SimTrace",
    "flow",
    "event_time_oracle",
    "run_closed_loop",
    "periodic_strategy",
    "event_strategy",
    "self_trigger_strategy",
    "prior_work_strategy",
]


@dataclass(frozen=True)
class IntegratorConfig:
    """Adaptive RK tolerances and event-location controls (times in seconds)."""

    rtol: float = 1e-10
    atol: float = 1e-12
    max_step: float = math.inf
    event_bisection_tol: float = 1e-12
    horizon: float = 10.0
    method: str = "RK45"

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0 and self.event_bisection_tol > 0):
            raise ValueError("tolerances must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")


@dataclass(eq=False)
class Trajectory:
    """Dense-output solution segment of an extended field."""

    t: np.ndarray
    y: np.ndarray  # shape (len(t), dim)
    sol: Callable[[float], np.ndarray]

    def state(self, t: float) -> np.ndarray:
        return np.asarray(self.sol(t), dtype=float)


def flow(
    field: ExtendedField, z0: Sequence[float], T: float, cfg: IntegratorConfig
) -> Trajectory:
    """Integrate dz/dt = Z(z) from z0 over [0, T] with dense output."""
    if not T > 0:
        raise ValueError("T must be positive")
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != (field.dim,) or not np.all(np.isfinite(z0)):
        raise IntegrationError(f"bad initial state {z0!r}")
    res = solve_ivp(
        field.ode_rhs,
        (0.0, T),
        z0,
        method=cfg.method,
        rtol=cfg.rtol,
        atol=cfg.atol,
        max_step=cfg.max_step,
        dense_output=True,
    )
    if not res.success:
        raise IntegrationError(f"integration failed: {res.message}")
    if not np.all(np.isfinite(res.y)):
        raise IntegrationError("non-finite state reached")
    return Trajectory(t=res.t, y=res.y.T, sol=res.sol)


def _gamma_fn(field: ExtendedField, gamma: Expr) -> Callable[[np.ndarray], float]:
    fn = ex.compile_scalar([gamma], field.names)
    return lambda z: fn(z)[0]


def event_time_oracle(
    field: ExtendedField,
    gamma: Expr,
    z0: Sequence[float],
    cfg: IntegratorConfig,
    *,
    t_hint: float | None = None,
    horizon: float | None = None,
) -> float:
    """First time in (0, horizon] at which the trigger crosses zero.

    Scans the integrator's natural steps for a sign change, then refines
    on the dense output to ``event_bisection_tol``.  Returns ``inf`` when
    the trigger keeps its sign over the whole horizon.  ``t_hint`` seeds
    the chunk length of the scan; correctness does not depend on it.
    """
    g = _gamma_fn(field, gamma)
    z0 = np.asarray(z0, dtype=float)
    g0 = g(z0)
    if g0 >= 0.0:
        raise ValueError(f"trigger must be negative at the initial state (got {g0})")
    horizon = cfg.horizon if horizon is None else horizon
    t0, z = 0.0, z0
    chunk = t_hint if t_hint and t_hint > 0 else horizon / 64.0
    while t0 < horizon:
        T = min(chunk, horizon - t0)
        seg = flow(field, z, T, cfg)
        gv = np.array([g(seg.y[i]) for i in range(len(seg.t))])
        hit = _first_crossing(seg, gv, g, cfg.event_bisection_tol)
        if hit is not None:
            return t0 + hit
        t0 += T
        z = seg.y[-1]
        chunk *= 2.0
    return math.inf


def _first_crossing(
    seg: Trajectory, gv: np.ndarray, g: Callable[[np.ndarray], float], tol: float
) -> float | None:
    """Leftmost zero of g along the segment, or None if the sign never flips."""
    for i in range(1, len(seg.t)):
        if gv[i - 1] < 0.0 <= gv[i]:
            a, b = seg.t[i - 1], seg.t[i]
            if gv[i] == 0.0:
                return float(b)
            root = brentq(
                lambda t: g(seg.state(t)), a, b, xtol=tol, rtol=8.882e-16
            )
            return float(root)
    return None


# ---------------------------------------------------------------------------
# Closed-loop sample-and-hold simulation
# ---------------------------------------------------------------------------

# A strategy maps the freshly sampled extended state to the next
# inter-execution interval; EVENT defers the decision to the trigger.
EVENT = "event"
Strategy = tuple[str, Callable[[np.ndarray], float] | None]


def periodic_strategy(T: float) -> Strategy:
    if not T > 0:
        raise ValueError("period must be positive")
    return ("periodic", lambda z: T)


def event_strategy() -> Strategy:
    return (EVENT, None)


def self_trigger_strategy(bound_fn: Callable[[np.ndarray], float], label: str = "selftrig") -> Strategy:
    return (label, bound_fn)


def prior_work_strategy(tau_star: float, r: float, xi: float, label: str = "selftrig_prev") -> Strategy:
    """Norm-based self-trigger: tau = (|z|/r)^(-xi) * tau_star."""
    if not (tau_star > 0 and r > 0 and xi > 0):
        raise ValueError("tau_star, r, xi must be positive")

    def bound(z: np.ndarray) -> float:
        lam = float(np.linalg.norm(z)) / r
        return math.inf if lam == 0.0 else tau_star * lam**-xi

    return (label, bound)


@dataclass(eq=False)
class SimTrace:
    """Time-stamped closed-loop trajectory with execution instants."""

    strategy: str
    names: tuple[str, ...]
    times: np.ndarray
    states: np.ndarray  # shape (len(times), dim)
    exec_instants: np.ndarray
    gamma_history: np.ndarray | None = None

    @property
    def inter_exec(self) -> np.ndarray:
        return np.diff(self.exec_instants)

    def to_csv(self, path: str) -> None:
        """Columns: t, state coordinates, gamma, exec_flag."""
        exec_set = {float(t) for t in self.exec_instants}
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *self.names, "gamma", "exec_flag"])
            for i, t in enumerate(self.times):
                gval = "" if self.gamma_history is None else repr(float(self.gamma_history[i]))
                w.writerow(
                    [repr(float(t))]
                    + [repr(float(v)) for v in self.states[i]]
                    + [gval, int(float(t) in exec_set)]
                )


def run_closed_loop(
    field: ExtendedField,
    gamma: Expr,
    strategy: Strategy,
    x0: Sequence[float],
    T_end: float,
    cfg: IntegratorConfig,
) -> SimTrace:
    """Simulate the sample-and-hold loop: the error resets to zero at each
    execution, then the extended state flows freely until the strategy's
    next instant (or the trigger fires, for the event strategy)."""
    if not T_end >= 0:
        raise ValueError("T_end must be nonnegative")
    label, bound_fn = strategy
    n = (field.dim - (1 if field.homogenized else 0)) // 2
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (n,):
        raise ValueError(f"x0 must have length {n}")
    g = _gamma_fn(field, gamma)

    def fresh_state(x: np.ndarray) -> np.ndarray:
        parts = [x, np.zeros(n)]
        if field.homogenized:
            parts.append([1.0])
        return np.concatenate(parts)

    times = [0.0]
    z = fresh_state(x0)
    states = [z]
    gammas = [g(z)]
    execs = [0.0]
    t = 0.0
    t_hint: float | None = None
    while t < T_end:
        z = fresh_state(states[-1][:n])
        states[-1] = z
        gammas[-1] = g(z)
        if label == EVENT:
            tau = event_time_oracle(
                field, gamma, z, cfg, horizon=max(T_end - t, 1e-12), t_hint=t_hint
            )
            t_hint = None if math.isinf(tau) else 1.25 * tau
        else:
            tau = bound_fn(z)
            if tau <= 0.0:
                raise ToolkitError(
                    f"strategy {label!r} returned a nonpositive interval at t={t}"
                )
        seg_T = min(tau, T_end - t)
        if not seg_T > 0.0:
            break
        seg = flow(field, z, seg_T, cfg)
        for i in range(1, len(seg.t)):
            times.append(t + seg.t[i])
            states.append(seg.y[i])
            gammas.append(g(seg.y[i]))
        t += seg_T
        if math.isinf(tau):
            break  # single execution, free flow to the horizon
        if t < T_end:
            execs.append(t)
    return SimTrace(
        strategy=label,
        names=field.names,
        times=np.array(times),
        states=np.array(states),
        exec_instants=np.array(execs),
        gamma_history=np.array(gammas),
    )
