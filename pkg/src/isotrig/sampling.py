"""Quasi-random and structured point sets over balls and spheres."""

from __future__ import annotations

import numpy as np
from scipy.stats import norm, qmc

__all__ = ["sobol_ball", "sphere_directions", "random_ball"]


def sobol_ball(
    dim: int,
    count: int,
    radius: float,
    seed: int = 0,
    *,
    min_fraction: float = 1e-3,
    abs_axes: tuple[int, ...] = (),
) -> np.ndarray:
    """Low-discrepancy points in the origin-centered ball of ``radius``.

    The radial coordinate is restricted to ``[min_fraction * radius, radius]``
    (uniform in enclosed volume over that shell) so that samples avoid the
    origin, where homogeneous triggering conditions and all their derivatives
    vanish.  Axes listed in ``abs_axes`` are folded to nonnegative values,
    used for the homogenizing coordinate w which is only meaningful on the
    w > 0 half-space.
    """
    if dim < 1 or count < 1:
        raise ValueError("dim and count must be positive")
    eng = qmc.Sobol(d=dim + 1, scramble=True, seed=seed)
    u = eng.random(count)
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    direction = norm.ppf(u[:, :dim])
    norms = np.linalg.norm(direction, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    direction /= norms
    lo = min_fraction**dim
    radial = radius * (lo + (1.0 - lo) * u[:, dim]) ** (1.0 / dim)
    pts = direction * radial[:, None]
    for ax in abs_axes:
        pts[:, ax] = np.abs(pts[:, ax])
        # keep w itself away from zero as well
        pts[:, ax] = np.maximum(pts[:, ax], min_fraction * radius)
    return pts


def random_ball(dim: int, count: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    """Plain uniform points in a ball (pseudo-random counterpart)."""
    g = rng.standard_normal((count, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.uniform(size=count) ** (1.0 / dim)
    return g * r[:, None]


def sphere_directions(dim: int, count: int, seed: int = 0) -> np.ndarray:
    """Roughly equally spaced unit vectors: exact angles for dim 2, a
    Fibonacci lattice for dim 3, normalized Sobol-Gaussian beyond."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])[:count]
    if dim == 2:
        theta = 2.0 * np.pi * np.arange(count) / count
        return np.column_stack([np.cos(theta), np.sin(theta)])
    if dim == 3:
        golden = (1.0 + np.sqrt(5.0)) / 2.0
        i = np.arange(count)
        z = 1.0 - (2.0 * i + 1.0) / count
        phi = 2.0 * np.pi * i / golden
        s = np.sqrt(1.0 - z**2)
        return np.column_stack([s * np.cos(phi), s * np.sin(phi), z])
    eng = qmc.Sobol(d=dim, scramble=True, seed=seed)
    g = norm.ppf(np.clip(eng.random(count), 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)
