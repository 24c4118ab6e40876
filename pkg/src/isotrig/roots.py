"""Minimal positive real root of low-degree polynomials.

Root isolation uses the Vincent-Collins-Akritas bisection with Descartes'
rule on Mobius-transformed coefficients, followed by sign-change bisection
inside the isolating interval.  Callers pick which end of the final bracket
they get, so lower bounds never overshoot the root and upper bounds never
undershoot it.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["min_positive_root", "min_positive_root_ladder", "poly_eval"]

_COEFF_EPS = 1e-13  # coefficients below this (relative) count as zero


def poly_eval(coeffs, x: float) -> float:
    """Horner evaluation; ``coeffs`` ascending (c0 + c1 x + ...)."""
    acc = 0.0
    for c in reversed(coeffs):
        acc = acc * x + c
    return acc


def _trim(coeffs) -> list[float]:
    c = [float(v) for v in coeffs]
    scale = max((abs(v) for v in c), default=0.0)
    if scale == 0.0:
        return []
    c = [0.0 if abs(v) <= _COEFF_EPS * scale else v for v in c]
    while c and c[-1] == 0.0:
        c.pop()
    return c


def _shift_by_one(c: list[float]) -> list[float]:
    """Taylor shift: coefficients of P(x + 1)."""
    out = list(c)
    n = len(out)
    for i in range(n - 1):
        for j in range(n - 2, i - 1, -1):
            out[j] += out[j + 1]
    return out


def _sign_variations(c: list[float]) -> int:
    scale = max((abs(v) for v in c), default=0.0)
    if scale == 0.0:
        return 0
    signs = [v for v in c if abs(v) > _COEFF_EPS * scale]
    var = 0
    for a, b in zip(signs, signs[1:]):
        if a * b < 0.0:
            var += 1
    return var


def _descartes_in_unit(c: list[float]) -> int:
    """Descartes bound on roots of P in the open interval (0, 1)."""
    rev = list(reversed(c))  # x^d * P(1/x)
    return _sign_variations(_shift_by_one(rev))


def _rescale(c: list[float], a: float, b: float) -> list[float]:
    """Coefficients of Q(u) = P(a + (b - a) u) for u in [0, 1]."""
    h = b - a
    # shift by a, then scale by h
    n = len(c)
    shifted = list(c)
    for i in range(n - 1):
        for j in range(n - 2, i - 1, -1):
            shifted[j] += shifted[j + 1] * a
    return [v * h**i for i, v in enumerate(shifted)]


def min_positive_root(
    coeffs, *, side: str = "lower", rel_tol: float = 1e-12, max_depth: int = 200
) -> float:
    """Smallest x > 0 with P(x) = 0, or ``inf`` when none exists.

    ``side="lower"`` returns the left end of the final bracket (never above
    the root); ``side="upper"`` the right end.  Roots of even multiplicity
    (sign-preserving touches) are located to bracket width and reported the
    same way.
    """
    if side not in ("lower", "upper"):
        raise ValueError("side must be 'lower' or 'upper'")
    c = _trim(coeffs)
    while c and c[0] == 0.0:  # factor out roots at the origin
        c.pop(0)
    if len(c) <= 1:
        return math.inf
    # Cauchy bound on positive roots.
    lead = abs(c[-1])
    bound = 1.0 + max(abs(v) for v in c[:-1]) / lead

    def locate(a: float, b: float, depth: int) -> float | None:
        q = _rescale(c, a, b)
        v = _descartes_in_unit(q)
        pa, pb = poly_eval(c, a), poly_eval(c, b)
        if a > 0.0 and pa == 0.0:
            return a
        if v == 0:
            return b if pb == 0.0 else None
        tiny = (b - a) <= rel_tol * max(b, 1e-300)
        if v == 1 or tiny:
            if pa * pb < 0.0 or pa == 0.0 or pb == 0.0:
                lo, hi = _bisect(c, a, b, rel_tol)
                return lo if side == "lower" else hi
            if tiny:
                # even-multiplicity touch inside a vanishing interval
                return a if side == "lower" else b
        if depth <= 0:
            return a if side == "lower" else b
        m = 0.5 * (a + b)
        hit = locate(a, m, depth - 1)
        if hit is not None:
            return hit
        if poly_eval(c, m) == 0.0 and m > 0.0:
            return m
        return locate(m, b, depth - 1)

    root = locate(0.0, bound, max_depth)
    return math.inf if root is None or root <= 0.0 else root


def _bisect(c, a: float, b: float, rel_tol: float) -> tuple[float, float]:
    fa = poly_eval(c, a)
    if fa == 0.0:
        return a, a
    while (b - a) > rel_tol * max(b, 1e-300):
        m = 0.5 * (a + b)
        if m <= a or m >= b:
            break
        fm = poly_eval(c, m)
        if fm == 0.0:
            return m, m
        if fa * fm < 0.0:
            b = m
        else:
            a, fa = m, fm
    return a, b


def min_positive_root_ladder(
    betas, exponents, *, side: str = "lower", rel_tol: float = 1e-12
) -> float:
    """Smallest lam > 0 with sum_i betas[i] * lam**exponents[i] = 0.

    Fallback for generalized-polynomial ladders whose exponents are not an
    integer progression; scans a log grid for the first sign change and
    bisects.  Exponents must be nonnegative and strictly increasing.
    """
    betas = [float(b) for b in betas]
    exps = [float(e) for e in exponents]
    if len(betas) != len(exps) or any(e < 0 for e in exps):
        raise ValueError("need matching nonnegative exponents")

    def g(lam: float) -> float:
        return sum(b * lam**e for b, e in zip(betas, exps))

    prev_l, prev_v = None, None
    for k in np.linspace(-12.0, 9.0, 64 * 21 + 1):
        lam = 10.0**k
        v = g(lam)
        if v == 0.0:
            return lam
        if prev_v is not None and prev_v < 0.0 < v:
            a, b = prev_l, lam
            while (b - a) > rel_tol * max(b, 1e-300):
                m = 0.5 * (a + b)
                if g(m) >= 0.0:
                    b = m
                else:
                    a = m
            return a if side == "lower" else b
        prev_l, prev_v = lam, v
    return math.inf
