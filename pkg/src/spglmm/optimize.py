"""Deterministic derivative-free maximisation.

A plain Nelder-Mead simplex (reflect / expand / contract / shrink) is used for
every M-step and for the per-group GLM fits during initialisation. Bounds are
enforced by evaluating the objective at the clipped point and subtracting a
quadratic penalty, so the simplex itself stays unconstrained.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

PENALTY = 1e6
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class OptimProblem:
    objective: Callable[[NDArray], float]
    start: ArrayLike
    bounds: ArrayLike | None = None  # (D, 2) array of [lo, hi], or a single (lo, hi) pair
    tol: float = 1e-8
    maxeval: int | None = None

    def __post_init__(self):
        self.start = np.atleast_1d(np.asarray(self.start, dtype=float)).copy()
        D = self.start.size
        if self.bounds is not None:
            b = np.asarray(self.bounds, dtype=float)
            if b.shape == (2,):
                b = np.tile(b, (D, 1))
            if b.shape != (D, 2):
                raise ValueError(f"bounds must have shape ({D}, 2), got {b.shape}")
            if np.any(b[:, 0] >= b[:, 1]):
                raise ValueError("each bound needs lo < hi")
            if np.any(self.start < b[:, 0]) or np.any(self.start > b[:, 1]):
                raise ValueError("start lies outside the bounds")
            self.bounds = b
        if self.maxeval is None:
            self.maxeval = 2000 * max(D, 1)


@dataclass
class OptimResult:
    x: NDArray
    value: float
    evals: int
    converged: bool
    at_bound: bool = False


def _wrap(problem: OptimProblem) -> Callable[[NDArray], float]:
    f = problem.objective
    b = problem.bounds

    if b is None:
        def g(x):
            v = f(x)
            return -v if np.isfinite(v) else math.inf
        return g

    lo, hi = b[:, 0], b[:, 1]

    def g(x):
        xc = np.clip(x, lo, hi)
        viol = float(np.sum((x - xc) ** 2))
        v = f(xc)
        if not np.isfinite(v):
            return math.inf
        return -v + PENALTY * viol

    return g


def maximize(problem: OptimProblem) -> OptimResult:
    """Maximise ``problem.objective`` starting from ``problem.start``.

    The returned value is never below the objective at the start point; when
    the simplex fails to improve on it the start itself is returned. Stops when
    both the spread of simplex values and the simplex diameter fall below
    ``tol``, or when ``maxeval`` evaluations have been spent (``converged`` is
    then False).
    """
    x0 = problem.start
    D = x0.size
    f0 = problem.objective(x0)
    if not np.isfinite(f0):
        raise ValueError("objective is not finite at the start point")
    if D == 0:
        return OptimResult(x0.copy(), float(f0), 1, True)

    g = _wrap(problem)
    tol = problem.tol
    maxeval = problem.maxeval

    simplex = np.empty((D + 1, D))
    simplex[0] = x0
    for d in range(D):
        v = x0.copy()
        v[d] += 0.1 * max(1.0, abs(x0[d]))
        simplex[d + 1] = v
    fs = np.empty(D + 1)
    fs[0] = -f0
    for k in range(1, D + 1):
        fs[k] = g(simplex[k])
    evals = D + 1
    converged = False

    while evals < maxeval:
        order = np.argsort(fs, kind="stable")
        simplex = simplex[order]
        fs = fs[order]
        diam = float(np.max(np.abs(simplex[1:] - simplex[0])))
        if fs[-1] - fs[0] <= tol and diam <= tol:
            converged = True
            break

        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + (centroid - worst)
        fr = g(xr)
        evals += 1
        if fr < fs[0]:
            xe = centroid + 2.0 * (centroid - worst)
            fe = g(xe)
            evals += 1
            if fe < fr:
                simplex[-1], fs[-1] = xe, fe
            else:
                simplex[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-2]:
            simplex[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-1]:
            xc = centroid + 0.5 * (xr - centroid)
            fc = g(xc)
            evals += 1
            if fc <= fr:
                simplex[-1], fs[-1] = xc, fc
                continue
        else:
            xc = centroid + 0.5 * (worst - centroid)
            fc = g(xc)
            evals += 1
            if fc < fs[-1]:
                simplex[-1], fs[-1] = xc, fc
                continue
        # shrink towards the best vertex
        simplex[1:] = simplex[0] + 0.5 * (simplex[1:] - simplex[0])
        for k in range(1, D + 1):
            fs[k] = g(simplex[k])
        evals += D

    best = int(np.argmin(fs))
    x = simplex[best].copy()
    if problem.bounds is not None:
        x = np.clip(x, problem.bounds[:, 0], problem.bounds[:, 1])
    value = problem.objective(x)
    if not (np.isfinite(value) and value > f0):
        x, value = x0.copy(), f0
    at_bound = False
    if problem.bounds is not None:
        span = problem.bounds[:, 1] - problem.bounds[:, 0]
        gap = np.minimum(x - problem.bounds[:, 0], problem.bounds[:, 1] - x)
        at_bound = bool(np.any(gap <= 1e-6 * np.maximum(span, 1.0)))
    return OptimResult(x, float(value), evals, converged, at_bound)


def golden_section_minimize(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-10, maxiter: int = 500) -> tuple[float, float]:
    """Minimise a unimodal scalar function on ``[lo, hi]``; returns ``(x*, f(x*))``."""
    a, b = float(lo), float(hi)
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(maxiter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    candidates = [(fc, c), (fd, d), (f(a), a), (f(b), b)]
    fx, x = min(candidates)
    return x, fx
