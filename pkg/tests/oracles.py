"""Independent reference implementations used only by the tests."""

from __future__ import annotations

import math

import numpy as np
from scipy import optimize, stats


def irls(X, y, family: str, offset=None, iters: int = 100, tol: float = 1e-12):
    """Canonical-link GLM by iteratively reweighted least squares."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    off = np.zeros(len(y)) if offset is None else np.asarray(offset, dtype=float)
    b = np.zeros(X.shape[1])
    for _ in range(iters):
        eta = X @ b + off
        if family == "poisson":
            mu = np.exp(eta)
            w = mu
        else:
            mu = 1.0 / (1.0 + np.exp(-eta))
            w = mu * (1.0 - mu)
        z = eta - off + (y - mu) / w
        new = np.linalg.solve(X.T @ (w[:, None] * X), X.T @ (w * z))
        if np.max(np.abs(new - b)) < tol:
            return new
        b = new
    return b


def naive_log_density(family: str, y: float, eta: float) -> float:
    if family == "poisson":
        return float(stats.poisson.logpmf(int(y), math.exp(eta)))
    p = 1.0 / (1.0 + math.exp(-eta))
    return math.log(p) if y == 1 else math.log1p(-p)


def naive_group_loglik(family, y, X, Z, groups, beta, c, g) -> float:
    total = 0.0
    for j in range(len(y)):
        if groups[j] == g:
            eta = sum(X[j][p] * beta[p] for p in range(len(beta))) + sum(Z[j][q] * c[q] for q in range(len(c)))
            total += naive_log_density(family, y[j], eta)
    return total


def ellipses_intersect(c1, V1, c2, V2, r2: float, n_angles: int = 10_000) -> bool:
    """Do ``{x: (x-c1)' V1^-1 (x-c1) <= r2}`` and the analogous set for ``c2`` meet?

    Samples the boundary of the first ellipse densely, refines the closest
    sample with a bounded scalar search, and falls back to a centre-membership
    check for containment.
    """
    c1, c2 = np.asarray(c1, float), np.asarray(c2, float)
    P2 = np.linalg.inv(V2)
    P1 = np.linalg.inv(V1)
    L1 = np.linalg.cholesky(V1)
    rad = math.sqrt(r2)

    def q2(theta):
        u = np.stack([np.cos(theta), np.sin(theta)])
        x = c1[:, None] + rad * (L1 @ u)
        d = x - c2[:, None]
        return np.einsum("in,ij,jn->n", d, P2, d)

    th = np.linspace(0.0, 2 * math.pi, n_angles, endpoint=False)
    vals = q2(th)
    k = int(np.argmin(vals))
    step = 2 * math.pi / n_angles
    res = optimize.minimize_scalar(
        lambda t: float(q2(np.array([t]))[0]), bounds=(th[k] - step, th[k] + step), method="bounded",
        options={"xatol": 1e-12},
    )
    qmin = min(float(vals[k]), float(res.fun))
    if qmin <= r2:
        return True
    d = c2 - c1
    return float(d @ P1 @ d) <= r2
