"""Support reduction: confidence regions around support points and merge rules.

Two collapse criteria are provided. The distance criterion merges any pair of
support points closer than a threshold ``t``. The significance criterion
builds a level ``1 - alpha`` confidence interval (Q = 1) or ellipsoid (Q > 1)
around each point and merges the closest pair whose regions overlap.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import stats

from .optimize import golden_section_minimize

logger = logging.getLogger(__name__)

BOUNDARY_TOL = 1e-9
_S_EPS = 1e-9


@dataclass
class ConfidenceRegion:
    """Ellipsoid ``{x : (x - c)' V^+ (x - c) <= chi2_level(df)}``.

    A covariance with an infinite entry stands for a point with no usable
    information, whose region is the whole space.
    """

    center: NDArray
    covariance: NDArray
    level: float

    def __post_init__(self):
        self.center = np.atleast_1d(np.asarray(self.center, dtype=float))
        self.covariance = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        Q = self.center.size
        if self.covariance.shape != (Q, Q):
            raise ValueError(f"covariance must be {Q}x{Q}")
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must lie in (0, 1)")
        if self.unbounded:
            return
        if not np.allclose(self.covariance, self.covariance.T, atol=1e-10, rtol=0):
            raise ValueError("covariance is not symmetric")
        self.covariance = 0.5 * (self.covariance + self.covariance.T)

    @property
    def unbounded(self) -> bool:
        return not np.all(np.isfinite(self.covariance))

    @property
    def eigenvalues(self) -> NDArray:
        return np.linalg.eigvalsh(self.covariance)

    @property
    def rank(self) -> int:
        ev = self.eigenvalues
        top = max(float(ev.max()), 0.0)
        return int(np.count_nonzero(ev > max(top * 1e-12, 0.0)))

    @property
    def radius2(self) -> float:
        return float(stats.chi2.ppf(self.level, max(self.rank, 1)))


@dataclass
class DistanceMatrix:
    D: NDArray
    available: NDArray = field(default=None)

    def __post_init__(self):
        M = self.D.shape[0]
        if self.available is None:
            self.available = np.triu(np.ones((M, M), dtype=bool), k=1)

    def ordered_pairs(self) -> list[tuple[int, int]]:
        """Available pairs ``(l, m)``, ``l < m``, by increasing distance."""
        ls, ms = np.nonzero(self.available)
        d = self.D[ls, ms]
        order = np.lexsort((ms, ls, d))
        return [(int(ls[k]), int(ms[k])) for k in order]

    def mark(self, l: int, m: int) -> None:
        self.available[min(l, m), max(l, m)] = False

    @property
    def exhausted(self) -> bool:
        return not self.available.any()


def distance_matrix(points: ArrayLike) -> DistanceMatrix:
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.shape[0] < 1:
        raise ValueError("need at least one point")
    diff = P[:, None, :] - P[None, :, :]
    D = np.sqrt(np.sum(diff * diff, axis=-1))
    np.fill_diagonal(D, 0.0)
    return DistanceMatrix(D)


def confidence_interval(center: float, variance: float, alpha: float) -> tuple[float, float]:
    """Wald interval ``center -/+ z_{1-alpha/2} sqrt(variance)``."""
    if variance <= 0:
        logger.warning("non-positive variance %g; using a zero-width interval", variance)
        return float(center), float(center)
    if not math.isfinite(variance):
        return -math.inf, math.inf
    half = stats.norm.ppf(1.0 - alpha / 2.0) * math.sqrt(variance)
    return float(center - half), float(center + half)


def intervals_overlap(a: tuple[float, float], b: tuple[float, float]) -> bool:
    # strict: touching endpoints and zero-width intervals never overlap
    return max(a[0], b[0]) < min(a[1], b[1])


def containment_sufficient(cr_small: ConfidenceRegion, cr_large: ConfidenceRegion) -> bool:
    """Cheap sufficient test that ``cr_small`` lies inside ``cr_large``."""
    lam_min_large = max(float(cr_large.eigenvalues.min()), 0.0)
    lam_max_small = max(float(cr_small.eigenvalues.max()), 0.0)
    gap = math.sqrt(cr_large.radius2 * lam_min_large) - math.sqrt(cr_small.radius2 * lam_max_small)
    return float(np.linalg.norm(cr_large.center - cr_small.center)) < gap


def _regularize(cov: NDArray) -> tuple[NDArray, int]:
    Q = cov.shape[0]
    ev = np.linalg.eigvalsh(cov)
    top = max(float(ev.max()), 0.0)
    rank = int(np.count_nonzero(ev > top * 1e-10))
    if rank < Q:
        jitter = 1e-10 * max(float(np.trace(cov)), np.finfo(float).tiny) / Q
        logger.info("near-singular covariance (rank %d of %d) regularised", rank, Q)
        return cov + jitter * np.eye(Q), max(rank, 1)
    return cov, Q


def intersection_function(cr_l: ConfidenceRegion, cr_m: ConfidenceRegion):
    """Return ``(K, lambdas, v, chi2)`` for the generalised-eigenvalue form of K(s)."""
    cov_l, rank_l = _regularize(cr_l.covariance)
    cov_m, rank_m = _regularize(cr_m.covariance)
    df = min(rank_l, rank_m)
    chi2 = float(stats.chi2.ppf(cr_l.level, df))
    # reduce cov_l to the identity, then diagonalise the transformed cov_m
    L = np.linalg.cholesky(cov_l)
    Linv = np.linalg.inv(L)
    A = Linv @ cov_m @ Linv.T
    lam, U = np.linalg.eigh(0.5 * (A + A.T))
    Phi = Linv.T @ U
    v = Phi.T @ (cr_m.center - cr_l.center)
    v2 = v * v

    def K(s: float) -> float:
        return 1.0 - float(np.sum(v2 * s * (1.0 - s) / (1.0 + s * (lam - 1.0)))) / chi2

    return K, lam, v, chi2


def ellipsoid_min_k(cr_l: ConfidenceRegion, cr_m: ConfidenceRegion) -> tuple[float, float]:
    """Minimiser ``s*`` and minimum ``K(s*)`` over ``s`` in (0, 1)."""
    K, _, _, _ = intersection_function(cr_l, cr_m)
    return golden_section_minimize(K, _S_EPS, 1.0 - _S_EPS, tol=1e-10)


def ellipsoid_intersection_test(cr_l: ConfidenceRegion, cr_m: ConfidenceRegion) -> bool:
    """True when the two ellipsoidal regions intersect (touching counts)."""
    if cr_l.unbounded or cr_m.unbounded:
        return True
    if np.array_equal(cr_l.center, cr_m.center):
        return True
    _, kmin = ellipsoid_min_k(cr_l, cr_m)
    return kmin >= -BOUNDARY_TOL


def regions_overlap(cr_l: ConfidenceRegion, cr_m: ConfidenceRegion) -> bool:
    if cr_l.center.size != cr_m.center.size:
        raise ValueError("regions live in different dimensions")
    if cr_l.unbounded or cr_m.unbounded:
        return True
    alpha = 1.0 - cr_l.level
    if cr_l.center.size == 1:
        a = confidence_interval(cr_l.center[0], cr_l.covariance[0, 0], alpha)
        b = confidence_interval(cr_m.center[0], cr_m.covariance[0, 0], alpha)
        return intervals_overlap(a, b)
    if containment_sufficient(cr_l, cr_m) or containment_sufficient(cr_m, cr_l):
        return True
    return ellipsoid_intersection_test(cr_l, cr_m)


def merge_masses(c_l: ArrayLike, c_m: ArrayLike, w_l: float, w_m: float) -> tuple[NDArray, float]:
    """Weighted mean of two support points and the sum of their weights."""
    total = w_l + w_m
    if not total > 0:
        raise ValueError("cannot merge two points with zero total weight")
    c_l = np.asarray(c_l, dtype=float)
    c_m = np.asarray(c_m, dtype=float)
    c = (w_l * c_l + w_m * c_m) / total
    # keep the merged point inside the parents' bounding box despite rounding
    c = np.clip(c, np.minimum(c_l, c_m), np.maximum(c_l, c_m))
    return c, float(total)


def _merge_pair(points: NDArray, weights: NDArray, l: int, m: int) -> tuple[NDArray, NDArray]:
    l, m = min(l, m), max(l, m)
    c, w = merge_masses(points[l], points[m], weights[l], weights[m])
    points = points.copy()
    weights = weights.copy()
    points[l] = c
    weights[l] = w
    return np.delete(points, m, axis=0), np.delete(weights, m)


def t_collapse(points: ArrayLike, weights: ArrayLike, t: float, on_merge=None) -> tuple[NDArray, NDArray]:
    """Merge the closest pair while any two points are closer than ``t``."""
    if not t > 0:
        raise ValueError("threshold t must be positive")
    points = np.atleast_2d(np.asarray(points, dtype=float)).copy()
    weights = np.asarray(weights, dtype=float).copy()
    while points.shape[0] > 1:
        D = distance_matrix(points).D
        iu = np.triu_indices(points.shape[0], k=1)
        d = D[iu]
        k = int(np.argmin(d))
        if not d[k] < t:
            break
        l, m = int(iu[0][k]), int(iu[1][k])
        parents = (points[l].copy(), points[m].copy(), weights[l] + weights[m])
        points, weights = _merge_pair(points, weights, l, m)
        if on_merge is not None:
            on_merge(parents, points[l], weights)
    return points, weights


def alpha_collapse_once(
    points: ArrayLike,
    weights: ArrayLike,
    covariances: list[NDArray],
    alpha: float,
    dmat: DistanceMatrix | None = None,
    on_merge=None,
) -> tuple[NDArray, NDArray, bool, DistanceMatrix]:
    """Scan pairs by increasing distance and merge the first overlapping one.

    Pairs whose regions do not overlap are marked unavailable in ``dmat``.
    Returns ``(points, weights, merged, dmat)``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    weights = np.asarray(weights, dtype=float)
    if dmat is None:
        dmat = distance_matrix(points)
    level = 1.0 - alpha
    for l, m in dmat.ordered_pairs():
        cr_l = ConfidenceRegion(points[l], covariances[l], level)
        cr_m = ConfidenceRegion(points[m], covariances[m], level)
        if regions_overlap(cr_l, cr_m):
            parents = (points[l].copy(), points[m].copy(), weights[l] + weights[m])
            new_points, new_weights = _merge_pair(points, weights, l, m)
            if on_merge is not None:
                on_merge(parents, new_points[l], new_weights)
            return new_points, new_weights, True, dmat
        dmat.mark(l, m)
    return points.copy(), weights.copy(), False, dmat
