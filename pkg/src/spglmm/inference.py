"""Observed-information uncertainty for support points and fixed effects."""

from __future__ import annotations

import logging
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import stats

from ._objectives import fixed_objective, support_objective
from .family import Family, HierarchicalDataset, mixture_loglik

logger = logging.getLogger(__name__)


def numeric_hessian(f: Callable[[NDArray], float], x: ArrayLike, h: ArrayLike | float | None = None) -> NDArray:
    """Central finite-difference Hessian of ``f`` at ``x``.

    Step per coordinate defaults to ``max(1e-4, 1e-4 * |x_d|)``. The result is
    symmetrised.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    D = x.size
    if h is None:
        h = np.maximum(1e-4, 1e-4 * np.abs(x))
    h = np.broadcast_to(np.asarray(h, dtype=float), (D,))

    def ev(point, d):
        v = f(point)
        if not np.isfinite(v):
            raise ValueError(f"objective is not finite in the stencil of coordinate {d}")
        return v

    f0 = ev(x, 0)
    H = np.empty((D, D))
    for d in range(D):
        e = np.zeros(D)
        e[d] = h[d]
        H[d, d] = (ev(x + e, d) - 2.0 * f0 + ev(x - e, d)) / h[d] ** 2
        for k in range(d):
            u = np.zeros(D)
            u[k] = h[k]
            fpp = ev(x + e + u, d)
            fpm = ev(x + e - u, d)
            fmp = ev(x - e + u, d)
            fmm = ev(x - e - u, d)
            H[d, k] = H[k, d] = (fpp - fpm - fmp + fmm) / (4.0 * h[d] * h[k])
    return 0.5 * (H + H.T)


def invert_information(info: NDArray, source: str = "") -> tuple[NDArray, int]:
    """Covariance from an information matrix.

    Directions with no positive information get infinite variance; a fully
    uninformative block returns an all-``inf`` matrix with rank 0.
    """
    info = 0.5 * (info + info.T)
    ev, U = np.linalg.eigh(info)
    top = float(np.max(np.abs(ev))) if ev.size else 0.0
    if np.any(ev < -1e-8 * max(top, 1.0)):
        logger.debug("information for %s is not positive semidefinite: %s", source, ev)
    pos = ev > max(top * 1e-12, 0.0)
    rank = int(np.count_nonzero(pos))
    Q = info.shape[0]
    if rank < Q:
        return np.full((Q, Q), np.inf), rank
    cov = (U / ev) @ U.T
    return 0.5 * (cov + cov.T), rank


def support_point_variance(
    family: Family | str,
    data: HierarchicalDataset,
    W: NDArray,
    beta: ArrayLike,
    c_m: ArrayLike,
    m: int,
) -> tuple[NDArray, int]:
    """Inverse observed information of the cluster-``m`` weighted log-likelihood at ``c_m``."""
    family = Family.parse(family)
    f = support_objective(family, data, np.asarray(W), np.asarray(beta, dtype=float), m)
    H = numeric_hessian(f, c_m)
    return invert_information(-H, source=f"support point {m}")


def fixed_effect_se(family: Family | str, data: HierarchicalDataset, W: NDArray, points: NDArray, beta: ArrayLike) -> NDArray:
    family = Family.parse(family)
    beta = np.asarray(beta, dtype=float)
    if beta.size == 0:
        return np.empty(0)
    f = fixed_objective(family, data, np.asarray(W), np.atleast_2d(points))
    cov, _ = invert_information(-numeric_hessian(f, beta), source="fixed effects")
    return np.sqrt(np.diag(cov))


def lrt_pvalue(loglik_full: float, loglik_reduced: float, df: int = 1) -> tuple[float, float]:
    """Likelihood-ratio statistic (floored at 0) and its chi-square p-value."""
    stat = max(0.0, 2.0 * (loglik_full - loglik_reduced))
    return stat, float(stats.chi2.sf(stat, df))


def fixed_effect_inference(family, data: HierarchicalDataset, W: NDArray, support, beta: ArrayLike, config=None) -> list[dict]:
    """Standard errors and likelihood-ratio p-values for every fixed coefficient.

    Each p-value comes from refitting the EM at the current number of support
    points with that coefficient's column dropped. A reduced fit that does not
    converge reports ``p_value=None``.
    """
    from .em import FitConfig, refit_fixed_support

    family = Family.parse(family)
    config = config or FitConfig(family=family)
    beta = np.asarray(beta, dtype=float)
    se = fixed_effect_se(family, data, W, support.points, beta)
    ll_full = mixture_loglik(family, data, beta, support)
    out = []
    for p in range(data.P):
        keep = [k for k in range(data.P) if k != p]
        reduced = data.subset_fixed(keep)
        _, _, ll_red, converged = refit_fixed_support(reduced, support, beta[keep], config)
        if converged:
            stat, pval = lrt_pvalue(ll_full, ll_red)
        else:
            stat, pval = None, None
        out.append(
            {
                "name": data.fixed_names[p],
                "estimate": float(beta[p]),
                "stderr": float(se[p]),
                "lrt_statistic": stat,
                "p_value": pval,
            }
        )
    return out
