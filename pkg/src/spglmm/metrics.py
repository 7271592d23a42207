"""Goodness-of-fit metrics, classification entropy and the entropy-vs-threshold scan."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import ArrayLike, NDArray

logger = logging.getLogger(__name__)


def _pair(y: ArrayLike, yhat: ArrayLike) -> tuple[NDArray, NDArray]:
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: {y.size} observations vs {yhat.size} predictions")
    return y, yhat


def round_counts(mu: ArrayLike) -> NDArray:
    """Integer count predictions; halves round to even."""
    return np.round(np.asarray(mu, dtype=float))


def gof_counts(y: ArrayLike, yhat: ArrayLike) -> tuple[float, float, float]:
    """Return ``(mse, mse_log, chi2)`` for count predictions.

    ``mse_log`` compares ``log(y + 1)``; ``chi2`` divides each squared error by
    ``yhat + 1``.
    """
    y, yhat = _pair(y, yhat)
    if np.any(y < 0) or np.any(yhat < 0):
        raise ValueError("counts must be nonnegative")
    err2 = (y - yhat) ** 2
    mse = float(np.mean(err2))
    mse_log = float(np.mean((np.log1p(y) - np.log1p(yhat)) ** 2))
    chi2 = float(np.mean(err2 / (yhat + 1.0)))
    return mse, mse_log, chi2


def confusion_metrics(y: ArrayLike, yhat: ArrayLike) -> tuple[float | None, float | None, float]:
    """``(sensitivity, specificity, accuracy)``; a rate with an empty class is ``None``."""
    y, yhat = _pair(y, yhat)
    for name, v in (("y", y), ("yhat", yhat)):
        if not np.all((v == 0) | (v == 1)):
            raise ValueError(f"{name} must be binary")
    pos = y == 1
    neg = ~pos
    tp = int(np.sum(pos & (yhat == 1)))
    tn = int(np.sum(neg & (yhat == 0)))
    sens = tp / int(pos.sum()) if pos.any() else None
    spec = tn / int(neg.sum()) if neg.any() else None
    return sens, spec, (tp + tn) / y.size


def roc_auc(y: ArrayLike, mu: ArrayLike) -> tuple[float, float]:
    """Trapezoidal ROC area and the threshold maximising Youden's J.

    A score ``>= threshold`` is classified positive. Thresholds run over the
    distinct scores.
    """
    y, mu = _pair(y, mu)
    if np.any(mu < 0) or np.any(mu > 1):
        raise ValueError("scores must lie in [0, 1]")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined when y has a single class")
    thresholds = np.unique(mu)[::-1]
    order = np.argsort(-mu, kind="stable")
    ys, ms = y[order], mu[order]
    # index of the last element with score >= each threshold
    last = np.searchsorted(-ms, -thresholds, side="right")
    tp = np.cumsum(ys)[last - 1]
    fp = last - tp
    tpr = np.concatenate([[0.0], tp / n_pos])
    fpr = np.concatenate([[0.0], fp / n_neg])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    j = tpr[1:] - fpr[1:]
    best = float(thresholds[int(np.argmax(j))])
    return auc, best


def entropy(W: ArrayLike) -> tuple[NDArray, float]:
    """Row entropies ``-sum_m W_im ln W_im`` (with ``0 ln 0 = 0``) and their mean."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(W > 0, W * np.log(W), 0.0)
    E_i = -terms.sum(axis=1)
    return E_i, float(E_i.mean())


@dataclass
class ElbowPoint:
    t: float
    entropy: float
    m_hat: int | None
    converged: bool
    error: str | None = None


def elbow_scan(data, template, t_grid: ArrayLike) -> list[ElbowPoint]:
    """Fit the distance-threshold model at each ``t`` and record entropy and cluster count.

    ``template`` is a :class:`~spglmm.em.FitConfig` whose criterion is replaced
    by each ``t``. A descending grid is reordered with a warning. Failed fits
    are recorded with ``error`` set rather than raised.
    """
    from .em import fit

    grid = np.asarray(t_grid, dtype=float).ravel()
    if grid.size == 0:
        raise ValueError("t grid is empty")
    if np.any(np.diff(grid) < 0):
        warnings.warn("t grid was not ascending; sorted", stacklevel=2)
        grid = np.sort(grid)
    out = []
    for t in grid:
        cfg = replace(template, alpha=None, t=float(t), inference=False)
        try:
            res = fit(data, cfg)
        except (ArithmeticError, ValueError, RuntimeError) as exc:
            logger.warning("fit at t=%g failed: %s", t, exc)
            out.append(ElbowPoint(float(t), float("nan"), None, False, str(exc)))
            continue
        out.append(ElbowPoint(float(t), res.entropy, res.M, res.converged))
    return out
