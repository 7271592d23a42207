"""Weighted log-likelihood objectives shared by the M-steps and the inference code."""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

from .family import Family, HierarchicalDataset, _logpdf

# groups whose posterior weight is below this contribute < 1e-12 of their
# log-likelihood and are left out of the M-step sums
W_FLOOR = 1e-12


def _active(w: NDArray) -> NDArray:
    keep = w > W_FLOOR
    return keep if keep.any() else w > 0


def support_objective(family: Family, data: HierarchicalDataset, W: NDArray, beta: NDArray, m: int):
    """``c -> sum_i W_im ln p(y_i | beta, c)`` over groups with non-negligible weight."""
    w = W[data.group, m]
    keep = _active(w)
    w = w[keep]
    y = data.y[keep]
    lyf = data.log_y_factorial[keep]
    offset = data.X[keep] @ beta
    Z = data.Z[keep]

    def f(c: NDArray) -> float:
        return float(w @ _logpdf(family, y, offset + Z @ c, lyf))

    return f


def fixed_objective(family: Family, data: HierarchicalDataset, W: NDArray, points: NDArray):
    """``beta -> sum_m sum_i W_im ln p(y_i | beta, c_m)`` over (row, cluster) pairs with non-negligible weight."""
    Wobs = W[data.group]
    rows, ms = np.nonzero(_active(Wobs))
    w = Wobs[rows, ms]
    y = data.y[rows]
    lyf = data.log_y_factorial[rows]
    offset = np.einsum("jq,jq->j", data.Z[rows], points[ms])
    X = data.X[rows]

    def f(beta: NDArray) -> float:
        return float(w @ _logpdf(family, y, X @ beta + offset, lyf))

    return f
