"""Bernoulli and Poisson responses with canonical links, and grouped data."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit, gammaln, logsumexp

logger = logging.getLogger(__name__)

ETA_CLAMP = 700.0


class Family(str, enum.Enum):
    BERNOULLI = "bernoulli"
    POISSON = "poisson"

    @classmethod
    def parse(cls, value: "Family | str") -> "Family":
        if isinstance(value, Family):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown family {value!r}; expected 'bernoulli' or 'poisson'") from None


def _check_response(family: Family, y: NDArray) -> None:
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("response contains non-finite values")
    if family is Family.BERNOULLI:
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("Bernoulli responses must be 0 or 1")
    else:
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise ValueError("Poisson responses must be nonnegative integers")


def _clamp(eta: NDArray) -> NDArray:
    clipped = np.clip(eta, -ETA_CLAMP, ETA_CLAMP)
    if logger.isEnabledFor(logging.DEBUG):
        n = int(np.count_nonzero(clipped != eta))
        if n:
            logger.debug("clamped %d linear predictor values to +/-%g", n, ETA_CLAMP)
    return clipped


def _logpdf(family: Family, y: NDArray, eta: NDArray, log_y_factorial: NDArray | float = 0.0) -> NDArray:
    # unchecked vectorised kernel; y is assumed valid for the family
    if family is Family.BERNOULLI:
        return y * eta - np.logaddexp(0.0, eta)
    eta = _clamp(eta)
    return y * eta - np.exp(eta) - log_y_factorial


def linear_predictor(x: ArrayLike, z: ArrayLike, beta: ArrayLike, c: ArrayLike) -> float:
    x, z, beta, c = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (x, z, beta, c))
    if x.shape != beta.shape or z.shape != c.shape:
        raise ValueError(
            f"dimension mismatch: x{x.shape} vs beta{beta.shape}, z{z.shape} vs c{c.shape}"
        )
    return float(x @ beta + z @ c)


def log_density(family: Family | str, y: ArrayLike, eta: ArrayLike) -> NDArray | float:
    """Log probability mass of ``y`` at linear predictor ``eta``.

    Bernoulli uses ``y*eta - log(1 + exp(eta))`` evaluated through ``logaddexp``;
    Poisson uses ``y*eta - exp(eta) - log(y!)`` with ``log(y!)`` from the log-gamma
    function. Invalid responses raise ``ValueError``.
    """
    family = Family.parse(family)
    y_arr = np.asarray(y, dtype=float)
    _check_response(family, y_arr)
    eta_arr = np.asarray(eta, dtype=float)
    lyf = gammaln(y_arr + 1.0) if family is Family.POISSON else 0.0
    out = _logpdf(family, y_arr, eta_arr, lyf)
    return float(out) if np.ndim(out) == 0 else out


def inverse_link(family: Family | str, eta: ArrayLike) -> NDArray | float:
    family = Family.parse(family)
    eta = np.asarray(eta, dtype=float)
    out = expit(eta) if family is Family.BERNOULLI else np.exp(_clamp(eta))
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class HierarchicalDataset:
    """Observations nested in groups.

    Rows are stored contiguously by group, groups in order of first appearance
    in the input. ``group_labels[i]`` is the original label of group ``i``.
    """

    y: NDArray
    X: NDArray
    Z: NDArray
    group: NDArray
    group_labels: list = field(default_factory=list)
    fixed_names: list[str] = field(default_factory=list)
    random_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.X = np.asarray(self.X, dtype=float)
        self.Z = np.asarray(self.Z, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        if self.Z.ndim == 1:
            self.Z = self.Z[:, None]
        self.group = np.asarray(self.group, dtype=np.intp).ravel()
        J = self.y.shape[0]
        if J == 0:
            raise ValueError("empty dataset")
        if self.X.shape[0] != J or self.Z.shape[0] != J or self.group.shape[0] != J:
            raise ValueError("y, X, Z and group must have the same number of rows")
        if self.Z.shape[1] < 1:
            raise ValueError("at least one random covariate is required")
        if np.any(np.diff(self.group) < 0):
            raise ValueError("rows must be sorted by group; use HierarchicalDataset.from_arrays")
        codes = np.unique(self.group)
        if codes[0] != 0 or codes[-1] != codes.size - 1:
            raise ValueError("group codes must be 0..N-1 with every group non-empty")
        if not np.all(np.isfinite(self.X)) or not np.all(np.isfinite(self.Z)):
            raise ValueError("covariates must be finite")
        self.starts = np.flatnonzero(np.r_[True, np.diff(self.group) != 0])
        self.sizes = np.diff(np.r_[self.starts, J])
        if not self.group_labels:
            self.group_labels = list(range(self.N))
        if not self.fixed_names:
            self.fixed_names = [f"x{p + 1}" for p in range(self.P)]
        if not self.random_names:
            self.random_names = [f"z{q + 1}" for q in range(self.Q)]
        self.log_y_factorial = gammaln(self.y + 1.0)

    @classmethod
    def from_arrays(
        cls,
        y: ArrayLike,
        X: ArrayLike,
        Z: ArrayLike,
        groups: Sequence,
        fixed_names: list[str] | None = None,
        random_names: list[str] | None = None,
    ) -> "HierarchicalDataset":
        """Build a dataset from per-row group labels in arbitrary order."""
        groups = list(groups)
        first_seen: dict = {}
        for g in groups:
            first_seen.setdefault(g, len(first_seen))
        codes = np.array([first_seen[g] for g in groups], dtype=np.intp)
        order = np.argsort(codes, kind="stable")
        X = np.asarray(X, dtype=float)
        Z = np.asarray(Z, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if Z.ndim == 1:
            Z = Z[:, None]
        return cls(
            y=np.asarray(y, dtype=float)[order],
            X=X[order],
            Z=Z[order],
            group=codes[order],
            group_labels=list(first_seen),
            fixed_names=list(fixed_names or []),
            random_names=list(random_names or []),
        )

    @property
    def N(self) -> int:
        return int(self.starts.size)

    @property
    def J(self) -> int:
        return int(self.y.size)

    @property
    def P(self) -> int:
        return int(self.X.shape[1])

    @property
    def Q(self) -> int:
        return int(self.Z.shape[1])

    def rows(self, i: int) -> slice:
        return slice(int(self.starts[i]), int(self.starts[i] + self.sizes[i]))

    def validate(self, family: Family | str) -> None:
        _check_response(Family.parse(family), self.y)

    def subset_fixed(self, keep: Sequence[int]) -> "HierarchicalDataset":
        """Copy with only the listed fixed-covariate columns."""
        keep = list(keep)
        return HierarchicalDataset(
            y=self.y,
            X=self.X[:, keep],
            Z=self.Z,
            group=self.group,
            group_labels=self.group_labels,
            fixed_names=[self.fixed_names[k] for k in keep],
            random_names=self.random_names,
        )


def group_log_density(family: Family | str, data: HierarchicalDataset, i: int, beta: ArrayLike, c: ArrayLike) -> float:
    family = Family.parse(family)
    if not 0 <= i < data.N:
        raise IndexError(f"group {i} out of range for N={data.N}")
    sl = data.rows(i)
    eta = data.X[sl] @ np.asarray(beta, dtype=float) + data.Z[sl] @ np.asarray(c, dtype=float)
    return float(np.sum(_logpdf(family, data.y[sl], eta, data.log_y_factorial[sl])))


def group_loglik_matrix(family: Family, data: HierarchicalDataset, beta: NDArray, points: NDArray) -> NDArray:
    """N x M matrix of ``ln p(y_i | beta, c_m)``."""
    points = np.atleast_2d(points)
    eta = (data.X @ beta)[:, None] + data.Z @ points.T
    ld = _logpdf(family, data.y[:, None], eta, data.log_y_factorial[:, None])
    return np.add.reduceat(ld, data.starts, axis=0)


def marginal_loglik(family: Family | str, data: HierarchicalDataset, beta: ArrayLike, support) -> float:
    """Mixture-weighted complete log-likelihood ``sum_m w_m sum_ij ln p(y_ij | beta, c_m)``."""
    family = Family.parse(family)
    L = group_loglik_matrix(family, data, np.asarray(beta, dtype=float), support.points)
    return float(L.sum(axis=0) @ support.weights)


def mixture_loglik(family: Family | str, data: HierarchicalDataset, beta: ArrayLike, support) -> float:
    """Observed-data log-likelihood ``sum_i ln sum_m w_m p(y_i | beta, c_m)``."""
    family = Family.parse(family)
    L = group_loglik_matrix(family, data, np.asarray(beta, dtype=float), support.points)
    with np.errstate(divide="ignore"):
        logw = np.log(support.weights)
    return float(np.sum(logsumexp(L + logw, axis=1)))
