"""EM fitting of a GLMM whose random effects follow a discrete distribution.

The outer loop starts from one support point per group (or ``Ntilde``) and
shrinks the support as it goes, either by merging points closer than a
threshold ``t`` or by merging the closest pair whose ``1 - alpha`` confidence
regions overlap. Each outer iteration runs an E-step, a weight update, a check
that prunes empty clusters, and an inner loop alternating the support-point
and fixed-effect M-steps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from ._objectives import fixed_objective, support_objective
from .collapse import alpha_collapse_once, t_collapse
from .family import Family, HierarchicalDataset, _logpdf, group_loglik_matrix, inverse_link, mixture_loglik
from .inference import fixed_effect_inference, support_point_variance
from .metrics import entropy
from .optimize import OptimProblem, maximize

logger = logging.getLogger(__name__)


class InitializationError(RuntimeError):
    pass


class NumericalError(ArithmeticError):
    pass


@dataclass
class DiscreteSupport:
    points: NDArray
    weights: NDArray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if self.points.shape[0] != self.weights.size:
            raise ValueError("one weight per support point is required")
        if self.points.shape[0] < 1:
            raise ValueError("support needs at least one point")

    @property
    def M(self) -> int:
        return int(self.weights.size)

    @property
    def Q(self) -> int:
        return int(self.points.shape[1])

    def copy(self) -> "DiscreteSupport":
        return DiscreteSupport(self.points.copy(), self.weights.copy())


@dataclass(frozen=True)
class FitConfig:
    """Settings for :func:`fit`.

    Exactly one of ``alpha`` (significance criterion) and ``t`` (distance
    threshold) may be set; with neither, ``alpha=0.05`` is used. ``bounds``
    box-constrains every support coordinate and fixed coefficient during the
    M-steps; ``None`` leaves them free.
    """

    family: Family = Family.POISSON
    alpha: float | None = None
    t: float | None = None
    K: int = 60
    K1: int = 20
    K2: int = 5
    itmax: int = 20
    tR: float = 1e-5
    tF: float = 1e-5
    Ntilde: int | None = None
    seed: int = 0
    bounds: tuple[float, float] | None = (-50.0, 50.0)
    inference: bool = True

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        if self.alpha is not None and self.t is not None:
            raise ValueError("set either alpha or t, not both")
        if self.alpha is None and self.t is None:
            object.__setattr__(self, "alpha", 0.05)
        if self.alpha is not None and not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.t is not None and not self.t > 0:
            raise ValueError("t must be positive")
        for name in ("K", "K1", "K2", "itmax"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not self.K2 < self.K1 <= self.K:
            raise ValueError("need K2 < K1 <= K")
        if not (self.tR > 0 and self.tF > 0):
            raise ValueError("tolerances tR and tF must be positive")
        if self.Ntilde is not None and self.Ntilde < 1:
            raise ValueError("Ntilde must be a positive integer")
        if self.bounds is not None and not self.bounds[0] < self.bounds[1]:
            raise ValueError("bounds must be (lo, hi) with lo < hi")

    @property
    def criterion(self) -> str:
        return "alpha" if self.alpha is not None else "t"

    def revert(self, drop: float) -> None:
        self.reverted += 1
        self.max_reverted_drop = max(self.max_reverted_drop, drop)

    def as_dict(self) -> dict:
        return {
            "family": self.family.value,
            "criterion": self.criterion,
            "alpha": self.alpha,
            "t": self.t,
            "K": self.K,
            "K1": self.K1,
            "K2": self.K2,
            "itmax": self.itmax,
            "tR": self.tR,
            "tF": self.tF,
            "Ntilde": self.Ntilde,
            "seed": self.seed,
            "bounds": list(self.bounds) if self.bounds is not None else None,
        }


@dataclass
class FitResult:
    family: Family
    config: FitConfig
    beta: NDArray
    support: DiscreteSupport
    W: NDArray
    assignments: NDArray
    entropy_per_group: NDArray
    entropy: float
    loglik: float
    loglik_trace: list[tuple[int, float, int]]
    conv1: bool
    conv2: bool
    iterations: int
    support_cov: list[NDArray] = field(default_factory=list)
    beta_table: list[dict] = field(default_factory=list)
    inner_traces: list[list[float]] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return self.support.M

    @property
    def converged(self) -> bool:
        return bool(self.conv1 and self.conv2)

    def cluster_order(self) -> NDArray:
        """Cluster indices sorted by ascending first coordinate of the support point."""
        return np.lexsort(self.support.points.T[::-1])

    def group_effects(self) -> NDArray:
        """Estimated random effect of each group: the support point it is assigned to."""
        return self.support.points[self.assignments]

    def predict_mean(self, data: HierarchicalDataset) -> NDArray:
        eta = data.X @ self.beta + np.einsum("jq,jq->j", data.Z, self.group_effects()[data.group])
        return inverse_link(self.family, eta)


class _Audit:
    """Running record of the conservation and monotonicity checks."""

    def __init__(self):
        self.max_weight_dev = 0.0
        self.max_row_dev = 0.0
        self.merges = 0
        self.merge_outside_parents = 0
        self.max_merge_mass_dev = 0.0
        self.max_loglik_drop = 0.0
        self.reverted = 0
        self.max_reverted_drop = 0.0

    def weights(self, w: NDArray) -> None:
        self.max_weight_dev = max(self.max_weight_dev, abs(float(np.sum(w)) - 1.0))

    def rows(self, W: NDArray) -> None:
        self.max_row_dev = max(self.max_row_dev, float(np.max(np.abs(W.sum(axis=1) - 1.0))))

    def merge(self, parents, merged_point, new_weights) -> None:
        c_l, c_m, _ = parents
        self.merges += 1
        lo = np.minimum(c_l, c_m)
        hi = np.maximum(c_l, c_m)
        if np.any(merged_point < lo) or np.any(merged_point > hi):
            self.merge_outside_parents += 1
        self.weights(new_weights)

    def monotone(self, lls: list[float]) -> None:
        if len(lls) > 1:
            drops = -np.diff(np.asarray(lls))
            self.max_loglik_drop = max(self.max_loglik_drop, float(drops.max()))

    def revert(self, drop: float) -> None:
        self.reverted += 1
        self.max_reverted_drop = max(self.max_reverted_drop, drop)

    def as_dict(self) -> dict:
        return {
            "max_weight_sum_deviation": self.max_weight_dev,
            "max_W_row_deviation": self.max_row_dev,
            "merges": self.merges,
            "merges_outside_parents": self.merge_outside_parents,
            "max_inner_loglik_drop": self.max_loglik_drop,
            "inner_sweeps_reverted": self.reverted,
            "max_reverted_drop": self.max_reverted_drop,
        }


def _bounds_array(config: FitConfig, D: int):
    if config.bounds is None:
        return None
    return np.tile(np.asarray(config.bounds, dtype=float), (D, 1))


def _clip(x: NDArray, config: FitConfig) -> NDArray:
    if config.bounds is None:
        return x
    return np.clip(x, config.bounds[0], config.bounds[1])


def _degenerate(family: Family, y: NDArray) -> bool:
    if family is Family.BERNOULLI:
        return bool(np.all(y == y[0]))
    return bool(np.all(y == 0))


def _coupled_columns(data: HierarchicalDataset) -> list[int]:
    """For each fixed column, the index of an identical random column, or -1."""
    out = []
    for p in range(data.P):
        match = -1
        for q in range(data.Q):
            if np.array_equal(data.X[:, p], data.Z[:, q]):
                match = q
                break
        out.append(match)
    return out


def _group_glm(family: Family, data: HierarchicalDataset, i: int, free: list[int], config: FitConfig) -> tuple[NDArray, NDArray]:
    sl = data.rows(i)
    y = data.y[sl]
    lyf = data.log_y_factorial[sl]
    design = np.hstack([data.Z[sl], data.X[sl][:, free]])

    def f(theta):
        return float(np.sum(_logpdf(family, y, design @ theta, lyf)))

    D = design.shape[1]
    res = maximize(OptimProblem(f, np.zeros(D), bounds=_bounds_array(config, D)))
    theta = res.x
    if _degenerate(family, y) or not res.converged:
        theta = np.clip(theta, -10.0, 10.0)
    c = theta[: data.Q]
    beta = np.zeros(data.P)
    beta[free] = theta[data.Q:]
    return c, beta


def init_parameters(data: HierarchicalDataset, config: FitConfig, rng: np.random.Generator) -> tuple[DiscreteSupport, NDArray]:
    """Starting support and fixed effects from one GLM per group.

    Random-coefficient estimates of the N group fits give, per coordinate, the
    whisker interval ``[q25 - 1.5 IQR, q75 + 1.5 IQR]``; ``min(N, Ntilde)``
    points are drawn uniformly in it with equal weights. Fixed effects start
    at the median of the group estimates.
    """
    family = config.family
    coupled = _coupled_columns(data)
    free = [p for p in range(data.P) if coupled[p] < 0]
    cs, betas = [], []
    for i in range(data.N):
        try:
            c, b = _group_glm(family, data, i, free, config)
        except (ValueError, FloatingPointError) as exc:
            logger.warning("group %s GLM failed: %s", data.group_labels[i], exc)
            continue
        cs.append(c)
        betas.append(b)
    if not cs:
        raise InitializationError("every per-group GLM failed")
    cs = np.asarray(cs)
    betas = np.asarray(betas).reshape(len(cs), data.P)

    M = data.N if config.Ntilde is None else min(data.N, int(config.Ntilde))
    q25, q75 = np.quantile(cs, [0.25, 0.75], axis=0)
    iqr = q75 - q25
    lo = q25 - 1.5 * iqr
    hi = q75 + 1.5 * iqr
    flat = iqr <= 0
    if np.any(flat):
        half = np.maximum(0.5, 0.1 * np.abs(q25[flat]))
        lo[flat] = q25[flat] - half
        hi[flat] = q25[flat] + half
    points = _clip(lo + (hi - lo) * rng.random((M, data.Q)), config)
    weights = np.full(M, 1.0 / M)
    beta0 = _clip(np.median(betas, axis=0), config) if data.P else np.zeros(0)
    return DiscreteSupport(points, weights), beta0


def e_step(family: Family | str, data: HierarchicalDataset, beta: NDArray, support: DiscreteSupport) -> NDArray:
    """Posterior cluster-membership probabilities, computed in log space."""
    family = Family.parse(family)
    L = group_loglik_matrix(family, data, np.asarray(beta, dtype=float), support.points)
    with np.errstate(divide="ignore"):
        A = L + np.log(support.weights)
    top = A.max(axis=1, keepdims=True)
    bad = ~np.isfinite(top[:, 0])
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise NumericalError(f"every cluster has zero likelihood for group {data.group_labels[i]!r}")
    E = np.exp(A - top)
    return E / E.sum(axis=1, keepdims=True)


def update_weights(W: NDArray) -> NDArray:
    W = np.asarray(W, dtype=float)
    return W.sum(axis=0) / W.shape[0]


def assign_groups(W: NDArray) -> NDArray:
    """Most probable cluster per group (0-based); ties go to the lowest index."""
    return np.argmax(np.asarray(W), axis=1)


def m_step_support(family: Family | str, data: HierarchicalDataset, W: NDArray, beta: NDArray, support: DiscreteSupport, config: FitConfig | None = None) -> tuple[NDArray, list[str]]:
    """Maximise each cluster's weighted log-likelihood over its support point."""
    family = Family.parse(family)
    config = config or FitConfig(family=family)
    beta = np.asarray(beta, dtype=float)
    points = support.points.copy()
    flags = []
    bounds = _bounds_array(config, support.Q)
    for m in range(support.M):
        if not np.any(W[:, m] > 0):
            continue
        f = support_objective(family, data, W, beta, m)
        start = _clip(points[m], config)
        try:
            res = maximize(OptimProblem(f, start, bounds=bounds))
        except ValueError as exc:
            flags.append(f"support point {m}: {exc}")
            continue
        if not res.converged:
            flags.append(f"support point {m}: optimizer budget exhausted")
        if res.at_bound:
            flags.append(f"support point {m}: at bound")
        points[m] = res.x
    return points, flags


def m_step_fixed(family: Family | str, data: HierarchicalDataset, W: NDArray, support: DiscreteSupport, beta: NDArray, config: FitConfig | None = None) -> tuple[NDArray, list[str]]:
    """Maximise the cluster-weighted log-likelihood over the fixed effects."""
    family = Family.parse(family)
    config = config or FitConfig(family=family)
    beta = np.asarray(beta, dtype=float)
    if beta.size == 0:
        return beta.copy(), []
    f = fixed_objective(family, data, W, support.points)
    try:
        res = maximize(OptimProblem(f, _clip(beta, config), bounds=_bounds_array(config, beta.size)))
    except ValueError as exc:
        return beta.copy(), [f"fixed effects: {exc}"]
    flags = [] if res.converged else ["fixed effects: optimizer budget exhausted"]
    if res.at_bound:
        flags.append("fixed effects: at bound")
    return res.x, flags


def inner_em(
    family: Family | str,
    data: HierarchicalDataset,
    W: NDArray,
    support: DiscreteSupport,
    beta: NDArray,
    itmax: int,
    tR: float,
    tF: float,
    config: FitConfig | None = None,
    trace: list | None = None,
    on_revert: Callable[[float], None] | None = None,
) -> tuple[DiscreteSupport, NDArray, int]:
    """Alternate the two M-steps with ``W`` held fixed.

    Stops once no support coordinate moves more than ``tR`` and no fixed
    coefficient more than ``tF``, or after ``itmax`` sweeps. With ``W`` frozen
    a sweep can lower the mixture log-likelihood; such a sweep is undone and
    the loop ends there and ``on_revert`` receives the size of the drop. When
    ``trace`` is a list, the mixture log-likelihood after each accepted sweep
    is appended to it.
    """
    family = Family.parse(family)
    config = config or FitConfig(family=family)
    support = support.copy()
    beta = np.asarray(beta, dtype=float).copy()
    ll = mixture_loglik(family, data, beta, support)
    it = 0
    while it < itmax:
        it += 1
        points, _ = m_step_support(family, data, W, beta, support, config)
        new_beta, _ = m_step_fixed(family, data, W, DiscreteSupport(points, support.weights), beta, config)
        candidate = DiscreteSupport(points, support.weights)
        new_ll = mixture_loglik(family, data, new_beta, candidate)
        if new_ll < ll:
            logger.debug("inner sweep %d lowered the log-likelihood by %g; reverted", it, ll - new_ll)
            if on_revert is not None:
                on_revert(ll - new_ll)
            break
        dc = float(np.max(np.abs(points - support.points)))
        db = float(np.max(np.abs(new_beta - beta))) if beta.size else 0.0
        support, beta, ll = candidate, new_beta, new_ll
        if trace is not None:
            trace.append(ll)
        if dc <= tR and db <= tF:
            break
    return support, beta, it


def check_weights(W: NDArray, support: DiscreteSupport, stage: str = "during") -> tuple[DiscreteSupport, NDArray, bool]:
    """Drop empty clusters and renormalise the weights.

    ``stage="during"`` removes clusters whose column of ``W`` is all zero.
    ``stage="at_convergence"`` also removes clusters to which no group is
    assigned. Returns ``(support, W, deleted_any)``; a single remaining point
    is never removed.
    """
    if stage not in ("during", "at_convergence"):
        raise ValueError(f"unknown stage {stage!r}")
    W = np.asarray(W, dtype=float)
    points, weights = support.points, support.weights
    deleted = False
    if support.M > 1:
        keep = np.any(W > 0, axis=0)
        if not keep.all():
            W, points, weights = W[:, keep], points[keep], weights[keep]
            deleted = True
        weights = weights / weights.sum()
    if stage == "at_convergence" and points.shape[0] > 1:
        used = np.zeros(points.shape[0], dtype=bool)
        used[assign_groups(W)] = True
        if not used.all():
            W, points, weights = W[:, used], points[used], weights[used]
            W = W / W.sum(axis=1, keepdims=True)
            weights = weights / weights.sum()
            deleted = True
    return DiscreteSupport(points, weights), W, deleted


def _small_step(points, beta, prev_points, prev_beta, config: FitConfig) -> bool:
    if points.shape != prev_points.shape:
        return False
    dc = float(np.max(np.abs(points - prev_points)))
    db = float(np.max(np.abs(beta - prev_beta))) if beta.size else 0.0
    return dc <= config.tR and db <= config.tF


def support_covariances(family: Family, data: HierarchicalDataset, W: NDArray, beta: NDArray, support: DiscreteSupport) -> list[NDArray]:
    return [support_point_variance(family, data, W, beta, support.points[m], m)[0] for m in range(support.M)]


def fit(data: HierarchicalDataset, config: FitConfig | None = None) -> FitResult:
    """Fit the model and discover the number of clusters."""
    config = config or FitConfig()
    family = config.family
    data.validate(family)
    rng = np.random.default_rng(config.seed)
    audit = _Audit()

    support, beta = init_parameters(data, config, rng)
    audit.weights(support.weights)
    prev_points, prev_beta = support.points.copy(), beta.copy()
    conv1 = conv2 = False
    trace: list[tuple[int, float, int]] = []
    inner_traces: list[list[float]] = []
    k = 1
    W = None
    while not (conv1 and conv2) and k < config.K:
        if config.t is not None and support.M > 1:
            points, weights = t_collapse(support.points, support.weights, config.t, on_merge=audit.merge)
            support = DiscreteSupport(points, weights)

        W = e_step(family, data, beta, support)
        audit.rows(W)
        support = DiscreteSupport(support.points, update_weights(W))
        audit.weights(support.weights)

        stage = "at_convergence" if (conv1 or k >= config.K1) else "during"
        support, W, deleted = check_weights(W, support, stage)
        audit.weights(support.weights)
        audit.rows(W)
        if stage == "at_convergence":
            conv2 = not deleted
            if deleted:
                conv1 = False

        W = e_step(family, data, beta, support)
        audit.rows(W)
        lls = [mixture_loglik(family, data, beta, support)]
        support, beta, _ = inner_em(
            family, data, W, support, beta, config.itmax, config.tR, config.tF, config, trace=lls, on_revert=audit.revert
        )
        inner_traces.append(lls)
        audit.monotone(lls)
        trace.append((k, lls[-1], support.M))

        small = _small_step(support.points, beta, prev_points, prev_beta, config)
        if config.alpha is not None:
            checked = False
            if k > config.K2:
                covs = support_covariances(family, data, W, beta, support)
                points, weights, merged, _ = alpha_collapse_once(
                    support.points, support.weights, covs, config.alpha, on_merge=audit.merge
                )
                support = DiscreteSupport(points, weights)
                checked = not merged
            conv1 = small and checked
        else:
            conv1 = small
        prev_points, prev_beta = support.points.copy(), beta.copy()
        k += 1

    W = e_step(family, data, beta, support)
    audit.rows(W)
    assignments = assign_groups(W)
    E_i, E = entropy(W)
    result = FitResult(
        family=family,
        config=config,
        beta=beta,
        support=support,
        W=W,
        assignments=assignments,
        entropy_per_group=E_i,
        entropy=E,
        loglik=mixture_loglik(family, data, beta, support),
        loglik_trace=trace,
        conv1=bool(conv1),
        conv2=bool(conv2),
        iterations=k - 1,
        inner_traces=inner_traces,
        diagnostics=audit.as_dict(),
    )
    if config.inference:
        result.support_cov = support_covariances(family, data, W, beta, support)
        result.beta_table = fixed_effect_inference(family, data, W, support, beta, config)
    return result


def refit_fixed_support(data: HierarchicalDataset, support: DiscreteSupport, beta: NDArray, config: FitConfig) -> tuple[DiscreteSupport, NDArray, float, bool]:
    """EM at a fixed number of support points, without pruning or merging.

    Used for the reduced models behind likelihood-ratio p-values. Returns
    ``(support, beta, mixture_loglik, converged)``.
    """
    family = config.family
    support = support.copy()
    beta = np.asarray(beta, dtype=float).copy()
    converged = False
    for _ in range(config.K):
        W = e_step(family, data, beta, support)
        new_w = update_weights(W)
        support = DiscreteSupport(support.points, new_w)
        W = e_step(family, data, beta, support)
        old_points, old_beta = support.points.copy(), beta.copy()
        support, beta, _ = inner_em(family, data, W, support, beta, config.itmax, config.tR, config.tF, config)
        if _small_step(support.points, beta, old_points, old_beta, config):
            converged = True
            break
    return support, beta, mixture_loglik(family, data, beta, support), converged
