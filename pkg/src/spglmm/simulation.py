"""Planted three-cluster data-generating processes and a seeded Monte-Carlo driver."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit

from .em import FitConfig, fit
from .family import Family, HierarchicalDataset
from .metrics import confusion_metrics, gof_counts, round_counts

logger = logging.getLogger(__name__)

N_GROUPS = 10
CLUSTER_OF_GROUP = np.array([0, 0, 1, 1, 1, 1, 1, 2, 2, 2])

VARIANTS = {
    "poisson-intercept": Family.POISSON,
    "bernoulli-intercept": Family.BERNOULLI,
    "bernoulli-slope": Family.BERNOULLI,
    "bernoulli-intercept-slope": Family.BERNOULLI,
}

_INTERCEPTS = {"poisson-intercept": (2.5, 1.0, -1.0), "bernoulli": (5.0, 2.0, -10.0)}
_SLOPES = (10.0, 5.0, 0.0)
_POISSON_BETA = (0.3, 0.9)
_BERNOULLI_BETA = (-6.0, 3.0)


@dataclass(frozen=True)
class DgpSpec:
    """One of the planted designs: 10 groups in clusters of 2, 5 and 3 groups."""

    variant: str = "poisson-intercept"
    n_fixed_slopes: int = 1
    size_range: tuple[int, int] = (70, 100)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {sorted(VARIANTS)}")
        if self.n_fixed_slopes not in (1, 2):
            raise ValueError("n_fixed_slopes must be 1 or 2")
        lo, hi = self.size_range
        if not 1 <= lo <= hi:
            raise ValueError("size_range must satisfy 1 <= lo <= hi")

    @property
    def family(self) -> Family:
        return VARIANTS[self.variant]

    @property
    def true_beta(self) -> NDArray:
        if self.variant == "bernoulli-slope":
            return np.array((10.0,) + _BERNOULLI_BETA[: self.n_fixed_slopes])
        base = _POISSON_BETA if self.family is Family.POISSON else _BERNOULLI_BETA
        return np.array(base[: self.n_fixed_slopes])

    @property
    def true_support(self) -> NDArray:
        """Cluster coefficients, one row per cluster in group order."""
        if self.variant == "poisson-intercept":
            return np.array(_INTERCEPTS["poisson-intercept"])[:, None]
        if self.variant == "bernoulli-intercept":
            return np.array(_INTERCEPTS["bernoulli"])[:, None]
        if self.variant == "bernoulli-slope":
            return np.array(_SLOPES)[:, None]
        return np.column_stack([_INTERCEPTS["bernoulli"], _SLOPES])

    @property
    def true_weights(self) -> NDArray:
        return np.bincount(CLUSTER_OF_GROUP) / N_GROUPS


def _design(spec: DgpSpec, rng: np.random.Generator):
    lo, hi = spec.size_range
    sizes = rng.integers(lo, hi + 1, size=N_GROUPS)
    groups = np.repeat(np.arange(N_GROUPS), sizes)
    x = rng.standard_normal((groups.size, spec.n_fixed_slopes))
    names = [f"x{k + 1}" for k in range(spec.n_fixed_slopes)]
    return groups, x, names


def _dataset(spec, y, X, Z, groups, fixed_names, random_names) -> HierarchicalDataset:
    labels = np.array([f"g{g + 1:02d}" for g in groups])
    return HierarchicalDataset.from_arrays(y, X, Z, labels, fixed_names, random_names)


def simulate_poisson(spec: DgpSpec, rng: np.random.Generator) -> HierarchicalDataset:
    if spec.variant != "poisson-intercept":
        raise ValueError("simulate_poisson needs the poisson-intercept variant")
    groups, x, names = _design(spec, rng)
    intercept = spec.true_support[CLUSTER_OF_GROUP[groups], 0]
    eta = x @ spec.true_beta + intercept
    y = rng.poisson(np.exp(eta)).astype(float)
    Z = np.ones((groups.size, 1))
    return _dataset(spec, y, x, Z, groups, names, ["intercept"])


def simulate_bernoulli(spec: DgpSpec, rng: np.random.Generator) -> HierarchicalDataset:
    if spec.family is not Family.BERNOULLI:
        raise ValueError(f"{spec.variant} is not a Bernoulli variant")
    groups, x, names = _design(spec, rng)
    J = groups.size
    cluster = CLUSTER_OF_GROUP[groups]
    if spec.variant == "bernoulli-intercept":
        X, Z, znames = x, np.ones((J, 1)), ["intercept"]
    else:
        z1 = rng.standard_normal(J)
        if spec.variant == "bernoulli-slope":
            X = np.column_stack([np.ones(J), x])
            names = ["intercept"] + names
            Z, znames = z1[:, None], ["z1"]
        else:
            X, Z, znames = x, np.column_stack([np.ones(J), z1]), ["intercept", "z1"]
    b = spec.true_support[cluster]
    eta = X @ spec.true_beta + np.einsum("jq,jq->j", Z, b)
    u = rng.random(J)
    y = (u <= expit(eta)).astype(float)
    return _dataset(spec, y, X, Z, groups, names, znames)


def simulate(spec: DgpSpec, rng: np.random.Generator) -> HierarchicalDataset:
    if spec.family is Family.POISSON:
        return simulate_poisson(spec, rng)
    return simulate_bernoulli(spec, rng)


def replicate_seed(master: int, replicate: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=master, spawn_key=(replicate,))


@dataclass
class StudyReport:
    variant: str
    n_runs: int
    seed: int
    configs: list[dict]
    rows: list[dict]
    summary: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "n_runs": self.n_runs,
            "seed": self.seed,
            "configs": self.configs,
            "summary": self.summary,
            "replicates": self.rows,
        }

    def write_json(self, path) -> None:
        from .io import dump_json

        dump_json(self.to_json(), path)

    def write_csv(self, path) -> None:
        """One flat row per (config, replicate)."""
        flat = [_flatten(r) for r in self.rows]
        keys: list[str] = []
        for r in flat:
            for k in r:
                if k not in keys:
                    keys.append(k)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
            w.writeheader()
            for r in flat:
                w.writerow({k: _cell(r.get(k)) for k in keys})


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def _flatten(row: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in row.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        elif isinstance(v, list):
            for i, item in enumerate(v):
                if isinstance(item, list):
                    for j, x in enumerate(item):
                        out[f"{key}.{i}.{j}"] = x
                else:
                    out[f"{key}.{i}"] = item
        else:
            out[key] = v
    return out


def goodness_of_fit(family: Family, data: HierarchicalDataset, result) -> dict:
    mu = result.predict_mean(data)
    if family is Family.POISSON:
        mse, mse_log, chi2 = gof_counts(data.y, round_counts(mu))
        return {"mse": mse, "mse_log": mse_log, "chi2": chi2}
    sens, spec, acc = confusion_metrics(data.y, (mu > 0.5).astype(float))
    return {"sensitivity": sens, "specificity": spec, "accuracy": acc}


def _run_replicate(args) -> dict:
    spec, config, seed, r, label = args
    ss = replicate_seed(seed, r)
    data = simulate(spec, np.random.default_rng(ss))
    fit_seed = int(ss.generate_state(1)[0])
    row = {"config": label, "replicate": r}
    try:
        res = fit(data, replace(config, seed=fit_seed))
    except (ArithmeticError, ValueError, RuntimeError) as exc:
        logger.warning("replicate %d (%s) failed: %s", r, label, exc)
        row.update({"m_hat": None, "error": str(exc)})
        return row
    order = res.cluster_order()
    drops = [float(np.max(-np.diff(t))) for t in res.inner_traces if len(t) > 1]
    row.update(
        {
            "m_hat": res.M,
            "converged": res.converged,
            "iterations": res.iterations,
            "entropy": res.entropy,
            "points": res.support.points[order].tolist(),
            "weights": res.support.weights[order].tolist(),
            "beta": res.beta.tolist(),
            "gof": goodness_of_fit(spec.family, data, res),
            "audit": res.diagnostics,
            "max_inner_loglik_drop": max(drops) if drops else 0.0,
            "error": None,
        }
    )
    return row


def _mean_sd(values: list) -> dict:
    a = np.asarray(values, dtype=float)
    sd = float(a.std(axis=0, ddof=1)) if a.shape[0] > 1 and a.ndim == 1 else None
    if a.ndim > 1:
        sd = a.std(axis=0, ddof=1).tolist() if a.shape[0] > 1 else None
    return {"mean": a.mean(axis=0).tolist(), "sd": sd}


def summarize(rows: list[dict], label: str) -> dict:
    ok = [r for r in rows if r.get("m_hat") is not None]
    n = len(rows)
    counts = {"2": 0, "3": 0, "4": 0, "other": 0}
    for r in ok:
        key = str(r["m_hat"]) if r["m_hat"] in (2, 3, 4) else "other"
        counts[key] += 1
    by_m = {}
    for m in sorted({r["m_hat"] for r in ok}):
        sub = [r for r in ok if r["m_hat"] == m]
        by_m[str(m)] = {
            "n": len(sub),
            "points": _mean_sd([r["points"] for r in sub]),
            "weights": _mean_sd([r["weights"] for r in sub]),
            "beta": _mean_sd([r["beta"] for r in sub]),
            "entropy": _mean_sd([r["entropy"] for r in sub]),
        }
    gof = {}
    if ok:
        for key in ok[0]["gof"]:
            vals = [r["gof"][key] for r in ok if r["gof"][key] is not None]
            gof[key] = _mean_sd(vals) if vals else None
    return {
        "config": label,
        "n_runs": n,
        "failures": n - len(ok),
        "proportions": {k: v / n for k, v in counts.items()},
        "by_m_hat": by_m,
        "gof": gof,
    }


def run_study(spec: DgpSpec, configs: list[FitConfig], n_runs: int, seed: int = 0, workers: int = 1) -> StudyReport:
    """Fit every config on ``n_runs`` seeded replicate datasets.

    Replicate ``r`` always sees the same dataset whatever the config, so
    configs are compared on common data. Rows come back in (config, replicate)
    order regardless of ``workers``.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    if not configs:
        raise ValueError("at least one fit configuration is required")
    labels = [f"{c.criterion}={c.alpha if c.alpha is not None else c.t}" for c in configs]
    jobs = [
        (spec, replace(c, family=spec.family), seed, r, label)
        for c, label in zip(configs, labels)
        for r in range(n_runs)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_run_replicate, jobs))
    else:
        rows = [_run_replicate(j) for j in jobs]
    summary = [summarize([r for r in rows if r["config"] == label], label) for label in labels]
    return StudyReport(
        variant=spec.variant,
        n_runs=n_runs,
        seed=seed,
        configs=[c.as_dict() | {"family": spec.family.value} for c in configs],
        rows=rows,
        summary=summary,
    )
