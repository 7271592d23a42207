"""CSV ingestion and JSON/CSV serialisation of fit results."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .family import HierarchicalDataset

logger = logging.getLogger(__name__)

INTERCEPT = "1"
MISSING = frozenset({"", "na", "nan", "null", "none"})


class InputError(ValueError):
    """Bad input file, schema or configuration."""


@dataclass(frozen=True)
class CsvSchema:
    """Column roles in an input CSV.

    ``"1"`` in ``fixed`` or ``random`` stands for a constant intercept column.
    Fixed and random lists may share columns; group and response columns must
    not appear among the covariates.
    """

    group: str
    response: str
    fixed: tuple[str, ...] = ()
    random: tuple[str, ...] = (INTERCEPT,)
    standardize: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("fixed", "random", "standardize"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.random:
            raise InputError("at least one random covariate is required")
        if self.group == self.response:
            raise InputError("group and response must be different columns")
        covariates = set(self.fixed) | set(self.random)
        for role in (self.group, self.response):
            if role in covariates:
                raise InputError(f"column {role!r} cannot also be a covariate")
        for name in (self.fixed, self.random):
            if len(set(name)) != len(name):
                raise InputError("duplicate column in a covariate list")
        if INTERCEPT in self.standardize:
            raise InputError("the intercept cannot be standardised")
        unknown = set(self.standardize) - covariates - {self.response}
        if unknown:
            raise InputError(f"standardize names columns that are not used: {sorted(unknown)}")

    @property
    def numeric_columns(self) -> list[str]:
        cols = [self.response]
        for c in self.fixed + self.random:
            if c != INTERCEPT and c not in cols:
                cols.append(c)
        return cols


@dataclass
class Ingested:
    data: HierarchicalDataset
    n_rows: int
    n_dropped: int
    standardization: dict[str, tuple[float, float]] = field(default_factory=dict)


def _is_missing(cell: str | None) -> bool:
    return cell is None or cell.strip().lower() in MISSING


def ingest_csv(path: str | Path, schema: CsvSchema) -> Ingested:
    """Read a long-format CSV into a dataset.

    Groups keep their order of first appearance. Rows with a missing value in
    any used column are dropped and counted. Flagged columns are centred and
    scaled to unit sample standard deviation after the drop.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"input file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if not header:
            raise InputError(f"{path}: no header row")
        needed = [schema.group] + schema.numeric_columns
        for col in needed:
            if col not in header:
                raise InputError(f"{path}: unknown column {col!r}")
        groups: list[str] = []
        values: list[list[float]] = []
        n_rows = dropped = 0
        for line, row in enumerate(reader, start=2):
            n_rows += 1
            if any(_is_missing(row.get(c)) for c in needed):
                dropped += 1
                continue
            parsed = []
            for c in schema.numeric_columns:
                cell = row[c].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise InputError(f"{path}: line {line}, column {c!r}: {cell!r} is not numeric") from None
                if not math.isfinite(v):
                    raise InputError(f"{path}: line {line}, column {c!r}: {cell!r} is not finite")
                parsed.append(v)
            groups.append(row[schema.group].strip())
            values.append(parsed)
    if dropped:
        logger.warning("%s: dropped %d row(s) with missing values", path, dropped)
    if not values:
        raise InputError(f"{path}: no usable rows after dropping missing values")

    table = np.asarray(values, dtype=float)
    cols = {c: table[:, k] for k, c in enumerate(schema.numeric_columns)}
    stats = {}
    for c in schema.standardize:
        x = cols[c]
        sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
        if not sd > 0:
            raise InputError(f"column {c!r} is constant and cannot be standardised")
        mean = float(np.mean(x))
        cols[c] = (x - mean) / sd
        stats[c] = (mean, sd)

    J = table.shape[0]

    def block(names):
        if not names:
            return np.zeros((J, 0))
        return np.column_stack([np.ones(J) if c == INTERCEPT else cols[c] for c in names])

    def labels(names):
        return ["intercept" if c == INTERCEPT else c for c in names]

    try:
        data = HierarchicalDataset.from_arrays(
            cols[schema.response],
            block(schema.fixed),
            block(schema.random),
            groups,
            labels(schema.fixed),
            labels(schema.random),
        )
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc
    return Ingested(data, n_rows, dropped, stats)


def write_dataset_csv(data: HierarchicalDataset, path: str | Path) -> CsvSchema:
    """Write a dataset in long format and return the schema that reads it back."""
    def is_const(v):
        return bool(np.all(v == 1.0))

    header = ["group", "y"]
    columns: list[np.ndarray] = []
    fixed, random = [], []
    for names, M, out in ((data.fixed_names, data.X, fixed), (data.random_names, data.Z, random)):
        for k, name in enumerate(names):
            if is_const(M[:, k]):
                out.append(INTERCEPT)
                continue
            if name not in header:
                header.append(name)
                columns.append(M[:, k])
            out.append(name)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        labels = [data.group_labels[g] for g in data.group]
        for j in range(data.J):
            w.writerow([labels[j], repr(float(data.y[j]))] + [repr(float(c[j])) for c in columns])
    return CsvSchema(group="group", response="y", fixed=tuple(fixed), random=tuple(random))


def to_jsonable(obj):
    """Convert numpy scalars/arrays to Python and non-finite floats to ``None``."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dump_json(obj, path: str | Path) -> None:
    # json writes floats with repr, the shortest string that parses back exactly
    text = json.dumps(to_jsonable(obj), indent=2, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def result_to_dict(result, data: HierarchicalDataset, extra: dict | None = None) -> dict:
    """JSON-ready summary of a fit, with clusters relabelled 1..M by ascending first coordinate."""
    order = result.cluster_order()
    rank = np.empty(result.M, dtype=int)
    rank[order] = np.arange(1, result.M + 1)
    covs = result.support_cov or [None] * result.M
    support = []
    for m in order:
        se = np.sqrt(np.diag(covs[m])) if covs[m] is not None else None
        support.append({"point": result.support.points[m], "weight": result.support.weights[m], "stderr": se})
    if result.beta_table:
        beta = [{k: row[k] for k in ("name", "estimate", "stderr", "p_value")} for row in result.beta_table]
    else:
        beta = [
            {"name": n, "estimate": b, "stderr": None, "p_value": None}
            for n, b in zip(data.fixed_names, result.beta)
        ]
    out = {
        "config": result.config.as_dict(),
        "m_hat": result.M,
        "support": support,
        "beta": beta,
        "assignments": [
            {"group": str(label), "cluster": int(rank[a])} for label, a in zip(data.group_labels, result.assignments)
        ],
        "entropy": {"per_group": result.entropy_per_group, "mean": result.entropy},
        "loglik": result.loglik,
        "loglik_trace": [{"iteration": k, "loglik": ll, "m": m} for k, ll, m in result.loglik_trace],
        "converged": {"conv1": result.conv1, "conv2": result.conv2, "iterations": result.iterations},
        "diagnostics": result.diagnostics,
    }
    if extra:
        out.update(extra)
    return to_jsonable(out)


def write_groups_csv(result, data: HierarchicalDataset, path: str | Path) -> None:
    """One row per group: id, label, cluster label and posterior weights in label order."""
    order = result.cluster_order()
    rank = np.empty(result.M, dtype=int)
    rank[order] = np.arange(1, result.M + 1)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group_id", "group", "cluster"] + [f"W{m + 1}" for m in range(result.M)])
        for i in range(data.N):
            row = result.W[i, order]
            w.writerow([i + 1, data.group_labels[i], int(rank[result.assignments[i]])] + [repr(float(v)) for v in row])


def read_config_file(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment. Keys are normalised to snake_case."""
    out = {}
    p = Path(path)
    if not p.is_file():
        raise InputError(f"config file not found: {p}")
    for n, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{p}: line {n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out
