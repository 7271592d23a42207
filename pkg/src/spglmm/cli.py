"""``spglmm`` command line: fit a CSV, run a simulation study, or scan thresholds.

Exit codes: 0 converged/success, 1 input error, 2 fit finished without converging.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import warnings
from dataclasses import replace

import numpy as np

from .em import FitConfig, InitializationError, NumericalError, fit
from .family import Family
from .io import (
    CsvSchema,
    InputError,
    dump_json,
    ingest_csv,
    read_config_file,
    result_to_dict,
    write_dataset_csv,
    write_groups_csv,
)
from .metrics import elbow_scan
from .simulation import VARIANTS, DgpSpec, replicate_seed, run_study, simulate

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 1, 2

logger = logging.getLogger("spglmm")

_FIT_DEFAULTS = {
    "family": "poisson",
    "K": 60,
    "K1": 20,
    "K2": 5,
    "itmax": 20,
    "tR": 1e-5,
    "tF": 1e-5,
    "Ntilde": None,
    "seed": 0,
}
_CASTS = {"K": int, "K1": int, "K2": int, "itmax": int, "Ntilde": int, "seed": int, "tR": float, "tF": float,
          "alpha": float, "t": float, "runs": int, "slopes": int, "workers": int}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _names(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def _floats(text: str) -> list[float]:
    try:
        return [float(s) for s in _names(text)]
    except ValueError:
        raise InputError(f"not a comma-separated list of numbers: {text!r}") from None


def _add_fit_options(p: argparse.ArgumentParser, grid: bool = False) -> None:
    p.add_argument("--config", help="key=value file; command-line flags take precedence")
    p.add_argument("--family", choices=[f.value for f in Family])
    if grid:
        crit = p.add_mutually_exclusive_group()
        crit.add_argument("--alpha", help="comma-separated significance levels")
        crit.add_argument("--t", help="comma-separated distance thresholds")
    else:
        crit = p.add_mutually_exclusive_group()
        crit.add_argument("--alpha", type=float)
        crit.add_argument("--t", type=float)
    for name in ("K", "K1", "K2", "itmax", "Ntilde", "seed"):
        p.add_argument(f"--{name}", type=int)
    for name in ("tR", "tF"):
        p.add_argument(f"--{name}", type=float)


def _add_schema_options(p: argparse.ArgumentParser, required: bool) -> None:
    p.add_argument("--data", required=required, help="input CSV")
    p.add_argument("--group", help="group column")
    p.add_argument("--response", help="response column")
    p.add_argument("--fixed", help="comma-separated fixed covariates")
    p.add_argument("--random", help="comma-separated random covariates; 1 means intercept")
    p.add_argument("--standardize", help="comma-separated columns to standardise")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spglmm", description="GLMM with discrete random effects fitted by EM.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a CSV dataset")
    _add_schema_options(p, required=False)
    _add_fit_options(p)
    p.add_argument("--no-inference", action="store_true", help="skip standard errors and p-values")
    p.add_argument("--out", help="JSON result path")
    p.add_argument("--groups-out", help="per-group CSV path (default: <out>.groups.csv)")

    p = sub.add_parser("simulate", help="Monte-Carlo study on a planted design")
    p.add_argument("--variant", help=f"one of {', '.join(VARIANTS)}")
    p.add_argument("--slopes", type=int, help="number of fixed slopes (1 or 2)")
    p.add_argument("--runs", type=int)
    p.add_argument("--workers", type=int)
    _add_fit_options(p, grid=True)
    p.add_argument("--out", help="report JSON path")
    p.add_argument("--csv", help="per-replicate CSV path")
    p.add_argument("--data-out", help="also write replicate 0's dataset as CSV")

    p = sub.add_parser("scan", help="entropy and cluster count over a grid of thresholds t")
    _add_schema_options(p, required=False)
    p.add_argument("--variant", help="simulate from a planted design instead of --data")
    p.add_argument("--slopes", type=int)
    p.add_argument("--runs", type=int)
    _add_fit_options(p, grid=True)
    p.add_argument("--out", help="scan CSV path")
    return parser


def _settings(args: argparse.Namespace) -> dict:
    """Merge defaults, the config file, then explicit flags."""
    merged = dict(_FIT_DEFAULTS)
    if getattr(args, "config", None):
        merged.update(read_config_file(args.config))
    for k, v in vars(args).items():
        if v is not None and k not in ("config", "command", "verbose"):
            merged[k] = v
    if "alpha" in vars(args) and args.alpha is not None:
        merged.pop("t", None)
    if "t" in vars(args) and args.t is not None:
        merged.pop("alpha", None)
    return merged


def _cast(settings: dict, key: str):
    v = settings.get(key)
    if v is None or key not in _CASTS or not isinstance(v, str):
        return v
    if v.strip().lower() in ("", "none"):
        return None
    try:
        return _CASTS[key](v)
    except ValueError:
        raise InputError(f"{key}: {v!r} is not a valid {_CASTS[key].__name__}") from None


def _config(settings: dict, **criterion) -> FitConfig:
    kwargs = {k: _cast(settings, k) for k in ("K", "K1", "K2", "itmax", "tR", "tF", "Ntilde", "seed")}
    try:
        return FitConfig(family=Family.parse(settings["family"]), **kwargs, **criterion)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def _single_criterion(settings: dict) -> dict:
    alpha, t = _cast(settings, "alpha"), _cast(settings, "t")
    if alpha is not None and t is not None:
        raise InputError("give either alpha or t, not both")
    return {"t": t} if t is not None else {"alpha": alpha}


def _grid(settings: dict) -> tuple[str, list[float]]:
    alpha, t = settings.get("alpha"), settings.get("t")
    if alpha is not None and t is not None:
        raise InputError("give either alpha or t, not both")
    if t is not None:
        return "t", t if isinstance(t, list) else _floats(str(t))
    return "alpha", _floats(str(alpha)) if alpha is not None else [0.05]


def _schema(settings: dict) -> CsvSchema:
    for key in ("group", "response"):
        if not settings.get(key):
            raise InputError(f"--{key} is required with --data")
    return CsvSchema(
        group=settings["group"],
        response=settings["response"],
        fixed=tuple(_names(settings.get("fixed") or "")),
        random=tuple(_names(settings.get("random") or "1")),
        standardize=tuple(_names(settings.get("standardize") or "")),
    )


def cmd_fit(args: argparse.Namespace) -> int:
    s = _settings(args)
    if not s.get("data"):
        raise InputError("--data is required")
    if not s.get("out"):
        raise InputError("--out is required")
    config = _config(s, **_single_criterion(s))
    if args.no_inference:
        config = replace(config, inference=False)
    ingested = ingest_csv(s["data"], _schema(s))
    data = ingested.data
    try:
        data.validate(config.family)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    result = fit(data, config)
    extra = {"input": {"rows": ingested.n_rows, "dropped_rows": ingested.n_dropped, "groups": data.N}}
    dump_json(result_to_dict(result, data, extra), s["out"])
    groups_out = s.get("groups_out") or f"{s['out']}.groups.csv"
    write_groups_csv(result, data, groups_out)
    logger.info("M = %d, converged = %s", result.M, result.converged)
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _dgp(settings: dict) -> DgpSpec:
    variant = settings.get("variant") or "poisson-intercept"
    slopes = _cast(settings, "slopes") or 1
    try:
        return DgpSpec(variant, n_fixed_slopes=slopes)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def cmd_simulate(args: argparse.Namespace) -> int:
    s = _settings(args)
    if not s.get("out"):
        raise InputError("--out is required")
    spec = _dgp(s)
    s["family"] = spec.family.value
    kind, values = _grid(s)
    configs = [_config(s, **{kind: v}) for v in values]
    configs = [replace(c, inference=False) for c in configs]
    runs = _cast(s, "runs") or 1
    if runs < 1:
        raise InputError("--runs must be at least 1")
    seed = _cast(s, "seed") or 0
    if s.get("data_out"):
        write_dataset_csv(simulate(spec, np.random.default_rng(replicate_seed(seed, 0))), s["data_out"])
    report = run_study(spec, configs, runs, seed=seed, workers=_cast(s, "workers") or 1)
    report.write_json(s["out"])
    report.write_csv(s.get("csv") or f"{s['out']}.csv")
    return EXIT_OK


def cmd_scan(args: argparse.Namespace) -> int:
    s = _settings(args)
    if not s.get("out"):
        raise InputError("--out is required")
    if s.get("alpha") is not None:
        raise InputError("scan works on the distance threshold; use --t")
    if s.get("t") is None:
        raise InputError("--t grid is required")
    grid = _floats(str(s["t"]))
    if not grid:
        raise InputError("--t grid is empty")
    if any(b < a for a, b in zip(grid, grid[1:])):
        logger.warning("t grid was not ascending; sorted")
        grid = sorted(grid)

    if s.get("data"):
        datasets = [(0, ingest_csv(s["data"], _schema(s)).data)]
        seed = _cast(s, "seed") or 0
    else:
        spec = _dgp(s)
        s["family"] = spec.family.value
        seed = _cast(s, "seed") or 0
        runs = _cast(s, "runs") or 1
        datasets = [(r, simulate(spec, np.random.default_rng(replicate_seed(seed, r)))) for r in range(runs)]
    template = _config(s, t=grid[0])
    with open(s["out"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", "t", "entropy", "m_hat", "converged", "error"])
        for r, data in datasets:
            cfg = replace(template, seed=seed + r)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                points = elbow_scan(data, cfg, grid)
            for p in points:
                m = "" if p.m_hat is None else p.m_hat
                w.writerow([r, repr(p.t), repr(p.entropy), m, int(p.converged), p.error or ""])
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "scan": cmd_scan}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"spglmm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InitializationError, NumericalError) as exc:
        print(f"spglmm {args.command}: fit failed: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED


if __name__ == "__main__":
    sys.exit(main())
