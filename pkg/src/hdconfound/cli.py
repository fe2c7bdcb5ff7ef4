"""Command-line entry points: ``simulate``, ``infer`` and ``select-k``.

Exit codes: 0 on success, 2 for bad input (malformed config or CSV, missing
columns, response incompatible with the family), 3 when a run completes
but is invalid (too many failed replications, or an exposure whose
inference failed).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import HdConfoundError, InvalidInputError, StageError
from .factor import parallel_analysis_table
from .glm import FAMILIES, get_family
from .pipeline import PipelineOptions, estimate_surrogates, full_pipeline, stage_seeds
from .simulation import SimConfig, run_replications

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INVALID = 3

REPORT_COLUMNS = (
    "column_name", "theta_tilde", "ci_low", "ci_high", "p_value", "p_value_bonferroni",
    "effect_size", "significant_bonferroni", "k_used",
)


class InputError(Exception):
    """Bad command-line input; reported on one line with exit status 2."""


@dataclass(frozen=True)
class InferenceReportRow:
    column_name: str
    theta_tilde: float
    ci_low: float
    ci_high: float
    p_value: float
    p_value_bonferroni: float
    effect_size: float
    significant_bonferroni: bool
    k_used: int

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "InferenceReportRow":
        return cls(**d)


def bonferroni(p_values, alpha: float):
    """Adjusted p-values ``min(1, m p)`` and the flags ``p < alpha / m``."""
    p = np.asarray(p_values, dtype=float)
    m = len(p)
    if m == 0:
        return np.zeros(0), np.zeros(0, dtype=bool)
    return np.minimum(1.0, m * p), p < alpha / m


def read_numeric_csv(path) -> tuple[list[str], np.ndarray]:
    """Header plus a finite float matrix; raises ``InputError`` naming the bad cell."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except (OSError, UnicodeDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    rows = [r for r in rows if r]
    if not rows:
        raise InputError(f"{path}: file is empty")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise InputError(f"{path}: duplicate column names in header")
    body = rows[1:]
    if not body:
        raise InputError(f"{path}: no data rows")
    out = np.empty((len(body), len(header)))
    for i, row in enumerate(body):
        line = i + 2
        if len(row) != len(header):
            raise InputError(
                f"{path}: row {line} has {len(row)} fields, header has {len(header)}"
            )
        for j, cell in enumerate(row):
            try:
                value = float(cell)
            except ValueError:
                raise InputError(
                    f"{path}: row {line}, column {header[j]!r}: non-numeric value {cell!r}"
                ) from None
            if not math.isfinite(value):
                raise InputError(
                    f"{path}: row {line}, column {header[j]!r}: non-finite value {cell!r}"
                )
            out[i, j] = value
    return header, out


def _parse_k(text: str):
    if text == "auto":
        return "auto"
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'auto' or an integer, got {text!r}") from None
    if k < 0:
        raise argparse.ArgumentTypeError(f"k must be non-negative, got {k}")
    return k


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def load_config(path) -> SimConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise InputError(f"{path}: config must be a JSON object")
    try:
        return SimConfig.from_dict(raw)
    except (HdConfoundError, TypeError) as exc:
        raise InputError(f"{path}: {exc}") from exc


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    summary = run_replications(config, workers=args.workers)
    summary_path, records_path = summary.write(args.out)
    for method, stats in summary.methods.items():
        print(
            f"{method}: coverage={stats.coverage:.4f} ({stats.n_covered}/{stats.n_ok}) "
            f"mean_ci_length={stats.mean_ci_length:.4f} failed={stats.n_failed}"
        )
    print(f"wrote {summary_path} and {records_path}")
    if not summary.valid:
        print("error: more than 5% of replications failed; run marked invalid", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def _infer_one(family, y, x, index, uhat, alpha, seed, options):
    with threadpool_limits(limits=1):
        try:
            return full_pipeline(family, y, x, index, alpha=alpha, seed=seed,
                                 options=options, uhat=uhat)
        except HdConfoundError as exc:
            return exc


def _output_paths(out) -> tuple[Path, Path]:
    out = Path(out)
    if out.suffix.lower() == ".json":
        return out.with_suffix(".csv"), out
    if out.suffix.lower() == ".csv":
        return out, out.with_suffix(".json")
    return out, Path(str(out) + ".json")


def cmd_infer(args) -> int:
    header, table = read_numeric_csv(args.data)
    if args.response not in header:
        raise InputError(f"response column {args.response!r} not found in {args.data}")
    covariates = [h for h in header if h != args.response]
    if not covariates:
        raise InputError("no covariate columns besides the response")
    if args.exposures.strip() == "all":
        exposures = covariates
    else:
        exposures = [e.strip() for e in args.exposures.split(",") if e.strip()]
        if not exposures:
            raise InputError("no exposure columns given")
        missing = [e for e in exposures if e not in covariates]
        if missing:
            raise InputError(f"exposure columns not found among covariates: {missing}")
        if len(set(exposures)) != len(exposures):
            raise InputError("exposure columns listed more than once")
    # tested in input-column order whatever order they were listed in
    exposures = [c for c in covariates if c in set(exposures)]

    family = get_family(args.family)
    y = np.ascontiguousarray(table[:, header.index(args.response)])
    x = np.ascontiguousarray(table[:, [header.index(c) for c in covariates]])
    try:
        family.check_response(y)
    except InvalidInputError as exc:
        raise InputError(f"response {args.response!r}: {exc}") from exc
    options = PipelineOptions()
    try:
        uhat, _ = estimate_surrogates(x, args.k, args.seed, options)
    except StageError as exc:
        if isinstance(exc.cause, InvalidInputError):
            raise InputError(str(exc)) from exc
        print(f"error: factor step failed: {exc}", file=sys.stderr)
        return EXIT_INVALID
    indices = [covariates.index(c) for c in exposures]

    jobs = [(family.name, y, x, i, uhat, args.alpha, args.seed, options) for i in indices]
    if args.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_infer_one, *zip(*jobs)))
    else:
        results = [_infer_one(*job) for job in jobs]
    failed = [(c, r) for c, r in zip(exposures, results) if isinstance(r, Exception)]
    if failed:
        for name, exc in failed:
            print(f"error: exposure {name!r}: {exc}", file=sys.stderr)
        return EXIT_INVALID

    adjusted, flags = bonferroni([r.p_value for r in results], args.alpha)
    rows = [
        InferenceReportRow(
            column_name=name,
            theta_tilde=float(r.theta_tilde),
            ci_low=float(r.ci_low),
            ci_high=float(r.ci_high),
            p_value=float(r.p_value),
            p_value_bonferroni=float(adj),
            effect_size=float(r.z),
            significant_bonferroni=bool(flag),
            k_used=int(r.k),
        )
        for name, r, adj, flag in zip(exposures, results, adjusted, flags)
    ]
    csv_path, json_path = _output_paths(args.out)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            d = row.to_dict()
            writer.writerow([_fmt(d[c]) for c in REPORT_COLUMNS])
    json_path.write_text(
        json.dumps([row.to_dict() for row in rows], indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    n_sig = int(np.sum(flags))
    print(f"tested {len(rows)} exposures, {n_sig} significant after Bonferroni; "
          f"wrote {csv_path} and {json_path}")
    return EXIT_OK


def cmd_select_k(args) -> int:
    _, x = read_numeric_csv(args.data)
    if not 0.0 < args.quantile < 1.0:
        raise InputError(f"quantile must lie in (0, 1), got {args.quantile}")
    pa_seed, _ = stage_seeds(args.seed)
    try:
        k, observed, null = parallel_analysis_table(x, args.draws, args.quantile, pa_seed)
    except HdConfoundError as exc:
        raise InputError(str(exc)) from exc
    print(k)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(("rank", "observed", "null_quantile", "exceeds"))
    for i, (obs, nul) in enumerate(zip(observed, null), start=1):
        writer.writerow((i, repr(float(obs)), repr(float(nul)), _fmt(bool(obs > nul))))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hdconfound",
        description="Debiased inference for high-dimensional GLMs with hidden confounders.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a coverage simulation from a JSON config")
    sim.add_argument("--config", required=True, help="JSON file with SimConfig fields")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--workers", type=_positive_int, default=None,
                     help="worker processes (default: the config's value)")
    sim.set_defaults(func=cmd_simulate)

    inf = sub.add_parser("infer", help="confidence intervals for exposures in a CSV")
    inf.add_argument("--data", required=True)
    inf.add_argument("--response", required=True)
    inf.add_argument("--exposures", default="all", help="comma-separated names or 'all'")
    inf.add_argument("--family", choices=sorted(FAMILIES), default="linear")
    inf.add_argument("--k", type=_parse_k, default="auto")
    inf.add_argument("--alpha", type=float, default=0.05)
    inf.add_argument("--seed", type=int, default=0)
    inf.add_argument("--out", required=True, help="CSV path; a JSON copy is written alongside")
    inf.add_argument("--workers", type=_positive_int, default=1)
    inf.set_defaults(func=cmd_infer)

    sel = sub.add_parser("select-k", help="parallel analysis for the number of factors")
    sel.add_argument("--data", required=True)
    sel.add_argument("--draws", type=_positive_int, default=100)
    sel.add_argument("--quantile", type=float, default=0.95)
    sel.add_argument("--seed", type=int, default=0)
    sel.set_defaults(func=cmd_select_k)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    alpha = getattr(args, "alpha", None)
    if alpha is not None and not 0.0 < alpha < 1.0:
        print(f"error: alpha must lie in (0, 1), got {alpha}", file=sys.stderr)
        return EXIT_INPUT
    try:
        # one BLAS thread everywhere: reductions then do not depend on the host
        with threadpool_limits(limits=1):
            return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
