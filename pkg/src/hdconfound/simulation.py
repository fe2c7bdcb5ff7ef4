"""Synthetic hidden-confounding designs and replication sweeps.

Each replication draws ``U`` (n x 3) and ``E`` (n x p) standard normal,
forms ``X = U W + E`` under either the block-diagonal or the uniform
loading design, takes the first column of ``X`` as the exposure and
generates a linear or logistic response. Randomness for replication ``r``
comes from ``SeedSequence([seed, r])`` so any replication can be rerun in
isolation and results do not depend on the worker schedule.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import ConfigError, HdConfoundError
from .glm import FAMILIES, Dataset
from .pipeline import PipelineOptions, full_pipeline, infer_coefficient

log = logging.getLogger(__name__)

METHODS = ("proposed", "oracle", "naive")
LOADINGS = ("diag_blocks", "uniform")
RECORD_COLUMNS = (
    "method", "rep_index", "theta_tilde", "ci_low", "ci_high", "covered", "ci_length",
    "k_selected",
)
MAX_FAILURE_RATE = 0.05


@dataclass(frozen=True)
class SimConfig:
    n: int = 500
    p: int = 300
    family: str = "linear"
    loading: str = "diag_blocks"
    k_true: int = 3
    theta_star: float = 0.0
    beta_star: tuple = (1.0, 1.0, 1.0)
    replications: int = 200
    alpha: float = 0.05
    seed: int = 0
    methods: tuple = METHODS
    k_mode: str | int = "auto"
    n_folds: int = 10
    grid_size: int = 100
    workers: int = 1

    def __post_init__(self):
        if self.family not in ("linear", "logistic"):
            raise ConfigError(f"family must be 'linear' or 'logistic', got {self.family!r}")
        if self.loading not in LOADINGS:
            raise ConfigError(f"loading must be one of {LOADINGS}, got {self.loading!r}")
        if self.n < 10 or self.p < 3:
            raise ConfigError(f"need n >= 10 and p >= 3, got n={self.n}, p={self.p}")
        if self.loading == "diag_blocks" and self.p % 3:
            raise ConfigError("p must be divisible by 3")
        if self.k_true != 3 or len(self.beta_star) != 3:
            raise ConfigError("the designs use exactly three confounders")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        bad = set(self.methods) - set(METHODS)
        if bad or not self.methods:
            raise ConfigError(f"methods must be a non-empty subset of {METHODS}")
        if not (self.k_mode == "auto" or (isinstance(self.k_mode, int) and self.k_mode >= 0)):
            raise ConfigError(f"k_mode must be 'auto' or a non-negative integer, got {self.k_mode!r}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    @property
    def v_star(self) -> np.ndarray:
        v = np.zeros(self.p - 1)
        v[0] = 1.0
        return v

    @property
    def eta_star(self) -> np.ndarray:
        return np.concatenate([[self.theta_star], self.v_star, self.beta_star])

    def options(self) -> PipelineOptions:
        return PipelineOptions(n_folds=self.n_folds, grid_size=self.grid_size)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["beta_star"] = list(self.beta_star)
        d["methods"] = list(self.methods)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("beta_star", "methods"):
            if key in d:
                d[key] = tuple(d[key])
        ints = ("n", "p", "k_true", "replications", "seed", "n_folds", "grid_size", "workers")
        for key in ints:
            if key in d and (isinstance(d[key], bool) or not isinstance(d[key], int)):
                raise ConfigError(f"{key} must be an integer")
        return cls(**d)


def loading_matrix(config: SimConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """``3 x p`` loadings: blocks of 0.5 / 1 / 1.5, or i.i.d. Unif[0, 1]."""
    p = config.p
    if config.loading == "diag_blocks":
        w = np.zeros((3, p))
        block = p // 3
        for k, value in enumerate((0.5, 1.0, 1.5)):
            w[k, k * block:(k + 1) * block] = value
        return w
    return rng.uniform(0.0, 1.0, size=(3, p))


def generate_dataset(config: SimConfig, rep_index: int) -> Dataset:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, rep_index]))
    n, p = config.n, config.p
    u = rng.standard_normal((n, 3))
    e = rng.standard_normal((n, p))
    w = loading_matrix(config, rng)
    x = u @ w + e
    lp = config.theta_star * x[:, 0] + x[:, 1:] @ config.v_star + u @ np.asarray(config.beta_star)
    if config.family == "linear":
        y = lp + rng.standard_normal(n)
    else:
        prob = FAMILIES["logistic"].mean(lp)
        y = (rng.uniform(size=n) < prob).astype(float)
    return Dataset(y=y, d=x[:, 0].copy(), q=x[:, 1:].copy(), u=u)


def run_method(method: str, dataset: Dataset, config: SimConfig):
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    x = dataset.x
    options = config.options()
    if method == "proposed":
        return full_pipeline(
            config.family, dataset.y, x, 0, config.k_mode, config.alpha, config.seed, options
        )
    if method == "oracle":
        if dataset.u is None:
            raise ConfigError("oracle method needs the true confounders")
        uhat = dataset.u - dataset.u.mean(axis=0)
    else:
        uhat = np.zeros((dataset.n, 0))
    return infer_coefficient(
        config.family, dataset.y, x, 0, uhat, config.alpha, config.seed, options
    )


def _run_replication(config: SimConfig, rep_index: int):
    records, failures = [], []
    with threadpool_limits(limits=1):
        dataset = generate_dataset(config, rep_index)
        for method in config.methods:
            try:
                res = run_method(method, dataset, config)
            except HdConfoundError as exc:
                failures.append({"method": method, "rep_index": rep_index, "error": str(exc)})
                continue
            records.append({
                "method": method,
                "rep_index": rep_index,
                "theta_tilde": res.theta_tilde,
                "ci_low": res.ci_low,
                "ci_high": res.ci_high,
                "covered": bool(res.ci_low <= config.theta_star <= res.ci_high),
                "ci_length": res.ci_high - res.ci_low,
                "k_selected": res.k,
            })
    return records, failures


@dataclass(frozen=True)
class MethodSummary:
    coverage: float
    n_covered: int
    n_ok: int
    n_failed: int
    mean_ci_length: float
    mean_abs_error: float


@dataclass(frozen=True)
class CoverageSummary:
    config: dict
    methods: dict
    records: list = field(repr=False)
    failures: list = field(repr=False)
    valid: bool = True

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "valid": self.valid,
            "methods": {k: asdict(v) for k, v in self.methods.items()},
            "failures": self.failures,
            "records": self.records,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CoverageSummary":
        return cls(
            config=d["config"],
            methods={k: MethodSummary(**v) for k, v in d["methods"].items()},
            records=d["records"],
            failures=d["failures"],
            valid=d["valid"],
        )

    def write(self, out_dir) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        summary_path = out / "summary.json"
        records_path = out / "records.csv"
        summary_path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        with open(records_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(RECORD_COLUMNS)
            for rec in self.records:
                writer.writerow([_fmt(rec[c]) for c in RECORD_COLUMNS])
        return summary_path, records_path


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def summarize(config: SimConfig, records: list, failures: list) -> CoverageSummary:
    methods = {}
    valid = True
    for method in config.methods:
        recs = [r for r in records if r["method"] == method]
        n_failed = sum(1 for f in failures if f["method"] == method)
        n_ok = len(recs)
        n_covered = sum(1 for r in recs if r["covered"])
        if n_failed > MAX_FAILURE_RATE * config.replications:
            valid = False
        if n_failed:
            log.warning("%s: %d of %d replications failed", method, n_failed, config.replications)
        methods[method] = MethodSummary(
            coverage=n_covered / n_ok if n_ok else float("nan"),
            n_covered=n_covered,
            n_ok=n_ok,
            n_failed=n_failed,
            mean_ci_length=float(np.mean([r["ci_length"] for r in recs])) if n_ok else float("nan"),
            mean_abs_error=(
                float(np.mean([abs(r["theta_tilde"] - config.theta_star) for r in recs]))
                if n_ok else float("nan")
            ),
        )
    return CoverageSummary(config.to_dict(), methods, records, failures, valid)


def run_replications(config: SimConfig, workers: int | None = None, reps=None) -> CoverageSummary:
    """Run replications (optionally a subset ``reps``) and aggregate by method.

    Records are reduced in replication order whatever the worker count.
    """
    workers = workers or config.workers
    reps = list(range(config.replications)) if reps is None else list(reps)
    if workers == 1:
        results = [_run_replication(config, r) for r in reps]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, os.cpu_count() * 8)) as pool:
            results = list(pool.map(_run_replication, [config] * len(reps), reps))
    records = [rec for recs, _ in results for rec in recs]
    failures = [f for _, fails in results for f in fails]
    return summarize(config, records, failures)
