import csv
import json

import numpy as np
import pytest
from scipy import stats

import hdconfound.simulation as simulation
from hdconfound.errors import ConfigError, SolverError
from hdconfound.simulation import (
    RECORD_COLUMNS,
    CoverageSummary,
    SimConfig,
    generate_dataset,
    loading_matrix,
    run_replications,
)

TINY = SimConfig(n=120, p=30, replications=3, grid_size=20, n_folds=5)


def test_block_loadings_for_p6():
    w = loading_matrix(SimConfig(p=6))
    expected = np.array([
        [0.5, 0.5, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 1.5, 1.5],
    ])
    np.testing.assert_array_equal(w, expected)


def test_uniform_loadings_in_unit_interval():
    cfg = SimConfig(p=50, loading="uniform")
    w = loading_matrix(cfg, np.random.default_rng(0))
    assert w.shape == (3, 50)
    assert np.all((w >= 0) & (w <= 1))


def test_first_block_variance():
    ds = generate_dataset(SimConfig(n=100_000, p=3, replications=1), 0)
    assert ds.d.var() == pytest.approx(1.25, rel=0.03)
    assert ds.x[:, 2].var() == pytest.approx(3.25, rel=0.03)


def test_linear_response_noise_is_standard_normal():
    cfg = SimConfig(n=20_000, p=9, replications=1)
    ds = generate_dataset(cfg, 0)
    from hdconfound.glm import design_matrix

    eps = ds.y - design_matrix(ds, ds.u) @ cfg.eta_star
    assert abs(eps.mean()) < 0.05
    assert eps.std() == pytest.approx(1.0, rel=0.03)


def test_logistic_response_is_binary():
    ds = generate_dataset(SimConfig(n=300, p=30, family="logistic"), 0)
    assert set(np.unique(ds.y)) == {0.0, 1.0}


def test_generation_is_deterministic_per_replication():
    a = generate_dataset(TINY, 2)
    b = generate_dataset(TINY, 2)
    c = generate_dataset(TINY, 3)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.y, b.y)
    assert not np.array_equal(a.x, c.x)


def test_uniform_design_redraws_loadings():
    cfg = SimConfig(n=2000, p=6, loading="uniform")
    a, b = generate_dataset(cfg, 0), generate_dataset(cfg, 1)
    ca = np.cov(np.column_stack([a.x, a.u]).T)[:6, 6:]
    cb = np.cov(np.column_stack([b.x, b.u]).T)[:6, 6:]
    assert np.abs(ca - cb).max() > 0.1


@pytest.mark.parametrize("bad, message", [
    ({"p": 100}, "p must be divisible by 3"),
    ({"family": "poisson"}, "family"),
    ({"alpha": 1.0}, "alpha"),
    ({"replications": 0}, "replications"),
    ({"methods": ("bogus",)}, "methods"),
    ({"k_mode": -1}, "k_mode"),
])
def test_config_validation(bad, message):
    with pytest.raises(ConfigError, match=message):
        SimConfig(**bad)


def test_config_from_dict():
    cfg = SimConfig(n=100, p=30, methods=("naive",), seed=5)
    assert SimConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ConfigError, match="unknown"):
        SimConfig.from_dict({"n": 100, "colour": "red"})
    with pytest.raises(ConfigError, match="integer"):
        SimConfig.from_dict({"n": 100.5})
    with pytest.raises(ConfigError, match="integer"):
        SimConfig.from_dict({"seed": True})


def test_uniform_accepts_any_p():
    assert SimConfig(p=100, loading="uniform").p == 100


def test_single_replication_coverage_is_zero_or_one():
    summary = run_replications(SimConfig(n=120, p=30, replications=1, grid_size=20))
    for m in summary.methods.values():
        assert m.coverage in (0.0, 1.0)
        assert m.n_ok == 1


def test_replications_are_reproducible_and_worker_independent(tmp_path):
    a = run_replications(TINY, workers=1)
    b = run_replications(TINY, workers=1)
    c = run_replications(TINY, workers=2)
    assert a.to_dict() == b.to_dict() == c.to_dict()
    assert [r["rep_index"] for r in a.records if r["method"] == "naive"] == [0, 1, 2]
    assert a.valid


def test_summary_round_trip_and_files(tmp_path):
    summary = run_replications(TINY)
    summary_path, records_path = summary.write(tmp_path)
    loaded = CoverageSummary.from_dict(json.loads(summary_path.read_text()))
    assert loaded == summary
    with open(records_path) as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == RECORD_COLUMNS
    assert len(rows) == 1 + 3 * len(TINY.methods)
    for row in rows[1:]:
        rec = dict(zip(RECORD_COLUMNS, row))
        assert rec["covered"] in ("0", "1")
        assert float(rec["ci_low"]) <= float(rec["theta_tilde"]) <= float(rec["ci_high"])


def test_failures_are_recorded_and_invalidate(monkeypatch):
    real = simulation.run_method

    def flaky(method, dataset, config):
        if method == "naive":
            raise SolverError("did not converge")
        return real(method, dataset, config)

    monkeypatch.setattr(simulation, "run_method", flaky)
    summary = run_replications(TINY)
    assert not summary.valid
    assert summary.methods["naive"].n_failed == 3
    assert summary.methods["naive"].n_ok == 0
    assert summary.methods["oracle"].n_ok == 3
    assert all("did not converge" in f["error"] for f in summary.failures)


@pytest.mark.slow
def test_oracle_pivot_is_approximately_normal():
    cfg = SimConfig(n=200, p=60, replications=300, methods=("oracle",), grid_size=30)
    summary = run_replications(cfg)
    z = np.array([r["theta_tilde"] / ((r["ci_high"] - r["ci_low"]) / (2 * 1.959964))
                  for r in summary.records])
    assert stats.kstest(z, "norm").pvalue > 0.01
