import numpy as np
import pytest

import telegraph_hmm.experiments as ex
from telegraph_hmm.experiments import (
    ExperimentError,
    default_config,
    grid_mle_oracle,
    lattice_axis,
    run_monte_carlo,
    run_records,
    run_replication,
)
from telegraph_hmm.filter import log_likelihood_grid
from telegraph_hmm.mle import ConfigError
from telegraph_hmm.model import ModelSpec, ParameterDomain, StateSpace, ThetaParams
from telegraph_hmm.simulate import ObservationPath, simulate_path

Y01 = StateSpace(0.0, 1.0)
# lattice 0.25, 0.5, ..., 5.25 contains (1, 1)
GRID_DOM = ParameterDomain(0.2, 5.3)


def small_config(**kw):
    base = dict(horizons=(40, 80), replications=6, methods=("moments", "one-step", "two-step"))
    base.update(kw)
    return default_config(**base)


def test_config_validation():
    with pytest.raises(ConfigError) as err:
        small_config(replications=1)
    assert err.value.field == "replications"
    with pytest.raises(ConfigError):
        small_config(horizons=(10.5,))
    with pytest.raises(ConfigError):
        small_config(step=0.3)
    with pytest.raises(ConfigError):
        small_config(methods=("mle",))
    with pytest.raises(ConfigError):
        small_config(delta_two_step=0.6)


def test_replication_is_deterministic():
    cfg = small_config()
    a, b = run_replication(cfg, 3), run_replication(cfg, 3)
    assert a == b
    assert a.rows() == b.rows()
    assert a != run_replication(cfg, 4)


def test_replication_index_bounds():
    cfg = small_config()
    with pytest.raises(IndexError):
        run_replication(cfg, cfg.replications)
    with pytest.raises(IndexError):
        run_replication(cfg, -1)


def test_failure_is_isolated(monkeypatch):
    real = ex._apply_method

    def flaky(method, path, spec, config, T):
        if method == "one-step" and T == 40:
            raise RuntimeError("boom")
        return real(method, path, spec, config, T)

    monkeypatch.setattr(ex, "_apply_method", flaky)
    cfg = small_config(methods=("moments", "one-step"))
    rec = run_replication(cfg, 0)
    bad = [r for r in rec.results if r.error]
    assert len(bad) == 1 and "boom" in bad[0].error
    report = run_monte_carlo(cfg)
    assert report.cell(40, "one-step").n_failed == cfg.replications


def test_all_failed_raises(monkeypatch):
    def broken(*a):
        raise RuntimeError("nope")

    monkeypatch.setattr(ex, "_apply_method", broken)
    with pytest.raises(ExperimentError):
        run_monte_carlo(small_config())


def test_report_deterministic_and_parallel_equals_serial():
    cfg = small_config(replications=4)
    serial = run_monte_carlo(cfg)
    assert serial == run_monte_carlo(cfg)
    assert run_monte_carlo(cfg, workers=2) == serial
    assert any("M(2)" in w for w in serial.warnings)


def test_report_statistics_match_records():
    cfg = small_config(replications=5, methods=("moments", "one-step"))
    recs = run_records(cfg)
    report = ex.aggregate(cfg, recs)
    res = [r for rec in recs for r in rec.results if r.T == 80 and r.method == "one-step"]
    err = np.array([[r.lambda_hat - 1, r.mu_hat - 1] for r in res])
    cell = report.cell(80, "one-step")
    np.testing.assert_allclose(cell.bias, err.mean(axis=0), rtol=1e-14)
    np.testing.assert_allclose(cell.t_mse, 80 * (err**2).mean(axis=0), rtol=1e-14)
    assert cell.coverage == np.mean([r.chi2 <= ex.CHI2_95 for r in res])
    # z = G^{1/2} (theta - theta0) with G = t * I, so |z|^2 = chi2
    for r in res:
        assert r.z1**2 + r.z2**2 == pytest.approx(r.chi2, rel=1e-10)
    assert len([q for q in report.qq if q[0] == 80 and q[1] == "one-step"]) == 2 * 5


def self_consistent_path(theta, T=200.0, h=0.01):
    # dX = m(pi) h with pi started at mu / (lambda + mu): pi never moves
    p = theta.mu / (theta.lam + theta.mu)
    return ObservationPath(h, T, np.full(round(T / h), (1.0 - p) * h))


def test_grid_oracle_on_self_consistent_path():
    theta0 = ThetaParams(1.0, 1.0)
    path = self_consistent_path(theta0)
    axis = lattice_axis(GRID_DOM, 21, 0.05)
    lam, mu = np.meshgrid(axis, axis, indexing="ij")
    ll = log_likelihood_grid(lam, mu, Y01, path).reshape(21, 21)
    best = ll[3, 3]  # (1, 1)
    assert np.all(ll <= best + 1e-9)
    # every rate pair with the same stationary split fits equally well
    ties = np.isclose(ll, best, rtol=0, atol=1e-9)
    assert np.array_equal(ties, np.eye(21, dtype=bool))
    # so the documented tie-break picks the smallest lambda on that line
    assert grid_mle_oracle(path, Y01, GRID_DOM, 21, 0.05) == ThetaParams(0.25, 0.25)


def test_grid_oracle_long_noisy_path_lands_next_to_truth():
    spec = ModelSpec(ThetaParams(1.0, 1.0), Y01, GRID_DOM)
    for seed in range(3):
        _, path = simulate_path(spec, 8000, 0.01, np.random.default_rng(seed), keep_hidden=False)
        est = grid_mle_oracle(path, Y01, GRID_DOM, 21, 0.05)
        assert abs(est.lam - 1) <= 0.25 + 1e-12 and abs(est.mu - 1) <= 0.25 + 1e-12


def test_grid_oracle_argument_checks():
    with pytest.raises(ValueError):
        grid_mle_oracle(self_consistent_path(ThetaParams(1, 1)), Y01, GRID_DOM, 4)


@pytest.mark.slow
def test_grid_refinement_is_stable():
    spec = ModelSpec(ThetaParams(1.0, 1.0), Y01, ParameterDomain(0.1, 5.0))
    coarse_cell = (lattice_axis(spec.domain, 11)[1] - lattice_axis(spec.domain, 11)[0])
    ok = 0
    for r in range(50):
        _, path = simulate_path(spec, 2000, 0.01, np.random.default_rng([41, r]), keep_hidden=False)
        a = grid_mle_oracle(path, Y01, spec.domain, 11)
        b = grid_mle_oracle(path, Y01, spec.domain, 21)
        ok += max(abs(a.lam - b.lam), abs(a.mu - b.mu)) <= coarse_cell + 1e-12
    assert ok >= 45
