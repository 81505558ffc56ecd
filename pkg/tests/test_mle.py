import math

import numpy as np
import pytest

import telegraph_hmm.mle as mle
from telegraph_hmm.filter import empirical_fisher, gram_increments, run_filter_with_sensitivities, score_integral
from telegraph_hmm.mle import (
    ConfigError,
    EstimationConfig,
    EstimationError,
    EstimatorProcess,
    ProcessRecord,
    learning_horizon,
    one_step_process,
    process_rows,
    sqrtm_spd,
    standardized_process,
    two_step_process,
)
from telegraph_hmm.model import ParameterDomain, StateSpace, ThetaParams
from telegraph_hmm.moments import estimate_moments
from telegraph_hmm.simulate import ObservationPath

Y01 = StateSpace(0.0, 1.0)
DOM = ParameterDomain(0.1, 5.0)


def constant_path(c=0.3, T=100.0, h=0.01):
    return ObservationPath(h, T, np.full(round(T / h), c * h))


def test_learning_horizon():
    assert learning_horizon(4000, 0.6) == 144
    assert learning_horizon(4000, 0.4) == 27
    assert learning_horizon(100, 0.5) == 10  # exact power is not floored down


def test_config_ranges():
    with pytest.raises(ConfigError) as err:
        EstimationConfig(delta=0.6, method="two-step")
    assert err.value.field == "delta"
    for d in (0.5, 1.0, 0.3):
        with pytest.raises(ConfigError):
            EstimationConfig(delta=d, method="one-step")
    EstimationConfig(delta=0.5, method="two-step")
    with pytest.raises(ConfigError):
        EstimationConfig(delta=0.25, method="two-step")
    with pytest.raises(ConfigError):
        EstimationConfig(output_taus=(0.0, 1.0))


def test_learning_horizon_must_be_below_T():
    with pytest.raises(ConfigError):
        one_step_process(constant_path(T=1.0), Y01, DOM)


THETA_HAT = (0.8, 1.6)


def zero_innovation_path(T, t_learn, h=0.01, seed=0):
    """Noisy increments on the learning interval, then ``dX = m h`` with m
    from the filter at THETA_HAT, so every innovation after ``t_learn`` is 0."""
    from telegraph_hmm.filter import run_filter

    rng = np.random.default_rng(seed)
    k0, n = round(t_learn / h), round(T / h)
    head = 0.5 * h + rng.standard_normal(k0) * math.sqrt(h)
    p = run_filter(THETA_HAT, Y01, ObservationPath(h, k0 * h, head)).pi[-1]
    lam, mu = THETA_HAT
    tail = np.empty(n - k0)
    for k in range(n - k0):
        tail[k] = (1.0 - p) * h  # m = y2 + b p with y = (0, 1)
        p = p + (mu - (lam + mu) * p) * h
    return ObservationPath(h, T, np.concatenate((head, tail)))


@pytest.fixture
def fixed_preliminary(monkeypatch):
    def fake(path, states, domain):
        est = estimate_moments(path, states, domain)
        return type(est)(THETA_HAT[0], THETA_HAT[1], est.stats)

    monkeypatch.setattr(mle, "estimate_moments", fake)


def test_zero_innovation_keeps_preliminary(fixed_preliminary):
    path = zero_innovation_path(100.0, learning_horizon(100.0, 0.6))
    proc = one_step_process(path, Y01, DOM, EstimationConfig(0.6))
    for rec in proc.records:
        np.testing.assert_allclose(rec.theta, THETA_HAT, atol=1e-10)


def test_two_step_collapses_to_one_step(fixed_preliminary):
    path = zero_innovation_path(100.0, learning_horizon(100.0, 0.4))
    two = two_step_process(path, Y01, DOM, EstimationConfig(0.4, method="two-step"))
    for rec in two.records:
        np.testing.assert_allclose(rec.theta_first, THETA_HAT, atol=1e-10)
        np.testing.assert_allclose(rec.theta, rec.theta_first, atol=1e-10)


def test_frozen_filter_gives_singular_gram():
    # constant increments: the moment equation has no root, theta_hat =
    # (c0 + c1) (c, 1 - c), whose stationary filter predicts c exactly, so
    # pi never moves and mdot keeps one direction
    path = ObservationPath(0.01, 100.0, np.full(10_000, 0.3 * 0.01))
    with pytest.raises(EstimationError, match=r"t=25\.0"):
        one_step_process(path, Y01, DOM)


def test_literal_and_gram_forms_agree(make_path):
    _, path = make_path(T=400, seed=3)
    proc = one_step_process(path, Y01, DOM)
    pre = proc.preliminary
    traj = run_filter_with_sensitivities((pre.lambda_hat, pre.mu_hat), Y01, path)
    t0 = proc.learning_horizon
    for rec in proc.records:
        I_t = empirical_fisher(traj, Y01, t0, rec.t)
        score = score_integral(traj, path, Y01, t0, rec.t)
        literal = pre.as_array() + np.linalg.inv(I_t) @ score / rec.t
        np.testing.assert_allclose(rec.theta, literal, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(rec.fisher, I_t, rtol=1e-13)


def test_information_is_monotone(make_path):
    _, path = make_path(T=200, seed=4)
    traj = run_filter_with_sensitivities((0.8, 1.5), Y01, path)
    cum = np.cumsum(gram_increments(traj, Y01), axis=0)
    for k1, k2 in ((100, 5000), (5000, 19999), (2000, 2001)):
        d = cum[k2] - cum[k1]
        assert np.linalg.eigvalsh([[d[0], d[1]], [d[1], d[2]]]).min() >= -1e-12


def test_single_sensitivity_pass(make_path, monkeypatch):
    calls = []
    real = mle.run_filter_with_sensitivities

    def counting(*a, **k):
        calls.append(a[0])
        return real(*a, **k)

    monkeypatch.setattr(mle, "run_filter_with_sensitivities", counting)
    _, path = make_path(T=300, seed=6)
    proc = one_step_process(path, Y01, DOM)
    assert len(calls) == 1 and proc.sensitivity_passes == 1
    calls.clear()
    proc = two_step_process(path, Y01, DOM, EstimationConfig.default_for("two-step"))
    assert len(calls) == 1 and proc.filter_passes == len(proc.records)


def test_translation_invariance(make_path):
    _, path = make_path(T=300, seed=7)
    c = -1.7
    for method, cfg in (("one", EstimationConfig(0.6)),
                        ("two", EstimationConfig(0.45, method="two-step"))):
        run = one_step_process if method == "one" else two_step_process
        a = run(path, Y01, DOM, cfg)
        b = run(path.shifted(c), Y01.shifted(c), DOM, cfg)
        for ra, rb in zip(a.records, b.records):
            np.testing.assert_allclose(ra.theta, rb.theta, atol=1e-10, rtol=1e-9)


def test_output_times_after_learning_horizon(make_path):
    _, path = make_path(T=100, seed=1)
    proc = one_step_process(path, Y01, DOM, EstimationConfig(0.9, output_taus=(0.25, 0.5, 1.0)))
    # T^0.9 = 63: tau = 0.25, 0.5 fall inside the learning interval
    assert proc.taus.tolist() == [1.0]


def test_standardized_process_zero_error():
    rec = [ProcessRecord(tau, tau * 100, np.array([1.0, 2.0]), np.eye(2)) for tau in (0.5, 1.0)]
    proc = EstimatorProcess("one-step", 100.0, 10, None, rec)
    for tau, eta in standardized_process(proc, ThetaParams(1, 2), np.array([[2.0, 0.5], [0.5, 1.0]])):
        np.testing.assert_array_equal(eta, 0.0)


def test_standardized_process_scaling():
    F = np.array([[2.0, 0.5], [0.5, 1.0]])
    rec = [ProcessRecord(0.5, 50.0, np.array([1.1, 2.0]), F)]
    proc = EstimatorProcess("one-step", 100.0, 10, None, rec)
    (_, eta), = standardized_process(proc, ThetaParams(1, 2), F)
    expect = 0.5 * 10 * sqrtm_spd(F, inverse=True) @ np.array([0.1, 0.0])
    np.testing.assert_allclose(eta, expect, rtol=1e-13)
    R = sqrtm_spd(F)
    np.testing.assert_allclose(R @ R, F, rtol=1e-13)
    rows = process_rows(proc)
    assert math.isnan(rows[0]["eta1"])
