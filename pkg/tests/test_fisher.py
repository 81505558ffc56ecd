import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from telegraph_hmm.fisher import (
    density_moment,
    fisher_by_ergodic_average,
    fisher_from_path,
    invariant_density,
    log_normalizing_constant,
)
from telegraph_hmm.model import ModelSpec, ParameterDomain, StateSpace, ThetaParams
from telegraph_hmm.simulate import simulate_path

from oracles import gauss_density_mass

Y01 = StateSpace(0.0, 1.0)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.3, 4.0), st.floats(0.3, 4.0))
def test_density_label_symmetry(lam, mu):
    f = invariant_density(ThetaParams(lam, mu), Y01)
    g = invariant_density(ThetaParams(mu, lam), Y01)
    x = np.linspace(0.02, 0.98, 49)
    np.testing.assert_allclose(f.pdf(x), g.pdf(1 - x), rtol=1e-10, atol=1e-12)


def test_symmetric_rates_give_symmetric_density():
    f = invariant_density(ThetaParams(1.7, 1.7), StateSpace(0.0, 1.5))
    x = np.linspace(0.01, 0.49, 30)
    np.testing.assert_allclose(f.pdf(x), f.pdf(1 - x), rtol=1e-12)


@pytest.mark.parametrize("lam,mu", [(1, 1), (1, 3), (3, 1), (0.5, 2.0)])
def test_normalization_and_mean(lam, mu):
    f = invariant_density(ThetaParams(lam, mu), Y01)
    assert abs(f.mass(0.0, 1.0) - 1.0) < 1e-8
    assert abs(gauss_density_mass(f.logpdf) - 1.0) < 1e-6
    assert density_moment(f, 1) == pytest.approx(mu / (lam + mu), abs=1e-6)


@pytest.mark.parametrize("lam,mu,b", [(1, 1, 1), (1, 3, 1), (2, 0.5, 0.6)])
def test_node_doubling(lam, mu, b):
    th, y = ThetaParams(lam, mu), StateSpace(0.0, b)
    a = log_normalizing_constant(th, y, nodes=200)
    c = log_normalizing_constant(th, y, nodes=400)
    assert abs(a - c) < 1e-10
    assert abs(c - log_normalizing_constant(th, y)) < 1e-10


def test_density_rejects_boundary():
    f = invariant_density(ThetaParams(1, 1), Y01)
    with pytest.raises(ValueError):
        f.pdf(0.0)
    x, v = f.table(9)
    assert x.tolist() == [k / 10 for k in range(1, 10)] and np.all(v > 0)


def test_fisher_translation_invariance():
    spec = ModelSpec(ThetaParams(1, 1), Y01, ParameterDomain(0.1, 5))
    _, path = simulate_path(spec, 500, 0.01, np.random.default_rng(0), keep_hidden=False)
    a = fisher_from_path(spec.theta, Y01, path)
    b = fisher_from_path(spec.theta, Y01.shifted(3.0), path.shifted(3.0))
    np.testing.assert_allclose(a.matrix, b.matrix, rtol=1e-8)


def test_ergodic_fisher_split_halves():
    fi = fisher_by_ergodic_average(ThetaParams(1, 1), Y01, 1e4, 0.01, np.random.default_rng(1))
    assert np.array_equal(fi.matrix, fi.matrix.T)
    assert fi.eigenvalues.min() > 1e-3
    assert fi.split_half_discrepancy() < 0.1
