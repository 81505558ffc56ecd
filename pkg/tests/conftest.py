import numpy as np
import pytest

from telegraph_hmm.model import ModelSpec, ParameterDomain, StateSpace, ThetaParams
from telegraph_hmm.simulate import simulate_path


@pytest.fixture
def default_spec():
    return ModelSpec(ThetaParams(1.0, 1.0), StateSpace(0.0, 1.0), ParameterDomain(0.1, 5.0))


@pytest.fixture
def make_path(default_spec):
    def _make(T=100.0, h=0.01, seed=0, spec=None, keep_hidden=True):
        rng = np.random.default_rng(seed)
        return simulate_path(spec or default_spec, T, h, rng, keep_hidden=keep_hidden)
    return _make


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
