"""One-step and two-step MLE-processes.

A preliminary method-of-moments estimate on the learning interval
``[0, T**delta]`` is improved by a Fisher-scoring step that uses the filter
and its sensitivities evaluated at that single preliminary value. The
two-step variant applies a second correction whose residuals come from the
filter at the first-step estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .filter import (
    gram_increments,
    run_filter,
    run_filter_with_sensitivities,
    score_increments,
)
from .model import ParameterDomain, StateSpace, ThetaParams
from .moments import MomentEstimate, estimate_moments
from .simulate import ObservationPath

DEFAULT_TAUS = (0.25, 0.5, 0.75, 1.0)
SINGULAR_RTOL = 1e-12
PROCESS_CSV_COLUMNS = ("tau", "t", "lambda_star", "mu_star", "i11", "i12", "i22", "eta1", "eta2")


class EstimationError(RuntimeError):
    pass


class ConfigError(ValueError):
    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


_DELTA_RANGES = {
    "one-step": (0.5, 1.0, False),  # open (1/2, 1)
    "two-step": (0.25, 0.5, True),  # (1/4, 1/2]
}


@dataclass(frozen=True)
class EstimationConfig:
    """Learning-interval exponent and output times for an MLE-process.

    ``delta`` must be in ``(1/2, 1)`` for the one-step process and in
    ``(1/4, 1/2]`` for the two-step process.
    """

    delta: float = 0.6
    output_taus: tuple[float, ...] = DEFAULT_TAUS
    method: str = "one-step"

    def __post_init__(self):
        if self.method not in _DELTA_RANGES:
            raise ConfigError(f"unknown method {self.method!r}", "method")
        lo, hi, closed = _DELTA_RANGES[self.method]
        d = float(self.delta)
        if not (lo < d < hi or (closed and d == hi)):
            bracket = "]" if closed else ")"
            raise ConfigError(
                f"delta={d} outside ({lo}, {hi}{bracket} for {self.method}", "delta"
            )
        taus = tuple(float(t) for t in self.output_taus)
        if not taus or any(not 0 < t <= 1 for t in taus):
            raise ConfigError("output_taus must be nonempty and lie in (0, 1]", "output_taus")
        object.__setattr__(self, "delta", d)
        object.__setattr__(self, "output_taus", tuple(sorted(set(taus))))

    @classmethod
    def default_for(cls, method: str, **kw) -> "EstimationConfig":
        delta = 0.6 if method == "one-step" else 0.4
        return cls(delta=kw.pop("delta", delta), method=method, **kw)


def learning_horizon(T: float, delta: float) -> int:
    """Integer learning horizon ``floor(T**delta)`` (at least 1)."""
    # guard against T**delta landing a hair below an integer
    return max(1, int(math.floor(T**delta + 1e-9)))


@dataclass(frozen=True)
class ProcessRecord:
    tau: float
    t: float
    theta: np.ndarray
    fisher: np.ndarray
    theta_first: np.ndarray | None = None  # one-step value behind a two-step record


@dataclass
class EstimatorProcess:
    method: str
    horizon: float
    learning_horizon: float
    preliminary: MomentEstimate
    records: list[ProcessRecord] = field(default_factory=list)
    sensitivity_passes: int = 0
    filter_passes: int = 0

    @property
    def taus(self) -> np.ndarray:
        return np.array([r.tau for r in self.records])

    def final(self) -> ProcessRecord:
        return self.records[-1]

    def at(self, tau: float) -> ProcessRecord:
        for r in self.records:
            if abs(r.tau - tau) < 1e-12:
                return r
        raise KeyError(tau)


def _output_indices(path: ObservationPath, k0: int, taus) -> list[tuple[float, int]]:
    out = []
    for tau in taus:
        k = round(tau * path.horizon / path.step)
        if k > k0:
            out.append((tau, k))
    if not out:
        raise ConfigError(
            f"no output time lies after the learning horizon {k0 * path.step}", "output_taus"
        )
    return out


def _solve_update(gram_sum: np.ndarray, score: np.ndarray, t: float) -> np.ndarray:
    g11, g12, g22 = gram_sum
    G = np.array([[g11, g12], [g12, g22]])
    det = g11 * g22 - g12 * g12
    tr = g11 + g22
    if not (tr > 0 and det > SINGULAR_RTOL * tr * tr):
        raise EstimationError(f"accumulated Gram matrix is singular at t={t}")
    return np.linalg.solve(G, score)


def _first_stage(path, states, domain, config):
    T = path.horizon
    t_learn = learning_horizon(T, config.delta)
    if t_learn >= T:
        raise ConfigError(f"learning horizon {t_learn} >= T={T}", "delta")
    prelim = estimate_moments(path.truncated(t_learn), states, domain)
    theta_hat = (prelim.lambda_hat, prelim.mu_hat)
    traj = run_filter_with_sensitivities(theta_hat, states, path)
    k0 = path.index_of(t_learn)
    outputs = _output_indices(path, k0, config.output_taus)

    gram_cum = np.cumsum(gram_increments(traj, states)[k0:], axis=0)
    score_cum = np.cumsum(score_increments(traj, path, states)[k0:], axis=0)
    base = prelim.as_array()
    stage = []
    for tau, k in outputs:
        t = k * path.step
        G = gram_cum[k - k0 - 1]
        theta = base + _solve_update(G, score_cum[k - k0 - 1], t)
        fisher = np.array([[G[0], G[1]], [G[1], G[2]]]) / t
        stage.append((tau, k, theta, G, fisher))
    return prelim, traj, k0, t_learn, stage


def one_step_process(path: ObservationPath, states: StateSpace, domain: ParameterDomain,
                     config: EstimationConfig | None = None) -> EstimatorProcess:
    """Fisher-scoring improvement of the learning-interval moment estimate.

    At each output time ``t``

        theta*_t = theta_hat + (sum mdot mdot^T h)^{-1} sum mdot (dX - m h)

    with both sums over ``[T**delta, t)`` and ``m``, ``mdot`` from a single
    filter pass at ``theta_hat``.
    """
    config = config or EstimationConfig()
    if config.method != "one-step":
        config = EstimationConfig(config.delta, config.output_taus, "one-step")
    prelim, _, _, t_learn, stage = _first_stage(path, states, domain, config)
    proc = EstimatorProcess("one-step", path.horizon, t_learn, prelim,
                            sensitivity_passes=1)
    for tau, k, theta, _, fisher in stage:
        proc.records.append(ProcessRecord(tau, k * path.step, theta, fisher))
    return proc


def two_step_process(path: ObservationPath, states: StateSpace, domain: ParameterDomain,
                     config: EstimationConfig | None = None) -> EstimatorProcess:
    """Second scoring correction on top of the one-step process.

    The correction keeps the sensitivities and Gram matrix at the preliminary
    value but takes residuals ``dX - m(theta*_t) h``, which requires one extra
    filter pass over ``[0, t]`` per output time.
    """
    config = config or EstimationConfig.default_for("two-step")
    if config.method != "two-step":
        raise ConfigError("two_step_process needs a two-step config", "method")
    prelim, traj, k0, t_learn, stage = _first_stage(path, states, domain, config)
    proc = EstimatorProcess("two-step", path.horizon, t_learn, prelim,
                            sensitivity_passes=1)
    n = path.n_steps
    for tau, k, theta1, G, fisher in stage:
        t = k * path.step
        resid = run_filter(tuple(theta1), states, path.truncated(t))
        proc.filter_passes += 1
        pi_resid = np.concatenate((resid.pi, np.full(n + 1 - resid.pi.size, np.nan)))
        score2 = score_increments(traj, path, states, residual_pi=pi_resid)[k0:k].sum(axis=0)
        theta2 = theta1 + _solve_update(G, score2, t)
        proc.records.append(ProcessRecord(tau, t, theta2, fisher, theta_first=theta1))
    return proc


def sqrtm_spd(matrix: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Symmetric square root (or inverse square root) of an SPD matrix."""
    m = np.asarray(matrix, dtype=float)
    if m.shape != (2, 2) or not np.allclose(m, m.T, rtol=1e-10, atol=1e-14):
        raise ValueError("expected a symmetric 2x2 matrix")
    w, v = np.linalg.eigh(m)
    if np.any(w <= 0):
        raise ValueError(f"matrix is not positive definite (eigenvalues {w})")
    d = w ** (-0.5 if inverse else 0.5)
    return (v * d) @ v.T


def standardized_process(proc: EstimatorProcess, theta0: ThetaParams,
                         fisher_ref: np.ndarray) -> list[tuple[float, np.ndarray]]:
    """``eta_T(tau) = tau sqrt(T) I^{-1/2} (theta*(tau) - theta0)``."""
    root_inv = sqrtm_spd(fisher_ref, inverse=True)
    scale = math.sqrt(proc.horizon)
    t0 = theta0.as_array()
    return [(r.tau, r.tau * scale * root_inv @ (r.theta - t0)) for r in proc.records]


def process_rows(proc: EstimatorProcess, theta0: ThetaParams | None = None,
                 fisher_ref: np.ndarray | None = None) -> list[dict]:
    """Rows for the process CSV; ``eta`` columns are NaN without a reference."""
    etas = {}
    if theta0 is not None and fisher_ref is not None:
        etas = dict((tau, e) for tau, e in standardized_process(proc, theta0, fisher_ref))
    rows = []
    for r in proc.records:
        e = etas.get(r.tau, (math.nan, math.nan))
        rows.append({
            "tau": r.tau, "t": r.t,
            "lambda_star": r.theta[0], "mu_star": r.theta[1],
            "i11": r.fisher[0, 0], "i12": r.fisher[0, 1], "i22": r.fisher[1, 1],
            "eta1": e[0], "eta2": e[1],
        })
    return rows
