"""Stationary law of the filter and ergodic estimates of Fisher information.

At the true parameter the filter ``pi`` is an ergodic diffusion on ``(0, 1)``
with drift ``mu - (lambda + mu) x`` and diffusion ``b x (1 - x)``. Its
invariant density, up to normalisation, is

    [x (1-x)]^{-2} * (x / (1-x))^{g (mu - lambda)} * exp(-g mu / x - g lambda / (1-x))

with ``g = 2 / b**2``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .filter import gram_increments, run_filter, run_filter_with_sensitivities
from .model import ModelSpec, ParameterDomain, StateSpace, ThetaParams
from .simulate import simulate_path


class QuadratureError(RuntimeError):
    pass


def _log_unnormalized(x, lam, mu, gamma):
    x = np.asarray(x, dtype=float)
    return (gamma * (mu - lam) * (np.log(x) - np.log1p(-x))
            - 2.0 * (np.log(x) + np.log1p(-x))
            - gamma * mu / x - gamma * lam / (1.0 - x))


def _log_mapped(s, lam, mu, gamma):
    # x = logistic(s), dx = x(1-x) ds; written in s to keep both tails accurate
    s = np.asarray(s, dtype=float)
    log_x = -np.logaddexp(0.0, -s)
    log_1mx = -np.logaddexp(0.0, s)
    with np.errstate(over="ignore"):
        inv_x = 1.0 + np.exp(-s)
        inv_1mx = 1.0 + np.exp(s)
    return (gamma * (mu - lam) * s - (log_x + log_1mx)
            - gamma * mu * inv_x - gamma * lam * inv_1mx)


@dataclass(frozen=True)
class InvariantDensity:
    """Normalised stationary density of the filter at ``theta0``."""

    theta0: ThetaParams
    states: StateSpace
    gamma: float
    log_normalizer: float

    @property
    def normalizer(self) -> float:
        return math.exp(self.log_normalizer)

    def logpdf(self, x):
        arr = np.asarray(x, dtype=float)
        if np.any(~((arr > 0) & (arr < 1))):
            raise ValueError("density is supported on the open interval (0, 1)")
        out = _log_unnormalized(arr, self.theta0.lam, self.theta0.mu, self.gamma) - self.log_normalizer
        return float(out) if out.ndim == 0 else out

    def pdf(self, x):
        out = np.exp(self.logpdf(x))
        return float(out) if np.ndim(out) == 0 else out

    def mass(self, a: float, b: float) -> float:
        """Probability of ``(a, b)`` under the density."""
        lam, mu, g = self.theta0.lam, self.theta0.mu, self.gamma
        sa = -np.inf if a <= 0 else math.log(a) - math.log1p(-a)
        sb = np.inf if b >= 1 else math.log(b) - math.log1p(-b)
        val, _ = integrate.quad(
            lambda s: math.exp(_log_mapped(s, lam, mu, g) - self.log_normalizer),
            sa, sb, epsabs=1e-13, epsrel=1e-10, limit=200,
        )
        return val

    def table(self, n: int = 199) -> tuple[np.ndarray, np.ndarray]:
        x = np.arange(1, n + 1) / (n + 1)
        return x, self.pdf(x)


def _support(lam, mu, gamma, drop=80.0):
    """Interval in the logistic coordinate outside which the mapped
    integrand is below ``exp(-drop)`` of its peak."""
    f = lambda s: -_log_mapped(s, lam, mu, gamma)
    res = optimize.minimize_scalar(f, bracket=(-1.0, 1.0))
    s_mode = float(res.x)
    peak = -float(res.fun)
    lo = s_mode - 1.0
    while _log_mapped(lo, lam, mu, gamma) > peak - drop:
        lo -= 1.0 + abs(lo - s_mode)
    hi = s_mode + 1.0
    while _log_mapped(hi, lam, mu, gamma) > peak - drop:
        hi += 1.0 + abs(hi - s_mode)
    return s_mode, peak, lo, hi


def log_normalizing_constant(theta0: ThetaParams, states: StateSpace,
                             nodes: int | None = None) -> float:
    """Natural log of the normalising constant of the invariant density.

    The integral is taken in the logistic coordinate ``s = log(x / (1-x))``,
    where the essential singularities at 0 and 1 become double-exponential
    tails. ``nodes=None`` uses adaptive quadrature (relative tolerance
    1e-12); an integer selects a fixed Gauss-Legendre rule with that many
    nodes on the effective support.
    """
    lam, mu = theta0.lam, theta0.mu
    gamma = 2.0 / states.b**2
    s_mode, peak, lo, hi = _support(lam, mu, gamma)
    g = lambda s: np.exp(_log_mapped(s, lam, mu, gamma) - peak)
    if nodes is None:
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                val, err = integrate.quad(g, lo, hi, points=[s_mode],
                                          epsabs=0.0, epsrel=1e-12, limit=500)
            except integrate.IntegrationWarning as exc:
                raise QuadratureError(
                    f"normalizer quadrature failed for theta=({lam}, {mu}), "
                    f"b={states.b}, support=[{lo:.3g}, {hi:.3g}]: {exc}"
                ) from exc
    else:
        xg, wg = np.polynomial.legendre.leggauss(int(nodes))
        s = 0.5 * (hi - lo) * xg + 0.5 * (hi + lo)
        val = 0.5 * (hi - lo) * float(np.sum(wg * g(s)))
    if not (val > 0 and math.isfinite(val)):
        raise QuadratureError(f"normalizer integral is {val} for theta=({lam}, {mu})")
    return peak + math.log(val)


def normalizing_constant(theta0: ThetaParams, states: StateSpace,
                         nodes: int | None = None) -> float:
    return math.exp(log_normalizing_constant(theta0, states, nodes))


def invariant_density(theta0: ThetaParams, states: StateSpace) -> InvariantDensity:
    return InvariantDensity(
        theta0=theta0, states=states, gamma=2.0 / states.b**2,
        log_normalizer=log_normalizing_constant(theta0, states),
    )


def density_moment(den: InvariantDensity, power: int = 1) -> float:
    """``E[pi**power]`` under the invariant density."""
    lam, mu, g = den.theta0.lam, den.theta0.mu, den.gamma

    def integrand(s):
        log_x = -np.logaddexp(0.0, -s)
        return math.exp(_log_mapped(s, lam, mu, g) - den.log_normalizer + power * log_x)

    val, _ = integrate.quad(integrand, -np.inf, np.inf, epsabs=1e-14, epsrel=1e-12, limit=500)
    return val


def histogram_tv_distance(samples: np.ndarray, den: InvariantDensity, bins: int = 50) -> float:
    """Total-variation distance between a histogram of ``samples`` on
    ``bins`` equal cells of ``(0, 1)`` and the density's cell masses."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts, _ = np.histogram(samples, bins=edges)
    emp = counts / counts.sum()
    ref = np.array([den.mass(a, b) for a, b in zip(edges[:-1], edges[1:])])
    return 0.5 * float(np.abs(emp - ref).sum())


@dataclass(frozen=True)
class ErgodicFisher:
    """Time-averaged Gram matrix of the drift sensitivities at ``theta0``.

    ``halves`` holds the same average over the two disjoint halves of the
    post-burn-in window.
    """

    matrix: np.ndarray
    halves: tuple[np.ndarray, np.ndarray]
    horizon: float
    step: float
    burn_in: float

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    def split_half_discrepancy(self) -> float:
        """Largest entrywise relative gap between the two halves."""
        a, b = self.halves
        scale = np.maximum(np.abs(a), np.abs(b))
        return float(np.max(np.abs(a - b) / scale))


def _sym3(v) -> np.ndarray:
    return np.array([[v[0], v[1]], [v[1], v[2]]])


def fisher_from_path(theta0, states: StateSpace, path, burn_in: float = 0.1) -> ErgodicFisher:
    """Ergodic Fisher estimate from an already simulated path."""
    if not 0 <= burn_in < 1:
        raise ValueError(f"burn_in must be in [0, 1), got {burn_in}")
    traj = run_filter_with_sensitivities(theta0, states, path)
    inc = gram_increments(traj, states)
    k0 = int(round(burn_in * inc.shape[0]))
    window = inc[k0:]
    if window.shape[0] < 2:
        raise ValueError("averaging window is empty")
    mid = window.shape[0] // 2
    h = path.step
    full = _sym3(window.sum(axis=0)) / (window.shape[0] * h)
    first = _sym3(window[:mid].sum(axis=0)) / (mid * h)
    second = _sym3(window[mid:].sum(axis=0)) / ((window.shape[0] - mid) * h)
    return ErgodicFisher(full, (first, second), path.horizon, h, burn_in)


def fisher_by_ergodic_average(theta0: ThetaParams, states: StateSpace,
                              sim_horizon: float = 1e4, step: float = 0.01,
                              rng: np.random.Generator | None = None,
                              burn_in: float = 0.1,
                              domain: ParameterDomain | None = None) -> ErgodicFisher:
    """Simulate a long path at ``theta0`` and average ``mdot mdot^T``."""
    rng = rng if rng is not None else np.random.default_rng()
    if domain is None:
        lo = 0.5 * min(theta0.lam, theta0.mu)
        domain = ParameterDomain(lo, 2.0 * max(theta0.lam, theta0.mu) + 1.0)
    spec = ModelSpec(theta0, states, domain)
    _, path = simulate_path(spec, sim_horizon, step, rng, keep_hidden=False)
    return fisher_from_path(theta0, states, path, burn_in)


def filter_samples(theta0: ThetaParams, states: StateSpace, sim_horizon: float = 1e4,
                   step: float = 0.01, rng: np.random.Generator | None = None,
                   burn_in: float = 0.1) -> np.ndarray:
    """Filter values at ``theta0`` along a simulated path, burn-in dropped."""
    rng = rng if rng is not None else np.random.default_rng()
    lo = 0.5 * min(theta0.lam, theta0.mu)
    spec = ModelSpec(theta0, states, ParameterDomain(lo, 2.0 * max(theta0.lam, theta0.mu) + 1.0))
    _, path = simulate_path(spec, sim_horizon, step, rng, keep_hidden=False)
    pi = run_filter(theta0, states, path).pi
    return pi[int(round(burn_in * (pi.size - 1))):]
