"""Method-of-moments estimator of the switching rates.

The estimator matches the mean square of unit-interval increments and the
terminal average ``X_T / T`` against their stationary expectations. The total
rate ``lambda + mu`` is recovered from the root of a monotone equation in
:func:`phi`; the split between the two rates comes from ``X_T / T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import bisect

from .model import ParameterDomain, StateSpace
from .simulate import GridError, ObservationPath

PHI_SERIES_CUTOFF = 1.0
_SERIES_TERMS = 30
_SERIES_COEF = np.array([(-1.0) ** k / math.factorial(k + 2) for k in range(_SERIES_TERMS)])
ALPHA_XTOL = 1e-12


def phi(x):
    """``1/x - (1 - exp(-x)) / x**2`` for ``x > 0``.

    Strictly decreasing from 1/2 at ``0+`` to 0 at infinity. Below
    ``PHI_SERIES_CUTOFF`` the Taylor series ``sum (-x)^k / (k+2)!`` is used
    to avoid cancellation.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError("phi is defined for x > 0 only")
    small = arr < PHI_SERIES_CUTOFF
    out = np.empty_like(arr)
    xs = arr[small]
    # Horner on the alternating series
    acc = np.zeros_like(xs)
    for c in _SERIES_COEF[::-1]:
        acc = acc * xs + c
    out[small] = acc
    xl = arr[~small]
    out[~small] = (xl + np.expm1(-xl)) / xl**2
    return float(out) if out.ndim == 0 else out


def unit_increments(path: ObservationPath) -> np.ndarray:
    """Increments ``X_{i+1} - X_i`` over unit intervals.

    Requires an integer horizon and an integer number of steps per unit.
    """
    T = path.horizon
    per_unit = round(1.0 / path.step)
    if abs(T - round(T)) > 1e-9 or round(T) < 1:
        raise GridError(
            f"moment estimator needs an integer horizon T (unit-interval sums of X); got T={T}"
        )
    if per_unit < 1 or abs(per_unit * path.step - 1.0) > 1e-9:
        raise GridError(
            f"moment estimator needs 1/h to be an integer; got h={path.step}"
        )
    return path.increments.reshape(round(T), per_unit).sum(axis=1)


def zeta(path: ObservationPath) -> float:
    """Mean square of unit-interval increments minus one."""
    u = unit_increments(path)
    return float(np.mean(u * u) - 1.0)


def terminal_average(path: ObservationPath) -> float:
    """``(X_T - X_0) / T`` accumulated from unit-interval increments."""
    u = unit_increments(path)
    return float(u.sum() / u.size)


def eta_floor(domain: ParameterDomain) -> float:
    return domain.c0**2 / (8 * domain.c1**2)


def eta(path: ObservationPath, states: StateSpace, domain: ParameterDomain) -> tuple[float, float]:
    """Raw and floored estimates of the stationary variance of ``Y``."""
    xbar = terminal_average(path)
    raw = (xbar - states.y1) * (states.y2 - xbar)
    return raw, max(raw, eta_floor(domain))


def _eta_from_average(xbar, states, domain):
    raw = (xbar - states.y1) * (states.y2 - xbar)
    return raw, max(raw, eta_floor(domain))


def solve_alpha(zeta_value: float, eta_clamped: float, terminal_avg: float,
                domain: ParameterDomain, xtol: float = ALPHA_XTOL) -> float | None:
    """Root of ``phi(alpha) = (zeta - xbar**2) / (2 eta)`` on ``[2 c0, 2 c1]``.

    Returns ``None`` when the target lies outside ``phi``'s range on that
    interval (the no-solution event).
    """
    if not eta_clamped > 0:
        raise ValueError(f"eta_clamped must be positive, got {eta_clamped}")
    lo, hi = 2 * domain.c0, 2 * domain.c1
    r = (zeta_value - terminal_avg**2) / (2 * eta_clamped)
    f_lo, f_hi = phi(lo), phi(hi)
    if not f_hi <= r <= f_lo:
        return None
    if r == f_lo:
        return lo
    if r == f_hi:
        return hi
    return bisect(lambda x: phi(x) - r, lo, hi, xtol=xtol, maxiter=200)


@dataclass(frozen=True)
class MomentStatistics:
    horizon: float
    step: float
    terminal_average: float
    zeta: float
    eta: float
    eta_clamped: float
    alpha: float | None
    beta: float

    @property
    def solvable(self) -> bool:
        return self.alpha is not None


@dataclass(frozen=True)
class MomentEstimate:
    lambda_hat: float
    mu_hat: float
    stats: MomentStatistics

    def as_array(self) -> np.ndarray:
        return np.array([self.lambda_hat, self.mu_hat])

    def csv_row(self) -> dict:
        s = self.stats
        return {
            "T": s.horizon, "h": s.step,
            "lambda_hat": self.lambda_hat, "mu_hat": self.mu_hat,
            "beta": s.beta, "zeta": s.zeta, "eta": s.eta,
            "eta_clamped": s.eta_clamped, "solvable": int(s.solvable),
        }


MOMENT_CSV_COLUMNS = ("T", "h", "lambda_hat", "mu_hat", "beta", "zeta", "eta", "eta_clamped", "solvable")


def estimate_moments(path: ObservationPath, states: StateSpace,
                     domain: ParameterDomain) -> MomentEstimate:
    """Method-of-moments estimate of ``(lambda, mu)`` from the whole path.

    If the root equation has no solution on ``[2 c0, 2 c1]``, the total rate
    falls back to ``c0 + c1``. The share ``(xbar - y1) / (y2 - y1)`` is
    clipped to ``[0, 1]`` so both rates stay nonnegative; their sum equals the
    total rate either way.
    """
    u = unit_increments(path)
    xbar = float(u.sum() / u.size)
    z = float(np.mean(u * u) - 1.0)
    raw, clamped = _eta_from_average(xbar, states, domain)
    alpha = solve_alpha(z, clamped, xbar, domain)
    beta = alpha if alpha is not None else domain.c0 + domain.c1
    share = min(max((xbar - states.y1) / (states.y2 - states.y1), 0.0), 1.0)
    stats = MomentStatistics(
        horizon=path.horizon, step=path.step, terminal_average=xbar, zeta=z,
        eta=raw, eta_clamped=clamped, alpha=alpha, beta=beta,
    )
    return MomentEstimate(lambda_hat=beta * share, mu_hat=beta * (1.0 - share), stats=stats)
