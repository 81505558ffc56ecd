"""Euler scheme for the conditional probability filter and its sensitivities.

All recursions are written in innovation form,
``b * pi * (1 - pi) * (dX - m h)`` with ``m = y2 + b pi`` and ``b = y1 - y2``,
which is algebraically identical to the drift/diffusion split and keeps the
output invariant under a common shift of ``(y1, y2)`` and the drift of ``dX``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .model import StateSpace, ThetaParams
from .simulate import ObservationPath

CLAMP_EPS = 1e-9


class FilterError(RuntimeError):
    def __init__(self, message: str, step_index: int | None = None):
        super().__init__(message)
        self.step_index = step_index


@numba.njit(cache=True)
def _pi_kernel(lam, mu, y1, y2, dx, h, pi0, eps):
    n = dx.size
    b = y1 - y2
    pi = np.empty(n + 1)
    pi[0] = pi0
    clamped = 0
    p = pi0
    for k in range(n):
        d = dx[k]
        if not np.isfinite(d):
            return pi, clamped, k
        m = y2 + b * p
        p = p + (mu - (lam + mu) * p) * h + b * p * (1.0 - p) * (d - m * h)
        if p < eps:
            p = eps
            clamped += 1
        elif p > 1.0 - eps:
            p = 1.0 - eps
            clamped += 1
        pi[k + 1] = p
    return pi, clamped, -1


@numba.njit(cache=True)
def _sens_kernel(lam, mu, y1, y2, dx, h, pi0, eps):
    n = dx.size
    b = y1 - y2
    a = lam + mu
    pi = np.empty(n + 1)
    dl = np.empty(n + 1)
    dm = np.empty(n + 1)
    pi[0] = pi0
    dl[0] = 0.0
    dm[0] = 0.0
    p = pi0
    u = 0.0
    v = 0.0
    clamped = 0
    for k in range(n):
        d = dx[k]
        if not np.isfinite(d):
            return pi, dl, dm, clamped, k
        m = y2 + b * p
        innov = d - m * h
        q = p * (1.0 - p)
        damp = (a + b * b * q) * h
        gain = b * (1.0 - 2.0 * p) * innov
        u_new = u - p * h - u * damp + u * gain
        v_new = v + (1.0 - p) * h - v * damp + v * gain
        p = p + (mu - a * p) * h + b * q * innov
        if p < eps:
            p = eps
            clamped += 1
        elif p > 1.0 - eps:
            p = 1.0 - eps
            clamped += 1
        u = u_new
        v = v_new
        pi[k + 1] = p
        dl[k + 1] = u
        dm[k + 1] = v
    return pi, dl, dm, clamped, -1


@numba.njit(cache=True)
def _loglik_kernel(lams, mus, y1, y2, dx, h, pi0s, eps):
    # time-outer / parameter-inner so the path is streamed once
    n = dx.size
    g = lams.size
    b = y1 - y2
    p = pi0s.copy()
    out = np.zeros(g)
    quad = np.zeros(g)
    for k in range(n):
        d = dx[k]
        for j in range(g):
            pj = p[j]
            m = y2 + b * pj
            out[j] += m * d
            quad[j] += m * m
            pj = pj + (mus[j] - (lams[j] + mus[j]) * pj) * h + b * pj * (1.0 - pj) * (d - m * h)
            if pj < eps:
                pj = eps
            elif pj > 1.0 - eps:
                pj = 1.0 - eps
            p[j] = pj
    return out - 0.5 * h * quad


def _check_clamped(result, n):
    *arrays, clamped, bad = result
    if bad >= 0:
        raise FilterError(f"non-finite observation increment at step {bad}", bad)
    return arrays, clamped


@dataclass(frozen=True)
class FilterTrajectory:
    """Filter output at the ``n + 1`` grid points ``0, h, ..., T``.

    ``dpi_dlambda`` and ``dpi_dmu`` are ``None`` for a plain filter run.
    """

    step: float
    pi: np.ndarray
    theta_used: tuple[float, float]
    dpi_dlambda: np.ndarray | None = None
    dpi_dmu: np.ndarray | None = None
    n_clamped: int = 0

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.pi.size) * self.step

    @property
    def has_sensitivities(self) -> bool:
        return self.dpi_dlambda is not None

    @property
    def clamp_rate(self) -> float:
        return self.n_clamped / max(1, self.pi.size - 1)


def conditional_mean(pi, states: StateSpace):
    """Filtered drift ``y2 + (y1 - y2) pi``."""
    arr = np.asarray(pi, dtype=float)
    if np.any((arr < 0) | (arr > 1)) or np.any(np.isnan(arr)):
        raise ValueError("pi must lie in [0, 1]")
    out = states.y2 + states.b * arr
    return float(out) if out.ndim == 0 else out


def _theta_pair(theta) -> tuple[float, float]:
    if isinstance(theta, ThetaParams):
        return theta.lam, theta.mu
    lam, mu = theta
    return float(lam), float(mu)


def _initial_pi(lam, mu, pi0):
    if pi0 is None or (isinstance(pi0, str) and pi0 == "stationary"):
        a = lam + mu
        return mu / a if a > 0 else 0.5
    pi0 = float(pi0)
    if not 0 <= pi0 <= 1:
        raise ValueError(f"pi0 must be in [0, 1], got {pi0}")
    return pi0


def run_filter(theta, states: StateSpace, path: ObservationPath, pi0="stationary",
               eps: float = CLAMP_EPS) -> FilterTrajectory:
    """Integrate the conditional probability ``pi(t) = P(Y(t) = y1 | X^t)``.

    ``theta`` is a :class:`ThetaParams` or a raw ``(lambda, mu)`` pair; the
    latter lets estimators evaluate the filter at preliminary values that
    fall outside the admissible domain.
    """
    lam, mu = _theta_pair(theta)
    p0 = _initial_pi(lam, mu, pi0)
    (pi,), clamped = _check_clamped(
        _pi_kernel(lam, mu, states.y1, states.y2, path.increments, path.step, p0, eps),
        path.n_steps,
    )
    return FilterTrajectory(step=path.step, pi=pi, theta_used=(lam, mu), n_clamped=clamped)


def run_filter_with_sensitivities(theta, states: StateSpace, path: ObservationPath,
                                  pi0="stationary", eps: float = CLAMP_EPS) -> FilterTrajectory:
    """Filter plus the derivatives of ``pi`` with respect to ``lambda`` and ``mu``.

    The sensitivities start at zero and are driven by the same increments; the
    update is the exact derivative of the Euler step for ``pi`` (away from the
    clamp).
    """
    lam, mu = _theta_pair(theta)
    p0 = _initial_pi(lam, mu, pi0)
    (pi, dl, dm), clamped = _check_clamped(
        _sens_kernel(lam, mu, states.y1, states.y2, path.increments, path.step, p0, eps),
        path.n_steps,
    )
    return FilterTrajectory(step=path.step, pi=pi, theta_used=(lam, mu),
                            dpi_dlambda=dl, dpi_dmu=dm, n_clamped=clamped)


def _window(step: float, n: int, t0: float, t: float) -> tuple[int, int]:
    k0 = round(t0 / step)
    k1 = round(t / step)
    for tt, kk in ((t0, k0), (t, k1)):
        if abs(kk * step - tt) > 1e-9 * max(1.0, tt) or not 0 <= kk <= n:
            raise ValueError(f"time {tt} is not on the grid [0, {n * step}] of step {step}")
    if k1 <= k0:
        raise ValueError(f"empty window [{t0}, {t})")
    return k0, k1


def mdot(traj: FilterTrajectory, states: StateSpace) -> np.ndarray:
    """Parameter gradient of the filtered drift, shape ``(n + 1, 2)``."""
    if not traj.has_sensitivities:
        raise ValueError("trajectory was computed without sensitivities")
    return states.b * np.column_stack((traj.dpi_dlambda, traj.dpi_dmu))


def gram_increments(traj: FilterTrajectory, states: StateSpace) -> np.ndarray:
    """Per-cell contributions ``mdot mdot^T h`` as an ``(n, 3)`` array of
    ``(11, 12, 22)`` entries evaluated at left endpoints."""
    g = mdot(traj, states)[:-1]
    h = traj.step
    return np.column_stack((g[:, 0] ** 2, g[:, 0] * g[:, 1], g[:, 1] ** 2)) * h


def score_increments(traj: FilterTrajectory, path: ObservationPath, states: StateSpace,
                     residual_pi: np.ndarray | None = None) -> np.ndarray:
    """Per-cell contributions ``mdot (dX - m h)``, shape ``(n, 2)``.

    ``residual_pi`` swaps in a different filter for the drift ``m``; used by
    the two-step update, which mixes sensitivities and residuals evaluated at
    different parameters.
    """
    g = mdot(traj, states)[:-1]
    pi = traj.pi if residual_pi is None else residual_pi
    m = states.y2 + states.b * pi[: path.n_steps]
    innov = path.increments - m * path.step
    return g * innov[:, None]


def _sym(v11, v12, v22) -> np.ndarray:
    return np.array([[v11, v12], [v12, v22]])


def empirical_fisher(traj: FilterTrajectory, states: StateSpace, t0: float, t: float) -> np.ndarray:
    """``(1/t) * sum mdot mdot^T h`` over grid cells in ``[t0, t)``.

    The divisor is ``t`` (not ``t - t0``); see the one-step estimator, where
    the normalisation cancels.
    """
    k0, k1 = _window(traj.step, traj.pi.size - 1, t0, t)
    s = gram_increments(traj, states)[k0:k1].sum(axis=0)
    return _sym(*s) / t


def score_integral(traj: FilterTrajectory, path: ObservationPath, states: StateSpace,
                   t0: float, t: float) -> np.ndarray:
    """Left-point sum of ``mdot (dX - m ds)`` over ``[t0, t)``."""
    k0, k1 = _window(traj.step, path.n_steps, t0, t)
    return score_increments(traj, path, states)[k0:k1].sum(axis=0)


def log_likelihood(theta, states: StateSpace, path: ObservationPath, t: float | None = None,
                   pi0="stationary") -> float:
    """``sum m dX - 0.5 sum m^2 h`` over ``[0, t)`` (log of the likelihood ratio
    against the zero-drift reference)."""
    n = path.n_steps
    k1 = n if t is None else _window(path.step, n, 0.0, t)[1]
    traj = run_filter(theta, states, path, pi0=pi0)
    m = states.y2 + states.b * traj.pi[:k1]
    dx = path.increments[:k1]
    return float(np.sum(m * dx) - 0.5 * path.step * np.sum(m * m))


def log_likelihood_grid(lams, mus, states: StateSpace, path: ObservationPath,
                        eps: float = CLAMP_EPS) -> np.ndarray:
    """Log-likelihoods over the full path for many ``(lambda, mu)`` pairs."""
    lams = np.ascontiguousarray(lams, dtype=float).ravel()
    mus = np.ascontiguousarray(mus, dtype=float).ravel()
    if lams.shape != mus.shape:
        raise ValueError("lams and mus must have the same size")
    pi0s = mus / (lams + mus)
    return _loglik_kernel(lams, mus, states.y1, states.y2, path.increments, path.step, pi0s, eps)
