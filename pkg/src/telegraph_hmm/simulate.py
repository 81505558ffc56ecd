"""Exact simulation of the telegraph signal and its noisy observations.

The hidden signal is generated from exponential holding times, so the only
discretisation happens when the drift ``Y`` is integrated over each grid cell
(which is done exactly) and a Gaussian increment is added.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelSpec, StateSpace, stationary_distribution


class GridError(ValueError):
    """Horizon and step size are incompatible."""


def grid_size(horizon: float, step: float) -> int:
    """Number of grid cells ``T / h``; raises unless it is an integer."""
    if not (step > 0 and horizon > 0):
        raise GridError(f"need T > 0 and h > 0, got T={horizon}, h={step}")
    n = round(horizon / step)
    if n < 1 or abs(n * step - horizon) > 1e-9 * max(1.0, horizon):
        raise GridError(f"step h={step} does not divide horizon T={horizon}")
    return int(n)


@dataclass(frozen=True)
class EventPath:
    """A realisation of the telegraph signal on ``[0, horizon]``.

    ``initial_state`` is 1 or 2; the state flips at each entry of
    ``jump_times``.
    """

    initial_state: int
    jump_times: np.ndarray
    horizon: float

    def __post_init__(self):
        if self.initial_state not in (1, 2):
            raise ValueError(f"initial_state must be 1 or 2, got {self.initial_state}")
        jumps = np.asarray(self.jump_times, dtype=float)
        if jumps.size:
            if np.any(np.diff(jumps) <= 0):
                raise ValueError("jump_times must be strictly increasing")
            if jumps[0] <= 0 or jumps[-1] > self.horizon:
                raise ValueError("jump_times must lie in (0, horizon]")
        object.__setattr__(self, "jump_times", jumps)

    def state_at(self, t) -> np.ndarray:
        """State index (1 or 2) at time(s) ``t`` (right-continuous)."""
        k = np.searchsorted(self.jump_times, np.asarray(t, dtype=float), side="right")
        flip = k % 2 == 1
        other = 3 - self.initial_state
        return np.where(flip, other, self.initial_state)

    def occupation_y1(self, t) -> np.ndarray:
        """Time spent in state 1 during ``[0, t]``."""
        knots = np.concatenate(([0.0], self.jump_times, [self.horizon]))
        seg = np.diff(knots)
        in1 = np.arange(seg.size) % 2 == (0 if self.initial_state == 1 else 1)
        cum = np.concatenate(([0.0], np.cumsum(np.where(in1, seg, 0.0))))
        return np.interp(np.asarray(t, dtype=float), knots, cum)


@dataclass(frozen=True)
class ObservationPath:
    """Observation increments ``dX_k = X((k+1)h) - X(kh)`` on a uniform grid."""

    step: float
    horizon: float
    increments: np.ndarray
    x0: float = 0.0
    hidden_integrals: np.ndarray | None = None

    def __post_init__(self):
        n = grid_size(self.horizon, self.step)
        inc = np.asarray(self.increments, dtype=float)
        if inc.shape != (n,):
            raise GridError(f"expected {n} increments for T/h, got shape {inc.shape}")
        object.__setattr__(self, "increments", inc)
        if self.hidden_integrals is not None:
            hid = np.asarray(self.hidden_integrals, dtype=float)
            if hid.shape != inc.shape:
                raise GridError("hidden_integrals must match increments")
            object.__setattr__(self, "hidden_integrals", hid)

    @property
    def n_steps(self) -> int:
        return self.increments.size

    @property
    def times(self) -> np.ndarray:
        """Left endpoints ``k h`` of the grid cells."""
        return np.arange(self.n_steps) * self.step

    def values(self) -> np.ndarray:
        """``X`` at all ``n_steps + 1`` grid points."""
        return self.x0 + np.concatenate(([0.0], np.cumsum(self.increments)))

    def index_of(self, t: float) -> int:
        """Grid index of time ``t``; ``t`` must fall on the grid."""
        k = round(t / self.step)
        if abs(k * self.step - t) > 1e-9 * max(1.0, t) or not 0 <= k <= self.n_steps:
            raise GridError(f"time {t} is not a grid point of step {self.step}")
        return int(k)

    def truncated(self, t: float) -> "ObservationPath":
        """The path restricted to ``[0, t]``."""
        k = self.index_of(t)
        hid = None if self.hidden_integrals is None else self.hidden_integrals[:k]
        return ObservationPath(self.step, k * self.step, self.increments[:k], self.x0, hid)

    def shifted(self, c: float) -> "ObservationPath":
        """Path of the drift-translated model ``Y + c``."""
        hid = None if self.hidden_integrals is None else self.hidden_integrals + c * self.step
        return ObservationPath(
            self.step, self.horizon, self.increments + c * self.step, self.x0, hid
        )


def simulate_telegraph(model: ModelSpec, horizon: float, rng: np.random.Generator) -> EventPath:
    """Draw a stationary telegraph path on ``[0, horizon]``."""
    horizon = float(horizon)
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    lam, mu = model.theta.lam, model.theta.mu
    p1, _ = stationary_distribution(model.theta)
    state = 1 if rng.random() < p1 else 2
    # rates alternate starting from the initial state
    rates = (lam, mu) if state == 1 else (mu, lam)
    mean_jumps = horizon * 2 * lam * mu / (lam + mu)
    chunk = int(mean_jumps + 5 * np.sqrt(mean_jumps) + 16)

    times = []
    t_last = 0.0
    n_done = 0
    while True:
        k = np.arange(n_done, n_done + chunk)
        scale = np.where(k % 2 == 0, 1.0 / rates[0], 1.0 / rates[1])
        hold = rng.exponential(scale)
        cum = t_last + np.cumsum(hold)
        keep = cum[cum <= horizon]
        times.append(keep)
        if keep.size < chunk:
            break
        t_last = cum[-1]
        n_done += chunk
    jumps = np.concatenate(times) if times else np.empty(0)
    return EventPath(initial_state=state, jump_times=jumps, horizon=horizon)


def integrate_hidden(path: EventPath, states: StateSpace, step: float) -> np.ndarray:
    """Exact integrals of ``Y`` over each grid cell ``[kh, (k+1)h]``."""
    n = grid_size(path.horizon, step)
    grid = np.arange(n + 1) * step
    grid[-1] = path.horizon
    occ = np.diff(path.occupation_y1(grid))
    cell = np.diff(grid)
    occ = np.clip(occ, 0.0, cell)
    return states.y2 * cell + (states.y1 - states.y2) * occ


def simulate_observations(
    path: EventPath,
    states: StateSpace,
    step: float,
    rng: np.random.Generator,
    keep_hidden: bool = True,
    x0: float = 0.0,
) -> ObservationPath:
    """Add independent ``N(0, h)`` noise to the exact drift integrals."""
    drift = integrate_hidden(path, states, step)
    noise = rng.standard_normal(drift.size) * np.sqrt(step)
    return ObservationPath(
        step=step,
        horizon=path.horizon,
        increments=drift + noise,
        x0=x0,
        hidden_integrals=drift if keep_hidden else None,
    )


def simulate_path(
    model: ModelSpec,
    horizon: float,
    step: float,
    rng: np.random.Generator,
    keep_hidden: bool = True,
) -> tuple[EventPath, ObservationPath]:
    """Convenience wrapper: hidden path and observations from one generator."""
    grid_size(horizon, step)
    events = simulate_telegraph(model, horizon, rng)
    obs = simulate_observations(events, model.states, step, rng, keep_hidden=keep_hidden)
    return events, obs
