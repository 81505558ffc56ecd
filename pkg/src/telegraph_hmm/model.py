"""Parametric model of a two-state telegraph signal observed in white noise.

The hidden signal ``Y(t)`` jumps between ``y1`` and ``y2``; it leaves ``y1``
at rate ``lambda`` and ``y2`` at rate ``mu``. Observations follow
``dX = Y dt + dW``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np


class ModelValidationError(ValueError):
    """Raised when a model component violates one of its constraints.

    ``field`` names the offending quantity so callers (the CLI in
    particular) can report it.
    """

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class ModelWarning(UserWarning):
    pass


def _finite(value, name):
    value = float(value)
    if not math.isfinite(value):
        raise ModelValidationError(f"{name} must be finite, got {value}", name)
    return value


@dataclass(frozen=True)
class ThetaParams:
    """Switching rates ``(lambda, mu)``, both strictly positive."""

    lam: float
    mu: float

    def __post_init__(self):
        lam = _finite(self.lam, "lambda")
        mu = _finite(self.mu, "mu")
        if lam <= 0:
            raise ModelValidationError(f"lambda must be > 0, got {lam}", "lambda")
        if mu <= 0:
            raise ModelValidationError(f"mu must be > 0, got {mu}", "mu")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "mu", mu)

    @property
    def total_rate(self) -> float:
        return self.lam + self.mu

    def as_array(self) -> np.ndarray:
        return np.array([self.lam, self.mu])


@dataclass(frozen=True)
class StateSpace:
    """The two drift levels of the hidden signal."""

    y1: float
    y2: float

    def __post_init__(self):
        y1 = _finite(self.y1, "y1")
        y2 = _finite(self.y2, "y2")
        if y1 == y2:
            raise ModelValidationError(
                f"degenerate state space: y1 == y2 == {y1}", "y1"
            )
        object.__setattr__(self, "y1", y1)
        object.__setattr__(self, "y2", y2)

    @property
    def b(self) -> float:
        """Signed level gap ``y1 - y2``."""
        return self.y1 - self.y2

    def shifted(self, c: float) -> "StateSpace":
        return StateSpace(self.y1 + c, self.y2 + c)


@dataclass(frozen=True)
class ParameterDomain:
    """Open box ``(c0, c1) x (c0, c1)`` of admissible rates."""

    c0: float
    c1: float

    def __post_init__(self):
        c0 = _finite(self.c0, "c0")
        c1 = _finite(self.c1, "c1")
        if c0 <= 0:
            raise ModelValidationError(f"c0 must be > 0, got {c0}", "c0")
        if c0 >= c1:
            raise ModelValidationError(
                f"domain requires c0 < c1, got c0={c0}, c1={c1}", "c1"
            )
        object.__setattr__(self, "c0", c0)
        object.__setattr__(self, "c1", c1)

    def contains(self, theta: ThetaParams) -> bool:
        return self.c0 < theta.lam < self.c1 and self.c0 < theta.mu < self.c1


@dataclass(frozen=True)
class StationaryMoments:
    y_bar: float
    d_var: float


@dataclass(frozen=True)
class ModelSpec:
    theta: ThetaParams
    states: StateSpace
    domain: ParameterDomain


@dataclass(frozen=True)
class ValidatedModel:
    spec: ModelSpec
    warnings: tuple[str, ...] = field(default_factory=tuple)


def stationary_distribution(theta: ThetaParams) -> tuple[float, float]:
    """Stationary probabilities of ``(y1, y2)``."""
    a = theta.total_rate
    p1 = theta.mu / a
    return p1, 1.0 - p1


def transition_probabilities(theta: ThetaParams, t: float) -> np.ndarray:
    """2x2 matrix ``P[i, j] = P(Y(t) = y_j | Y(0) = y_i)``."""
    t = float(t)
    if not t >= 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    a = theta.total_rate
    p1, p2 = stationary_distribution(theta)
    e = math.exp(-a * t)
    q1 = theta.lam / a
    q2 = theta.mu / a
    return np.array(
        [
            [p1 + q1 * e, p2 - q1 * e],
            [p1 - q2 * e, p2 + q2 * e],
        ]
    )


def stationary_moments(theta: ThetaParams, states: StateSpace) -> StationaryMoments:
    a = theta.total_rate
    y_bar = (states.y1 * theta.mu + states.y2 * theta.lam) / a
    d_var = (states.y2 - states.y1) ** 2 * theta.lam * theta.mu / a**2
    return StationaryMoments(y_bar=y_bar, d_var=d_var)


def covariance(theta: ThetaParams, states: StateSpace, s: float) -> float:
    """Stationary product moment ``K(s) = E[Y(t) Y(t+s)]``."""
    s = float(s)
    if not s >= 0:
        raise ValueError(f"lag must be nonnegative, got {s}")
    mom = stationary_moments(theta, states)
    return mom.y_bar**2 + mom.d_var * math.exp(-theta.total_rate * s)


def check_condition_M(domain: ParameterDomain, states: StateSpace, n: int) -> bool:
    """Moment condition ``c0 / (y1 - y2)^2 > (2n + 9) / 4``."""
    if int(n) != n or n < 2:
        raise ValueError(f"n must be an integer >= 2, got {n}")
    return domain.c0 / states.b**2 > (2 * n + 9) / 4


def validate_model(spec: ModelSpec, emit: bool = False) -> ValidatedModel:
    """Check that ``spec.theta`` lies in the open domain, that ``y1 < y2``,
    and collect warnings.

    Failure of the moment condition M(2) is reported as a warning only: it is
    sufficient, not necessary, for the estimators to behave.
    """
    theta, domain = spec.theta, spec.domain
    if not spec.states.y1 < spec.states.y2:
        # the formulas are symmetric under (y1, lambda) <-> (y2, mu); fix one labelling
        raise ModelValidationError(
            f"states must be ordered y1 < y2, got y1={spec.states.y1}, y2={spec.states.y2};"
            " swap the labels together with lambda and mu", "y1"
        )
    for name, value in (("lambda", theta.lam), ("mu", theta.mu)):
        if not domain.c0 < value < domain.c1:
            raise ModelValidationError(
                f"{name}={value} not in ({domain.c0}, {domain.c1})", name
            )
    notes = []
    if not check_condition_M(domain, spec.states, 2):
        notes.append(
            "M(2) fails: c0/(y1-y2)^2 = "
            f"{domain.c0 / spec.states.b ** 2:.6g} <= 13/4"
        )
    if emit:
        for note in notes:
            warnings.warn(note, ModelWarning, stacklevel=2)
    return ValidatedModel(spec=spec, warnings=tuple(notes))
