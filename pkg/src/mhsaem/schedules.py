"""Step-size and inverse-temperature schedules."""

import math
from dataclasses import dataclass
from fractions import Fraction

from .errors import ValidationError


@dataclass(frozen=True)
class Schedule:
    """Step size gamma_t.

    ``constant``: ``value`` for every t.
    ``piecewise``: 1.0 for t <= ``warmup``, then ``value``.
    ``robbins-monro``: 1.0 for t <= ``warmup``, then
    (t - warmup) ** -``exponent`` with exponent in (0.5, 1].
    """

    kind: str = "piecewise"
    value: float = 0.05
    warmup: int = 50
    exponent: float = 0.6

    def __post_init__(self):
        if self.kind not in ("constant", "piecewise", "robbins-monro"):
            raise ValidationError(f"unknown schedule kind {self.kind!r}")
        if self.kind != "robbins-monro" and not 0.0 <= self.value <= 1.0:
            raise ValidationError("step size must lie in [0, 1]")
        if self.kind == "robbins-monro" and not 0.5 < self.exponent <= 1.0:
            raise ValidationError("Robbins-Monro exponent must lie in (0.5, 1]")
        if self.warmup < 0:
            raise ValidationError("warmup must be nonnegative")

    def __call__(self, t):
        return schedule_eval(self, t)


def schedule_eval(schedule, t, T=None):
    t = int(t)
    if t < 1 or (T is not None and t > T):
        raise ValidationError(f"iteration {t} out of range")
    if schedule.kind == "constant":
        return float(schedule.value)
    if t <= schedule.warmup:
        return 1.0
    if schedule.kind == "piecewise":
        return float(schedule.value)
    return float((t - schedule.warmup) ** -schedule.exponent)


@dataclass(frozen=True)
class AnnealSchedule:
    """Piecewise-linear anti-annealing: beta_min at t=1, beta_max at
    ceil(tau_fraction * T), beta_end (1.0) at T."""

    beta_min: float = 0.1
    beta_max: float = 1.2
    tau_fraction: float = 2.0 / 3.0
    T: int = 1
    beta_end: float = 1.0

    def __post_init__(self):
        if not (self.beta_min > 0 and self.beta_max > 0 and self.beta_end > 0):
            raise ValidationError("inverse temperatures must be positive")
        if not 0.0 < self.tau_fraction < 1.0:
            raise ValidationError("tau_fraction must lie in (0, 1)")
        if self.T < 1:
            raise ValidationError("T must be >= 1")

    @property
    def knot(self):
        # exact rational arithmetic so 2/3 * 3000 lands on 2000, not 2001
        tau = Fraction(self.tau_fraction).limit_denominator(10**6)
        return max(1, min(self.T, math.ceil(tau * self.T)))

    def __call__(self, t):
        return anneal_eval(self, t)


def anneal_eval(anneal, t):
    t = int(t)
    T = anneal.T
    if not 1 <= t <= T:
        raise ValidationError(f"iteration {t} outside 1..{T}")
    if t == T:
        return float(anneal.beta_end)
    knot = anneal.knot
    if t == 1:
        return float(anneal.beta_min)
    if t <= knot:
        f = (t - 1) / (knot - 1)
        return float(anneal.beta_min * (1.0 - f) + anneal.beta_max * f)
    f = (t - knot) / (T - knot)
    return float(anneal.beta_max * (1.0 - f) + anneal.beta_end * f)


def constant_anneal(T, beta=1.0):
    return AnnealSchedule(beta, beta, 0.5, T, beta)
