"""Predefined stance/flight timing and smoothed phase indicators.

Each leg's contact schedule is a sorted list of disjoint stance intervals
(landing time, takeoff time). The boolean in-stance indicator is smoothed
with a logistic step of sharpness ``alpha`` so the planner PDE sees a
differentiable activation; its time derivative uses a Gaussian bump of
width ``beta`` instead of the logistic derivative, which overflows for
sharp steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

SQRT_2PI = float(np.sqrt(2.0 * np.pi))

# exp argument is clamped here; the logistic saturates to 0/1 well before.
_EXP_ARG_LIMIT = 745.0


class InvalidOffset(ValueError):
    """Schedule offset at least as large as the horizon."""


@dataclass(frozen=True)
class SmoothingParams:
    """Sharpness of the logistic step and width of its derivative bump."""

    alpha: float = 200.0
    beta: float = 0.005

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.beta <= 0:
            raise ValueError("beta must be positive")


@dataclass(frozen=True)
class ContactSchedule:
    """Per-leg stance intervals on a common horizon [0, T].

    ``intervals[i]`` is the ordered tuple of (landing, takeoff) pairs for
    leg i; intervals are disjoint and contained in [0, T].
    """

    horizon: float
    intervals: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        normalized = []
        for leg_intervals in self.intervals:
            prev_end = -np.inf
            leg = []
            for t_land, t_takeoff in leg_intervals:
                if not (0.0 <= t_land < t_takeoff <= self.horizon):
                    raise ValueError(
                        f"interval ({t_land}, {t_takeoff}) not ordered within "
                        f"[0, {self.horizon}]")
                if t_land < prev_end:
                    raise ValueError("stance intervals overlap")
                prev_end = t_takeoff
                leg.append((float(t_land), float(t_takeoff)))
            normalized.append(tuple(leg))
        object.__setattr__(self, "intervals", tuple(normalized))

    @property
    def leg_count(self) -> int:
        return len(self.intervals)

    def leg(self, i: int):
        return self.intervals[i]


def smooth_heaviside(c, alpha: float):
    """Logistic step 1/(1 + exp(-alpha*c)), saturating safely for large |c|."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    z = np.clip(np.asarray(c, float) * alpha, -_EXP_ARG_LIMIT, _EXP_ARG_LIMIT)
    return expit(z)


def smooth_heaviside_derivative(c, beta: float):
    """Gaussian bump (1/(beta*sqrt(2*pi))) * exp(-(c/beta)^2).

    Stand-in for the logistic derivative; even in c, peaked at c = 0.
    Note the bump's total mass is 1/sqrt(2), not 1.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    c = np.asarray(c, float)
    z = np.clip((c / beta) ** 2, None, _EXP_ARG_LIMIT)
    return np.exp(-z) / (beta * SQRT_2PI)


def activation(schedule: ContactSchedule, leg: int, t, alpha: float):
    """Smoothed in-stance indicator of one leg, ~1 in stance, ~0 in flight.

    Sum over intervals of H(t - landing) - H(t - takeoff) with the
    logistic step; exactly 0.5 at a switch time.
    """
    t = np.asarray(t, float)
    total = np.zeros(t.shape)
    for t_land, t_takeoff in schedule.leg(leg):
        total += smooth_heaviside(t - t_land, alpha)
        total -= smooth_heaviside(t - t_takeoff, alpha)
    return total if total.shape else float(total)


def activation_time_derivative(schedule: ContactSchedule, leg: int, t, beta: float):
    """Time derivative of the activation via the Gaussian bump."""
    t = np.asarray(t, float)
    total = np.zeros(t.shape)
    for t_land, t_takeoff in schedule.leg(leg):
        total += smooth_heaviside_derivative(t - t_land, beta)
        total -= smooth_heaviside_derivative(t - t_takeoff, beta)
    return total if total.shape else float(total)


def equal_ratio_schedule(hops: int, horizon: float, offsets=(0.0,)) -> ContactSchedule:
    """Alternating stance/flight phases of equal duration, one leg per offset.

    Each leg starts a stance phase at t = offset and alternates with phase
    duration horizon/(2*hops). One extra landing beyond the last flight is
    generated so that a negatively shifted leg lands again before the end
    and stays planted; intervals are clipped to [0, horizon] and empty
    leftovers dropped.
    """
    if hops < 1:
        raise ValueError("hops must be >= 1")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    duration = horizon / (2 * hops)
    legs = []
    for offset in offsets:
        if abs(offset) >= horizon:
            raise InvalidOffset(
                f"offset {offset} must be smaller than the horizon {horizon}")
        intervals = []
        for j in range(hops + 1):
            t_land = 2 * j * duration + offset
            t_takeoff = t_land + duration
            t_land = max(t_land, 0.0)
            t_takeoff = min(t_takeoff, horizon)
            if t_takeoff - t_land > 1e-12:
                intervals.append((t_land, t_takeoff))
        legs.append(tuple(intervals))
    return ContactSchedule(horizon=horizon, intervals=tuple(legs))
