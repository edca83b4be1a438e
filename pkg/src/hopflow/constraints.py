"""Scalar locomotion constraints, their phase gating, and state augmentation.

Every constraint is a scalar function h(x), either an equality (h = 0) or
an inequality with the convention h <= 0 feasible. A constraint is bound
to a phase: always active, active while a given leg is in stance, or
active while it is in flight. The gate B_j(t) is built from the smoothed
leg activations; inequalities are additionally gated by a logistic step in
h itself so satisfied constraints cost nothing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np

from .model import (
    ControlAffineSystem,
    LeggedSystem,
    RobotParams,
    StateLayout,
    Terrain,
    terrain_frame,
    terrain_frame_derivative,
)
from .schedule import ContactSchedule, SmoothingParams, activation, smooth_heaviside

EQUALITY = "equality"
INEQUALITY = "inequality"

ALWAYS = "always"
STANCE = "stance"
FLIGHT = "flight"


@dataclass(frozen=True)
class ConstraintSpec:
    """One scalar constraint with its phase binding and penalty weight.

    ``h`` and ``grad`` accept batched states (..., n) and return (...) and
    (..., n) respectively; ``leg`` is None for always-bound constraints.
    """

    id: str
    kind: str
    binding: str
    h: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    leg: int | None = None
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in (EQUALITY, INEQUALITY):
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if self.binding not in (ALWAYS, STANCE, FLIGHT):
            raise ValueError(f"unknown binding {self.binding!r}")
        if self.binding != ALWAYS and self.leg is None:
            raise ValueError("phase-bound constraint needs a leg index")
        if self.weight <= 0:
            raise ValueError("weight must be positive")


def constraint_activation(spec: ConstraintSpec, schedule: ContactSchedule,
                          t, alpha: float):
    """Phase gate B_j(t): 1 always, A_i in stance, 1 - A_i in flight."""
    if spec.binding == ALWAYS:
        t = np.asarray(t, float)
        out = np.ones(t.shape)
        return out if out.shape else 1.0
    a = activation(schedule, spec.leg, t, alpha)
    return a if spec.binding == STANCE else 1.0 - a


def switch(spec: ConstraintSpec, schedule: ContactSchedule, t, x,
           alpha: float):
    """Penalty gate S_j(t, x) in [0, 1].

    Equalities use the phase gate alone; inequalities multiply it by a
    logistic step in h, so the penalty vanishes where h is well negative.
    """
    b = constraint_activation(spec, schedule, t, alpha)
    if spec.kind == EQUALITY:
        return b
    return smooth_heaviside(spec.h(np.asarray(x, float)), alpha) * b


def _component_spec(layout: StateLayout, idx: int):
    def h(x):
        return np.asarray(x, float)[..., idx]

    def grad(x):
        x = np.asarray(x, float)
        g = np.zeros(x.shape)
        g[..., idx] = 1.0
        return g

    return h, grad


def build_locomotion_constraints(
    params: RobotParams,
    terrain: Terrain,
    weight: float = 1.0,
    weight_overrides: Mapping[str, float] | None = None,
    torso_clearance_band: float | None = None,
) -> list[ConstraintSpec]:
    """All scalar constraints of the hopping problem, 8 per leg plus one.

    Per leg: stance-bound foot-on-terrain equality, normal-push
    inequality and the two friction-cone halves; flight-bound zero-force
    equalities (per component) and foot-above-ground inequality; an
    always-bound kinematic reach bound. Globally: CoM clearance above the
    terrain. ``weight`` is the shared penalty; ``weight_overrides`` remaps
    it per constraint id. ``torso_clearance_band`` switches the reach
    bound to the two-sided form (|p - p_i| - R)^2 <= band^2.
    """
    layout = StateLayout(params.leg_count)
    overrides = dict(weight_overrides or {})
    mu = params.friction_mu
    specs: list[ConstraintSpec] = []

    def w(cid: str) -> float:
        return float(overrides.get(cid, weight))

    def add(cid, kind, binding, h, grad, leg=None):
        specs.append(ConstraintSpec(id=cid, kind=kind, binding=binding,
                                    h=h, grad=grad, leg=leg, weight=w(cid)))

    for leg in range(params.leg_count):
        fs = layout.force_slice(leg)
        ps = layout.foot_slice(leg)
        tag = leg + 1

        def foot_on_terrain(x, ps=ps):
            x = np.asarray(x, float)
            return np.asarray(terrain.value(x[..., ps.start], x[..., ps.start + 1]), float)

        def foot_on_terrain_grad(x, ps=ps):
            x = np.asarray(x, float)
            g = np.zeros(x.shape)
            gx, gy = terrain.grad(x[..., ps.start], x[..., ps.start + 1])
            g[..., ps.start] = gx
            g[..., ps.start + 1] = gy
            return g

        add(f"stance_foot_on_terrain[{tag}]", EQUALITY, STANCE,
            foot_on_terrain, foot_on_terrain_grad, leg)

        def cone_h(sign, fs=fs, ps=ps):
            # sign=0 is the pure normal-push bound, +-1 the cone halves
            def h(x):
                x = np.asarray(x, float)
                f = x[..., fs]
                normal, tangent = terrain_frame(terrain, x[..., ps])
                fn = np.einsum("...a,...a->...", f, normal)
                if sign == 0:
                    return -fn
                ft = np.einsum("...a,...a->...", f, tangent)
                return sign * ft - mu * fn
            return h

        def cone_grad(sign, fs=fs, ps=ps):
            def grad(x):
                x = np.asarray(x, float)
                g = np.zeros(x.shape)
                f = x[..., fs]
                foot = x[..., ps]
                normal, tangent = terrain_frame(terrain, foot)
                dn = terrain_frame_derivative(terrain, foot)
                # rows of dT/dp are the rotated rows of dN/dp
                dt_ = np.stack([dn[..., 1, :], -dn[..., 0, :]], axis=-2)
                if sign == 0:
                    g[..., fs] = -normal
                    g[..., ps] = -np.einsum("...a,...ab->...b", f, dn)
                else:
                    g[..., fs] = sign * tangent - mu * normal
                    g[..., ps] = (sign * np.einsum("...a,...ab->...b", f, dt_)
                                  - mu * np.einsum("...a,...ab->...b", f, dn))
                return g
            return grad

        add(f"stance_normal_push[{tag}]", INEQUALITY, STANCE,
            cone_h(0), cone_grad(0), leg)
        add(f"friction_cone_pos[{tag}]", INEQUALITY, STANCE,
            cone_h(+1), cone_grad(+1), leg)
        add(f"friction_cone_neg[{tag}]", INEQUALITY, STANCE,
            cone_h(-1), cone_grad(-1), leg)

        hx, gx = _component_spec(layout, fs.start)
        hy, gy = _component_spec(layout, fs.start + 1)
        add(f"flight_force_x[{tag}]", EQUALITY, FLIGHT, hx, gx, leg)
        add(f"flight_force_y[{tag}]", EQUALITY, FLIGHT, hy, gy, leg)

        def foot_above(x, foot_on_terrain=foot_on_terrain):
            return -foot_on_terrain(x)

        def foot_above_grad(x, foot_on_terrain_grad=foot_on_terrain_grad):
            return -foot_on_terrain_grad(x)

        add(f"flight_foot_above[{tag}]", INEQUALITY, FLIGHT,
            foot_above, foot_above_grad, leg)

        if torso_clearance_band is None:
            def reach(x, ps=ps):
                x = np.asarray(x, float)
                d = x[..., StateLayout.COM] - x[..., ps]
                return np.einsum("...a,...a->...", d, d) - params.kinematic_radius ** 2

            def reach_grad(x, ps=ps):
                x = np.asarray(x, float)
                g = np.zeros(x.shape)
                d = x[..., StateLayout.COM] - x[..., ps]
                g[..., StateLayout.COM] = 2 * d
                g[..., ps] = -2 * d
                return g
        else:
            band2 = float(torso_clearance_band) ** 2

            def reach(x, ps=ps):
                x = np.asarray(x, float)
                d = x[..., StateLayout.COM] - x[..., ps]
                r = np.sqrt(np.einsum("...a,...a->...", d, d))
                return (r - params.kinematic_radius) ** 2 - band2

            def reach_grad(x, ps=ps):
                x = np.asarray(x, float)
                g = np.zeros(x.shape)
                d = x[..., StateLayout.COM] - x[..., ps]
                r = np.sqrt(np.einsum("...a,...a->...", d, d))
                safe = np.maximum(r, 1e-12)
                coeff = (2 * (r - params.kinematic_radius) / safe)[..., None]
                g[..., StateLayout.COM] = coeff * d
                g[..., ps] = -coeff * d
                return g

        add(f"kinematic_reach[{tag}]", INEQUALITY, ALWAYS, reach, reach_grad, leg)

    def clearance(x):
        x = np.asarray(x, float)
        return params.min_com_clearance - np.asarray(
            terrain.value(x[..., 0], x[..., 1]), float)

    def clearance_grad(x):
        x = np.asarray(x, float)
        g = np.zeros(x.shape)
        gx, gy = terrain.grad(x[..., 0], x[..., 1])
        g[..., 0] = -np.asarray(gx, float)
        g[..., 1] = -np.asarray(gy, float)
        return g

    add("com_clearance", INEQUALITY, ALWAYS, clearance, clearance_grad)
    return specs


@dataclass(frozen=True)
class AugmentedSystem:
    """Base system extended with one accumulated-error state per constraint.

    The extra states zeta_j integrate h_j(x) S_j(t, x); they stay at zero
    exactly when the constraints are met while active. The planner PDE
    evolves only the base states (the expanded penalty carries the same
    information), so the zeta dynamics here serve auditing and analysis.
    """

    system: ControlAffineSystem | LeggedSystem
    specs: tuple
    schedule: ContactSchedule
    smoothing: SmoothingParams

    @property
    def base_dim(self) -> int:
        return self.system.n

    @property
    def dim(self) -> int:
        return self.system.n + len(self.specs)

    def augmented_drift(self, x_hat: np.ndarray) -> np.ndarray:
        x_hat = np.asarray(x_hat, float)
        out = np.zeros_like(x_hat)
        out[..., : self.base_dim] = self.system.drift(x_hat[..., : self.base_dim])
        return out

    def augmented_control(self, x_hat: np.ndarray | None = None) -> np.ndarray:
        F = self.system.control(None if x_hat is None else
                                np.asarray(x_hat, float)[..., : self.base_dim])
        k_c = len(self.specs)
        out = np.zeros((self.dim, F.shape[1] + k_c))
        out[: self.base_dim, : F.shape[1]] = F
        out[self.base_dim:, F.shape[1]:] = np.eye(k_c)
        return out

    def violation_rates(self, t, x) -> np.ndarray:
        """zeta-dot for every constraint at (t, x); shapes broadcast."""
        t = np.asarray(t, float)
        x = np.asarray(x, float)
        rates = []
        for spec in self.specs:
            s = switch(spec, self.schedule, t, x, self.smoothing.alpha)
            rates.append(spec.h(x) * s)
        return np.stack(rates, axis=-1)

    def accumulated_violations(self, times: np.ndarray, states: np.ndarray) -> np.ndarray:
        """zeta_j(T) for a sampled trajectory by trapezoid quadrature."""
        times = np.asarray(times, float)
        states = np.asarray(states, float)
        rates = self.violation_rates(times, states)
        return np.trapezoid(rates, times, axis=0)


def augment(system, specs: Iterable[ConstraintSpec], schedule: ContactSchedule,
            smoothing: SmoothingParams) -> AugmentedSystem:
    """Bundle a system with its constraints into the augmented form."""
    specs = tuple(specs)
    if not specs:
        raise ValueError("augment needs at least one constraint spec")
    return AugmentedSystem(system=system, specs=specs, schedule=schedule,
                           smoothing=smoothing)
