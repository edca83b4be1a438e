"""Turning a converged curve into controls, a rollout, and an audit.

Controls are the actuated components of xdot - F_d read off the curve with
central differences. Integrating the true dynamics under those controls
(classical RK4, controls linearly interpolated between nodes) gives the
integrated path; its time-integrated distance to the curve is the planning
error, a scalar proxy for how feasible the planned motion really is. The
audit then checks every constraint on the integrated path, sampling only
deep inside each phase (activation above 0.99) so the smoothing bands
around switch times are never scored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .constraints import EQUALITY, ConstraintSpec, constraint_activation
from .model import LeggedSystem, RobotParams, StateLayout
from .schedule import ContactSchedule, SmoothingParams, activation

DEEP_PHASE = 0.99


def grid_time_derivative(times: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Central differences inside, one-sided at the two ends."""
    times = np.asarray(times, float)
    X = np.asarray(X, float)
    dt = times[1] - times[0]
    out = np.empty_like(X)
    out[1:-1] = (X[2:] - X[:-2]) / (2.0 * dt)
    out[0] = (X[1] - X[0]) / dt
    out[-1] = (X[-1] - X[-2]) / dt
    return out


def extract_controls(times: np.ndarray, X: np.ndarray, system) -> np.ndarray:
    """Controls on the grid: actuated rows of Fbar^-1 (xdot - F_d).

    For the lifted hopper the frame is the identity, so this is simply
    the force-rate and foot-velocity rows of xdot - F_d.
    """
    X = np.asarray(X, float)
    resid = grid_time_derivative(times, X) - system.drift(X)
    if isinstance(system, LeggedSystem):
        return resid[:, 6:]
    U = np.empty((X.shape[0], system.m))
    for i in range(X.shape[0]):
        w = np.linalg.solve(system.frame(X[i]), resid[i])
        U[i] = w[system.n - system.m:]
    return U


def integrate(system, times: np.ndarray, U: np.ndarray,
              x0: np.ndarray) -> np.ndarray:
    """Roll out xdot = F_d(x) + F(x) u with classical 4th-order steps.

    Controls are linearly interpolated between grid nodes, keeping the
    integrator locally 4th order on each cell.
    """
    times = np.asarray(times, float)
    U = np.asarray(U, float)
    x0 = np.asarray(x0, float)
    out = np.empty((times.size, x0.size))
    out[0] = x0

    def rate(x, u):
        return system.drift(x) + system.control(x) @ u

    for i in range(times.size - 1):
        h = times[i + 1] - times[i]
        u0, u1 = U[i], U[i + 1]
        um = 0.5 * (u0 + u1)
        x = out[i]
        k1 = rate(x, u0)
        k2 = rate(x + 0.5 * h * k1, um)
        k3 = rate(x + 0.5 * h * k2, um)
        k4 = rate(x + h * k3, u1)
        out[i + 1] = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return out


def planning_error(times: np.ndarray, x_star: np.ndarray,
                   x_tilde: np.ndarray) -> float:
    """Trapezoid integral of the pointwise Euclidean gap between curves."""
    times = np.asarray(times, float)
    gap = np.linalg.norm(np.asarray(x_star, float) - np.asarray(x_tilde, float),
                         axis=1)
    return float(np.trapezoid(gap, times))


@dataclass(frozen=True)
class AuditThresholds:
    """Pass/fail tolerances; violations use h <= 0 feasible convention."""

    equality_tol: float = 0.02
    inequality_tol: float = 0.02
    overrides: Mapping[str, float] = field(default_factory=dict)
    stance_drift_tol: float = 0.01
    flight_force_tol: float = 1.0

    def tolerance_for(self, spec: ConstraintSpec) -> float:
        family = spec.id.split("[")[0]
        if spec.id in self.overrides:
            return float(self.overrides[spec.id])
        if family in self.overrides:
            return float(self.overrides[family])
        return self.equality_tol if spec.kind == EQUALITY else self.inequality_tol


@dataclass
class ConstraintAudit:
    id: str
    kind: str
    binding: str
    leg: int | None
    tolerance: float
    max_violation: float | None
    time_of_max: float | None
    deep_samples: int
    intervals: list
    passed: bool

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "binding": self.binding,
            "leg": self.leg,
            "tolerance": self.tolerance,
            "max_violation": self.max_violation,
            "time_of_max": self.time_of_max,
            "deep_samples": self.deep_samples,
            "intervals": self.intervals,
            "passed": self.passed,
        }


@dataclass
class LegAudit:
    leg: int
    stance: list
    max_stance_drift: float | None
    max_stance_foot_speed: float | None
    max_flight_force: float | None
    passed: bool

    def to_dict(self) -> dict:
        return {
            "leg": self.leg,
            "stance": self.stance,
            "max_stance_drift": self.max_stance_drift,
            "max_stance_foot_speed": self.max_stance_foot_speed,
            "max_flight_force": self.max_flight_force,
            "passed": self.passed,
        }


@dataclass
class AuditReport:
    constraints: list
    legs: list
    passed: bool
    metadata: dict

    def to_dict(self) -> dict:
        return {
            "constraints": [c.to_dict() for c in self.constraints],
            "legs": [l.to_dict() for l in self.legs],
            "passed": self.passed,
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def constraint(self, cid: str) -> ConstraintAudit:
        for c in self.constraints:
            if c.id == cid:
                return c
        raise KeyError(cid)


def _violation(spec: ConstraintSpec, h: np.ndarray) -> np.ndarray:
    return np.abs(h) if spec.kind == EQUALITY else h


def audit(times: np.ndarray, x_tilde: np.ndarray, controls: np.ndarray,
          specs: Sequence[ConstraintSpec], schedule: ContactSchedule,
          params: RobotParams, smoothing: SmoothingParams,
          thresholds: AuditThresholds | None = None) -> AuditReport:
    """Score every constraint on the integrated path, deep in its phase.

    Each constraint reports its worst active-phase violation, when it
    happened, and per-interval maxima for phase-bound constraints. Per
    leg the report adds, for every stance interval, the contact point at
    the first deep sample and the in-stance foot drift, plus the largest
    deep-flight force magnitude.
    """
    if thresholds is None:
        thresholds = AuditThresholds()
    times = np.asarray(times, float)
    x_tilde = np.asarray(x_tilde, float)
    layout = StateLayout(params.leg_count)

    entries = []
    all_ok = True
    for spec in specs:
        gate = np.asarray(
            constraint_activation(spec, schedule, times, smoothing.alpha), float)
        deep = gate > DEEP_PHASE
        tol = thresholds.tolerance_for(spec)
        entry = ConstraintAudit(
            id=spec.id, kind=spec.kind, binding=spec.binding, leg=spec.leg,
            tolerance=tol, max_violation=None, time_of_max=None,
            deep_samples=int(deep.sum()), intervals=[], passed=True)
        if np.any(deep):
            h = np.asarray(spec.h(x_tilde), float)
            viol = _violation(spec, h)
            masked = np.where(deep, viol, -np.inf)
            worst = int(np.argmax(masked))
            entry.max_violation = float(viol[worst])
            entry.time_of_max = float(times[worst])
            entry.passed = bool(entry.max_violation <= tol)
            entry.intervals = _interval_maxima(times, deep, viol)
        entries.append(entry)
        all_ok = all_ok and entry.passed

    controls = np.asarray(controls, float)
    legs = []
    for leg in range(params.leg_count):
        act = np.asarray(activation(schedule, leg, times, smoothing.alpha), float)
        foot = x_tilde[:, layout.foot_slice(leg)]
        force = x_tilde[:, layout.force_slice(leg)]
        foot_vel = controls[:, layout.foot_velocity_control_slice(leg)]

        stance_records = []
        drifts = []
        speeds = []
        for t_land, t_takeoff in schedule.leg(leg):
            inside = (times >= t_land) & (times <= t_takeoff) & (act > DEEP_PHASE)
            if not np.any(inside):
                continue
            idx = np.where(inside)[0]
            anchor = foot[idx[0]]
            drift = float(np.max(np.linalg.norm(foot[idx] - anchor, axis=1)))
            speed = float(np.max(np.linalg.norm(foot_vel[idx], axis=1)))
            drifts.append(drift)
            speeds.append(speed)
            stance_records.append({
                "t_land": float(t_land),
                "t_takeoff": float(t_takeoff),
                "first_deep_time": float(times[idx[0]]),
                "contact_point": [float(anchor[0]), float(anchor[1])],
                "drift": drift,
                "max_foot_speed": speed,
            })
        flight_deep = act < 1.0 - DEEP_PHASE
        flight_force = (float(np.max(np.linalg.norm(force[flight_deep], axis=1)))
                        if np.any(flight_deep) else None)
        max_drift = max(drifts) if drifts else None
        ok = ((max_drift is None or max_drift <= thresholds.stance_drift_tol)
              and (flight_force is None
                   or flight_force <= thresholds.flight_force_tol))
        legs.append(LegAudit(leg=leg, stance=stance_records,
                             max_stance_drift=max_drift,
                             max_stance_foot_speed=max(speeds) if speeds else None,
                             max_flight_force=flight_force, passed=ok))
        all_ok = all_ok and ok

    meta = {
        "deep_phase_threshold": DEEP_PHASE,
        "norm": "euclidean",
        "trajectory": "integrated_path",
    }
    return AuditReport(constraints=entries, legs=legs, passed=all_ok,
                       metadata=meta)


def _interval_maxima(times, deep, viol) -> list:
    """Contiguous deep runs with their worst violation, for the report."""
    out = []
    i = 0
    n = times.size
    while i < n:
        if not deep[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and deep[j + 1]:
            j += 1
        seg = slice(i, j + 1)
        k = int(np.argmax(viol[seg])) + i
        out.append({
            "t_start": float(times[i]),
            "t_end": float(times[j]),
            "max_violation": float(viol[k]),
            "time_of_max": float(times[k]),
        })
        i = j + 1
    return out


@dataclass
class PlanResult:
    """Everything a planning run produces, prior to file emission."""

    times: np.ndarray
    x_star: np.ndarray
    controls: np.ndarray
    x_tilde: np.ndarray
    error: float
    audit: AuditReport
    metadata: dict = field(default_factory=dict)


def plan_outputs(times, x_star, system, specs, schedule, params, smoothing,
                 thresholds=None) -> PlanResult:
    """Extract, integrate, score: the post-processing half of a plan."""
    U = extract_controls(times, x_star, system)
    x_tilde = integrate(system, times, U, x_star[0])
    err = planning_error(times, x_star, x_tilde)
    report = audit(times, x_tilde, U, specs, schedule, params, smoothing,
                   thresholds)
    return PlanResult(times=np.asarray(times, float), x_star=np.asarray(x_star, float),
                      controls=U, x_tilde=x_tilde, error=err, audit=report,
                      metadata={"error_norm": "euclidean"})


def state_column_names(leg_count: int) -> list:
    names = ["com_x", "com_y", "theta", "com_vx", "com_vy", "theta_dot"]
    for leg in range(1, leg_count + 1):
        names += [f"f{leg}x", f"f{leg}y", f"p{leg}x", f"p{leg}y"]
    return names


def control_column_names(leg_count: int) -> list:
    names = []
    for leg in range(1, leg_count + 1):
        names += [f"df{leg}x", f"df{leg}y", f"dp{leg}x", f"dp{leg}y"]
    return names
