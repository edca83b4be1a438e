"""Trajectory-space metric, penalty Lagrangian, and the heat-flow direction.

The planner measures a curve x(t) by the energy

    E = int_0^T (xdot - F_d)^T G(t) (xdot - F_d) + sum_j lam_j h_j^2 S_j dt

where G = (Fbar^-1)^T D(t) Fbar^-1 puts a large weight lam on unactuated
directions and 1 + lam*A_i(t) on stance-phase foot velocities, and the
penalty sum charges active constraint violations. For the lifted hopper
the frame Fbar is the identity, so G is exactly the diagonal D(t).

The flow direction is the G-preconditioned negative functional gradient of
E. On a grid this gradient has an exact discrete form: the time derivative
of the momentum dL/dxdot is the central difference of its nodal values.
Using that form (rather than the chain-rule expansion with an analytic
D-dot) keeps every accepted step a true descent step of the discrete
energy, including across the sharp stance/flight switch bands.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .constraints import (
    EQUALITY,
    ConstraintSpec,
    constraint_activation,
)
from .model import LeggedSystem
from .schedule import (
    ContactSchedule,
    SmoothingParams,
    activation,
    activation_time_derivative,
    smooth_heaviside,
    smooth_heaviside_derivative,
)


class SingularFrame(ValueError):
    """Frame [F_c | F] is not invertible at the evaluated state."""


class SingularMetric(ValueError):
    """Penalty matrix lost positive definiteness."""


@dataclass(frozen=True)
class PenaltyMatrix:
    """Diagonal penalty D(t), evaluated as a vector of diagonal entries."""

    lam: float
    n: int
    _diag: Callable
    _diag_dot: Callable

    def diag(self, t) -> np.ndarray:
        """Diagonal of D(t); broadcasts t to shape (..., n)."""
        return self._diag(np.asarray(t, float))

    def diag_time_derivative(self, t, beta: float) -> np.ndarray:
        """Diagonal of dD/dt using the Gaussian bump step derivative."""
        return self._diag_dot(np.asarray(t, float), beta)

    def matrix(self, t) -> np.ndarray:
        """Full n x n diagonal matrix at a scalar time."""
        return np.diag(self.diag(float(t)))


def legged_penalty(lam: float, schedule: ContactSchedule,
                   alpha: float) -> PenaltyMatrix:
    """Penalty for the lifted hopper: lam on the six body rows, unit on
    force rates, 1 + lam*A_i(t) on foot velocities of leg i."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    k = schedule.leg_count
    n = 6 + 4 * k

    def diag(t):
        t = np.asarray(t, float)
        out = np.ones(t.shape + (n,))
        out[..., :6] = lam
        for leg in range(k):
            a = activation(schedule, leg, t, alpha)
            out[..., 8 + 4 * leg] = 1.0 + lam * a
            out[..., 9 + 4 * leg] = 1.0 + lam * a
        return out

    def diag_dot(t, beta):
        t = np.asarray(t, float)
        out = np.zeros(t.shape + (n,))
        for leg in range(k):
            da = activation_time_derivative(schedule, leg, t, beta)
            out[..., 8 + 4 * leg] = lam * da
            out[..., 9 + 4 * leg] = lam * da
        return out

    return PenaltyMatrix(lam=lam, n=n, _diag=diag, _diag_dot=diag_dot)


def constant_penalty(lam: float, n: int, m: int) -> PenaltyMatrix:
    """Time-invariant penalty: lam on the n - m unactuated rows, unit on
    the m actuated rows (frame column order [F_c | F])."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    base = np.concatenate([np.full(n - m, float(lam)), np.ones(m)])

    def diag(t):
        t = np.asarray(t, float)
        return np.broadcast_to(base, t.shape + (n,)).copy()

    def diag_dot(t, beta):
        t = np.asarray(t, float)
        return np.zeros(t.shape + (n,))

    return PenaltyMatrix(lam=lam, n=n, _diag=diag, _diag_dot=diag_dot)


def penalty_matrix(t: float, lam: float, schedule: ContactSchedule,
                   alpha: float) -> np.ndarray:
    """D(t) for the lifted hopper as a full diagonal matrix."""
    return legged_penalty(lam, schedule, alpha).matrix(t)


def metric(t: float, x: np.ndarray, system, penalty: PenaltyMatrix,
           identity_frame: bool | None = None) -> np.ndarray:
    """Riemannian metric G(t, x) = (Fbar^-1)^T D(t) Fbar^-1.

    With an identity frame (the lifted hopper) this is D(t) exactly,
    bit for bit. The generic path inverts the frame and raises
    SingularFrame when it is numerically rank deficient.
    """
    if identity_frame is None:
        identity_frame = isinstance(system, LeggedSystem)
    if identity_frame:
        return penalty.matrix(t)
    fbar = system.frame(np.asarray(x, float))
    if fbar.shape[0] != fbar.shape[1]:
        raise SingularFrame("frame is not square")
    try:
        fbar_inv = np.linalg.inv(fbar)
    except np.linalg.LinAlgError as exc:
        raise SingularFrame("frame is not invertible") from exc
    if not np.all(np.isfinite(fbar_inv)) or np.linalg.cond(fbar) > 1e12:
        raise SingularFrame("frame is numerically singular")
    return fbar_inv.T @ (penalty.diag(float(t))[:, None] * fbar_inv)


@dataclass(frozen=True)
class LagrangianEvaluator:
    """Evaluates the penalty Lagrangian, its partials and the flow RHS.

    ``identity_frame`` selects the fast diagonal-metric path (exact for
    the lifted hopper). The generic path forms per-node metric matrices
    and differences the frame numerically for the dG/dx quadratic term.
    """

    system: object
    penalty: PenaltyMatrix
    specs: tuple = ()
    schedule: ContactSchedule | None = None
    smoothing: SmoothingParams = field(default_factory=SmoothingParams)
    identity_frame: bool = False

    def __post_init__(self):
        if self.specs and self.schedule is None:
            if any(s.binding != "always" for s in self.specs):
                raise ValueError("phase-bound constraints need a schedule")

    # -- pieces -----------------------------------------------------------

    def residual(self, x: np.ndarray, xdot: np.ndarray) -> np.ndarray:
        return np.asarray(xdot, float) - self.system.drift(np.asarray(x, float))

    def _gate(self, spec: ConstraintSpec, t) -> np.ndarray:
        if self.schedule is None:
            t = np.asarray(t, float)
            return np.ones(t.shape)
        return np.asarray(
            constraint_activation(spec, self.schedule, t, self.smoothing.alpha),
            float)

    def penalty_value(self, t, x) -> np.ndarray:
        """sum_j lam_j h_j(x)^2 S_j(t, x), broadcasting over nodes."""
        t = np.asarray(t, float)
        x = np.asarray(x, float)
        total = np.zeros(np.broadcast(t, x[..., 0]).shape)
        for spec in self.specs:
            h = spec.h(x)
            s = self._gate(spec, t)
            if spec.kind != EQUALITY:
                s = s * smooth_heaviside(h, self.smoothing.alpha)
            total = total + spec.weight * h * h * s
        return total

    def penalty_gradient(self, t, x) -> np.ndarray:
        """d/dx of the penalty sum; for inequalities the step in h is
        differentiated with the Gaussian bump."""
        t = np.asarray(t, float)
        x = np.asarray(x, float)
        out = np.zeros(x.shape)
        for spec in self.specs:
            h = spec.h(x)
            b = self._gate(spec, t)
            if spec.kind == EQUALITY:
                coeff = 2.0 * h * b
            else:
                step = smooth_heaviside(h, self.smoothing.alpha)
                bump = smooth_heaviside_derivative(h, self.smoothing.beta)
                coeff = (2.0 * h * step + h * h * bump) * b
            out = out + spec.weight * coeff[..., None] * spec.grad(x)
        return out

    def lagrangian(self, t, x, xdot) -> np.ndarray:
        """L(t, x, xdot) >= 0; zero iff the motion follows the drift on
        penalized directions and no active penalty fires."""
        resid = self.residual(x, xdot)
        if self.identity_frame:
            quad = np.einsum("...i,...i->...", self.penalty.diag(t) * resid, resid)
        else:
            quad = self._quad_generic(t, x, resid)
        return quad + self.penalty_value(t, x)

    def momentum(self, t, x, xdot) -> np.ndarray:
        """dL/dxdot = 2 G (xdot - F_d)."""
        resid = self.residual(x, xdot)
        if self.identity_frame:
            return 2.0 * self.penalty.diag(t) * resid
        return 2.0 * self._apply_metric(t, x, resid)

    def lagrangian_x_gradient(self, t, x, xdot) -> np.ndarray:
        """dL/dx = -2 J_{F_d}^T G (xdot - F_d) [+ dG/dx quadratic term]
        + penalty gradient."""
        x = np.asarray(x, float)
        resid = self.residual(x, xdot)
        if self.identity_frame:
            weighted = self.penalty.diag(t) * resid
            out = -2.0 * self.system.drift_jacobian_t_apply(x, weighted)
        else:
            weighted = self._apply_metric(t, x, resid)
            out = -2.0 * self.system.drift_jacobian_t_apply(x, weighted)
            out = out + self._metric_x_quadratic(t, x, resid)
        return out + self.penalty_gradient(t, x)

    # -- grid-level flow --------------------------------------------------

    def grid_derivatives(self, X: np.ndarray, dt: float) -> np.ndarray:
        """Nodal xdot: central differences inside, one-sided at the ends.

        This is the discretization the energy and the flow share; using
        any other stencil would break the exact descent property.
        """
        X = np.asarray(X, float)
        xdot = np.empty_like(X)
        xdot[1:-1] = (X[2:] - X[:-2]) / (2.0 * dt)
        xdot[0] = (X[1] - X[0]) / dt
        xdot[-1] = (X[-1] - X[-2]) / dt
        return xdot

    def energy(self, times: np.ndarray, X: np.ndarray) -> float:
        """Trapezoid-rule discrete energy of the curve."""
        times = np.asarray(times, float)
        X = np.asarray(X, float)
        dt = times[1] - times[0]
        xdot = self.grid_derivatives(X, dt)
        values = self.lagrangian(times, X, xdot)
        return float(np.trapezoid(values, dx=dt))

    def flow_rhs(self, times: np.ndarray, X: np.ndarray) -> np.ndarray:
        """Heat-flow direction Psi at every interior node (zeros at ends).

        Psi = G^-1 [ d/dt (dL/dxdot) - dL/dx ], with the momentum time
        derivative taken as the central difference of nodal momenta. This
        makes -Psi exactly the G-preconditioned gradient of energy() with
        respect to the interior node values.
        """
        times = np.asarray(times, float)
        X = np.asarray(X, float)
        dt = times[1] - times[0]
        xdot = self.grid_derivatives(X, dt)
        m = self.momentum(times, X, xdot)
        dm = (m[2:] - m[:-2]) / (2.0 * dt)
        dldx = self.lagrangian_x_gradient(times[1:-1], X[1:-1], xdot[1:-1])
        rhs = dm - dldx
        out = np.zeros_like(X)
        if self.identity_frame:
            diag = self.penalty.diag(times[1:-1])
            if np.any(diag <= 0):
                raise SingularMetric("penalty diagonal has a nonpositive entry")
            out[1:-1] = rhs / diag
        else:
            for i in range(1, X.shape[0] - 1):
                G = metric(times[i], X[i], self.system, self.penalty,
                           identity_frame=False)
                out[i] = np.linalg.solve(G, rhs[i - 1])
        return out

    # -- pointwise continuum form ----------------------------------------

    def pointwise_rhs(self, t: float, x: np.ndarray, xdot: np.ndarray,
                      xddot: np.ndarray) -> np.ndarray:
        """Continuum flow direction at one (t, x, xdot, xddot).

        Expands d/dt (dL/dxdot) = 2 D (xddot - J xdot) + 2 Ddot (xdot -
        F_d) with the analytic bump-based Ddot. Agrees with flow_rhs to
        the grid's truncation order away from switch bands; the grid form
        is what the solver integrates.
        """
        if not self.identity_frame:
            raise NotImplementedError(
                "pointwise form is provided for diagonal metrics only")
        x = np.asarray(x, float)
        xdot = np.asarray(xdot, float)
        xddot = np.asarray(xddot, float)
        diag = self.penalty.diag(float(t))
        if np.any(diag <= 0):
            raise SingularMetric("penalty diagonal has a nonpositive entry")
        ddot = self.penalty.diag_time_derivative(float(t), self.smoothing.beta)
        resid = self.residual(x, xdot)
        jac = self.system.drift_jacobian(x)
        mdot = 2.0 * diag * (xddot - jac @ xdot) + 2.0 * ddot * resid
        dldx = -2.0 * (jac.T @ (diag * resid)) + self.penalty_gradient(float(t), x)
        return (mdot - dldx) / diag

    # -- generic-metric helpers ------------------------------------------

    def _metric_at(self, t: float, x: np.ndarray) -> np.ndarray:
        return metric(float(t), x, self.system, self.penalty, identity_frame=False)

    def _apply_metric(self, t, x, v) -> np.ndarray:
        t = np.asarray(t, float)
        x = np.asarray(x, float)
        v = np.asarray(v, float)
        if x.ndim == 1:
            return self._metric_at(float(t), x) @ v
        out = np.empty_like(v)
        tt = np.broadcast_to(t, x.shape[:-1])
        flat_t = tt.reshape(-1)
        flat_x = x.reshape(-1, x.shape[-1])
        flat_v = v.reshape(-1, v.shape[-1])
        flat_o = out.reshape(-1, v.shape[-1])
        for i in range(flat_x.shape[0]):
            flat_o[i] = self._metric_at(flat_t[i], flat_x[i]) @ flat_v[i]
        return out

    def _quad_generic(self, t, x, resid) -> np.ndarray:
        gv = self._apply_metric(t, x, resid)
        return np.einsum("...i,...i->...", resid, gv)

    def _metric_x_quadratic(self, t, x, resid, eps: float = 1e-6) -> np.ndarray:
        """Entry d of (resid^T dG/dx_d resid) by central differences."""
        t = np.asarray(t, float)
        x = np.asarray(x, float)
        resid = np.asarray(resid, float)
        if x.ndim == 1:
            n = x.shape[0]
            out = np.zeros(n)
            for d in range(n):
                dx = np.zeros(n)
                dx[d] = eps
                gp = self._metric_at(float(t), x + dx)
                gm = self._metric_at(float(t), x - dx)
                out[d] = resid @ ((gp - gm) @ resid) / (2 * eps)
            return out
        tt = np.broadcast_to(t, x.shape[:-1])
        out = np.empty_like(x)
        flat_t = tt.reshape(-1)
        flat_x = x.reshape(-1, x.shape[-1])
        flat_r = resid.reshape(-1, x.shape[-1])
        flat_o = out.reshape(-1, x.shape[-1])
        for i in range(flat_x.shape[0]):
            flat_o[i] = self._metric_x_quadratic(flat_t[i], flat_x[i], flat_r[i], eps)
        return out


def euler_lagrange_rhs(t: float, x: np.ndarray, xdot: np.ndarray,
                       xddot: np.ndarray,
                       evaluator: LagrangianEvaluator) -> np.ndarray:
    """Pointwise continuum flow direction; see
    LagrangianEvaluator.pointwise_rhs."""
    return evaluator.pointwise_rhs(t, x, xdot, xddot)
