"""Planar single-rigid-body legged model in control-affine form.

The torso is a rigid body with mass M and inertia I; each of the k massless
legs has a point foot at p_i carrying a contact force f_i. Forces and foot
positions are lifted into the state so that their rates become the controls:

    x = [p, th, pdot, thdot, f_1, p_1, ..., f_k, p_k]   (n = 6 + 4k)
    u = [fdot_1, pdot_1, ..., fdot_k, pdot_k]           (m = 4k)

which puts the dynamics in the control-affine form xdot = F_d(x) + F(x) u
with all rigid-body physics in the drift F_d and a constant control matrix
F = [0; I_4k]. Terrain is the zero level set of a C2 residual function.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class ZeroGradient(ValueError):
    """Terrain gradient vanished; no surface frame exists at this point."""


class RankDeficient(ValueError):
    """Control matrix lost column rank; no orthogonal completion exists."""


@dataclass(frozen=True)
class RobotParams:
    """Physical constants of the single-rigid-body hopper."""

    mass: float = 2.0
    inertia: float = 1.0
    gravity: float = 9.81
    leg_count: int = 1
    kinematic_radius: float = 1.0
    min_com_clearance: float = 0.3
    friction_mu: float = 1.0

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if self.inertia <= 0:
            raise ValueError(f"inertia must be positive, got {self.inertia}")
        if self.leg_count < 1:
            raise ValueError(f"leg_count must be >= 1, got {self.leg_count}")
        if self.kinematic_radius <= 0:
            raise ValueError("kinematic_radius must be positive")
        if self.min_com_clearance < 0:
            raise ValueError("min_com_clearance must be nonnegative")
        if self.friction_mu < 0:
            raise ValueError("friction_mu must be nonnegative")


@dataclass(frozen=True)
class StateLayout:
    """Index map for the lifted state vector and the control vector.

    State order: CoM position (2), orientation (1), CoM velocity (2),
    angular rate (1), then per leg a contiguous (force, foot position)
    block of 4. Controls are the per-leg (force rate, foot velocity)
    blocks of 4, in leg order.
    """

    leg_count: int

    COM = slice(0, 2)
    THETA = 2
    COM_VEL = slice(3, 5)
    THETA_DOT = 5

    @property
    def n(self) -> int:
        return 6 + 4 * self.leg_count

    @property
    def m(self) -> int:
        return 4 * self.leg_count

    def force_slice(self, leg: int) -> slice:
        self._check_leg(leg)
        return slice(6 + 4 * leg, 8 + 4 * leg)

    def foot_slice(self, leg: int) -> slice:
        self._check_leg(leg)
        return slice(8 + 4 * leg, 10 + 4 * leg)

    def force_rate_control_slice(self, leg: int) -> slice:
        self._check_leg(leg)
        return slice(4 * leg, 4 * leg + 2)

    def foot_velocity_control_slice(self, leg: int) -> slice:
        self._check_leg(leg)
        return slice(4 * leg + 2, 4 * leg + 4)

    def _check_leg(self, leg: int):
        if not 0 <= leg < self.leg_count:
            raise IndexError(f"leg {leg} out of range for {self.leg_count} legs")


@dataclass(frozen=True)
class Terrain:
    """Ground surface given implicitly as {(cx, cy): value(cx, cy) = 0}.

    ``value`` is negative below ground and positive above it; ``grad``
    returns the pair (d/dcx, d/dcy). Both must accept numpy arrays and
    broadcast, and ``value`` must be twice continuously differentiable.
    ``hess`` optionally returns the second derivatives (dxx, dxy, dyy);
    when absent surface-frame derivatives fall back to differencing grad.
    """

    value: Callable
    grad: Callable
    hess: Callable | None = None
    name: str = "custom"


def flat_terrain() -> Terrain:
    """Level ground at height zero: residual is just cy."""
    return Terrain(
        value=lambda cx, cy: np.asarray(cy, dtype=float) + 0.0 * np.asarray(cx),
        grad=lambda cx, cy: (np.zeros(np.broadcast(cx, cy).shape),
                             np.ones(np.broadcast(cx, cy).shape)),
        hess=lambda cx, cy: (np.zeros(np.broadcast(cx, cy).shape),) * 3,
        name="flat",
    )


def sinusoid_terrain(amplitude: float, frequency: float) -> Terrain:
    """Rolling humps: residual cy - amplitude*cos(frequency*cx)."""
    a, w = float(amplitude), float(frequency)
    return Terrain(
        value=lambda cx, cy: np.asarray(cy, float) - a * np.cos(w * np.asarray(cx, float)),
        grad=lambda cx, cy: (a * w * np.sin(w * np.asarray(cx, float)),
                             np.ones(np.broadcast(cx, cy).shape)),
        hess=lambda cx, cy: (a * w * w * np.cos(w * np.asarray(cx, float)),
                             np.zeros(np.broadcast(cx, cy).shape),
                             np.zeros(np.broadcast(cx, cy).shape)),
        name=f"sinusoid(A={a}, w={w})",
    )


def cross2d(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Planar cross product a_x*b_y - b_x*a_y, broadcasting over (..., 2)."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    return a[..., 0] * b[..., 1] - b[..., 0] * a[..., 1]


def drift(x: np.ndarray, params: RobotParams) -> np.ndarray:
    """Drift F_d of the lifted system, vectorized over leading axes.

    Rows 0-2 copy the CoM/orientation velocities, rows 3-4 are the net
    specific contact force minus gravity, row 5 the net contact torque
    over inertia. Force and foot-position rows are identically zero:
    those states move only through the controls.
    """
    x = np.asarray(x, float)
    layout = StateLayout(params.leg_count)
    out = np.zeros_like(x)
    out[..., 0:2] = x[..., 3:5]
    out[..., 2] = x[..., 5]

    p = x[..., layout.COM]
    force_sum = np.zeros(x.shape[:-1] + (2,))
    torque = np.zeros(x.shape[:-1])
    for leg in range(params.leg_count):
        f = x[..., layout.force_slice(leg)]
        foot = x[..., layout.foot_slice(leg)]
        force_sum += f
        torque += cross2d(f, p - foot)
    out[..., 3] = force_sum[..., 0] / params.mass
    out[..., 4] = force_sum[..., 1] / params.mass - params.gravity
    out[..., 5] = torque / params.inertia
    return out


def drift_jacobian(x: np.ndarray, params: RobotParams) -> np.ndarray:
    """Jacobian dF_d/dx at a single state, exploiting the sparse structure."""
    x = np.asarray(x, float)
    layout = StateLayout(params.leg_count)
    n = layout.n
    M, I = params.mass, params.inertia
    J = np.zeros((n, n))
    J[0, 3] = 1.0
    J[1, 4] = 1.0
    J[2, 5] = 1.0

    p = x[layout.COM]
    for leg in range(params.leg_count):
        fs = layout.force_slice(leg)
        ps = layout.foot_slice(leg)
        f = x[fs]
        foot = x[ps]
        J[3, fs.start] = 1.0 / M
        J[4, fs.start + 1] = 1.0 / M
        # torque = sum_i f_ix*(p_y - p_iy) - (p_x - p_ix)*f_iy
        J[5, 0] += -f[1] / I
        J[5, 1] += f[0] / I
        J[5, fs.start] = (p[1] - foot[1]) / I
        J[5, fs.start + 1] = -(p[0] - foot[0]) / I
        J[5, ps.start] = f[1] / I
        J[5, ps.start + 1] = -f[0] / I
    return J


def drift_jacobian_t_apply(x: np.ndarray, w: np.ndarray,
                           params: RobotParams) -> np.ndarray:
    """Compute J_{F_d}(x)^T w for batched states and weights (..., n)."""
    x = np.asarray(x, float)
    w = np.asarray(w, float)
    layout = StateLayout(params.leg_count)
    M, I = params.mass, params.inertia
    out = np.zeros_like(w)
    out[..., 3] += w[..., 0]
    out[..., 4] += w[..., 1]
    out[..., 5] += w[..., 2]

    p = x[..., layout.COM]
    wt = w[..., 5]
    for leg in range(params.leg_count):
        fs = layout.force_slice(leg)
        ps = layout.foot_slice(leg)
        f = x[..., fs]
        foot = x[..., ps]
        out[..., 0] += wt * (-f[..., 1] / I)
        out[..., 1] += wt * (f[..., 0] / I)
        out[..., fs.start] += w[..., 3] / M + wt * (p[..., 1] - foot[..., 1]) / I
        out[..., fs.start + 1] += w[..., 4] / M - wt * (p[..., 0] - foot[..., 0]) / I
        out[..., ps.start] += wt * f[..., 1] / I
        out[..., ps.start + 1] += wt * (-f[..., 0] / I)
    return out


def control_matrix(leg_count: int) -> np.ndarray:
    """Constant control matrix [0_{6 x 4k}; I_{4k}] of the lifted system."""
    if leg_count < 1:
        raise ValueError("leg_count must be >= 1")
    m = 4 * leg_count
    F = np.zeros((6 + m, m))
    F[6:, :] = np.eye(m)
    return F


def terrain_frame(terrain: Terrain, point: np.ndarray):
    """Unit outward normal and tangent of the surface near ``point``.

    The normal follows the residual gradient (away from ground); the
    tangent is the normal rotated -90 deg, so flat ground gives
    N = (0, 1), T = (1, 0). Accepts batched points of shape (..., 2).
    """
    point = np.asarray(point, float)
    gx, gy = terrain.grad(point[..., 0], point[..., 1])
    gx = np.asarray(gx, float)
    gy = np.asarray(gy, float)
    norm = np.hypot(gx, gy)
    if np.any(norm < 1e-12):
        raise ZeroGradient("terrain gradient vanished at a queried point")
    normal = np.stack([gx / norm, gy / norm], axis=-1)
    tangent = np.stack([normal[..., 1], -normal[..., 0]], axis=-1)
    return normal, tangent


def terrain_frame_derivative(terrain: Terrain, point: np.ndarray) -> np.ndarray:
    """Jacobian dN/dp of the unit normal with respect to the surface point.

    Uses the identity dN/dp = (I - N N^T) Hess(f) / |grad f|, with the
    Hessian differenced from ``grad`` when the terrain does not supply it.
    Returns shape (..., 2, 2); the tangent Jacobian is the -90 deg rotation
    of the rows: dT/dp = rot(-90) dN/dp.
    """
    point = np.asarray(point, float)
    cx, cy = point[..., 0], point[..., 1]
    gx, gy = (np.asarray(a, float) for a in terrain.grad(cx, cy))
    if terrain.hess is not None:
        hxx, hxy, hyy = (np.asarray(a, float) for a in terrain.hess(cx, cy))
    else:
        eps = 1e-6
        gxp, gyp = (np.asarray(a, float) for a in terrain.grad(cx + eps, cy))
        gxm, gym = (np.asarray(a, float) for a in terrain.grad(cx - eps, cy))
        hxx = (gxp - gxm) / (2 * eps)
        hxy = (gyp - gym) / (2 * eps)
        _, gyq = (np.asarray(a, float) for a in terrain.grad(cx, cy + eps))
        _, gyr = (np.asarray(a, float) for a in terrain.grad(cx, cy - eps))
        hyy = (gyq - gyr) / (2 * eps)
    norm = np.hypot(gx, gy)
    if np.any(norm < 1e-12):
        raise ZeroGradient("terrain gradient vanished at a queried point")
    nvec = np.stack([gx, gy], axis=-1) / norm[..., None]
    hess = np.stack([np.stack([hxx, hxy], axis=-1),
                     np.stack([hxy, hyy], axis=-1)], axis=-2)
    proj = np.eye(2) - nvec[..., :, None] * nvec[..., None, :]
    return np.einsum("...ab,...bc->...ac", proj, hess) / norm[..., None, None]


def gram_schmidt_completion(F: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of span(F).

    Runs modified Gram-Schmidt over the columns of F followed by the
    identity columns, keeping whatever survives projection. The first m
    survivors reproduce span(F); the remaining n - m are returned, so
    [F_c | F] is always invertible.
    """
    F = np.asarray(F, float)
    if F.ndim != 2:
        raise ValueError("F must be a 2-d matrix")
    n, m = F.shape
    scale = max(np.linalg.norm(F, axis=0).max(), 1.0)

    basis: list[np.ndarray] = []
    for col in F.T:
        v = col.astype(float).copy()
        for q in basis:
            v -= (q @ v) * q
        norm = np.linalg.norm(v)
        if norm <= tol * scale:
            raise RankDeficient("control matrix columns are linearly dependent")
        basis.append(v / norm)

    completion = []
    for j in range(n):
        v = np.zeros(n)
        v[j] = 1.0
        for q in basis:
            v -= (q @ v) * q
        norm = np.linalg.norm(v)
        if norm > tol:
            v /= norm
            basis.append(v)
            completion.append(v)
        if len(basis) == n:
            break
    return np.column_stack(completion) if completion else np.zeros((n, 0))


@dataclass(frozen=True)
class ControlAffineSystem:
    """Generic system xdot = F_d(x) + F(x) u with an invertible frame.

    ``drift`` must broadcast over leading axes; ``control`` maps one state
    to the n x m control matrix. The unactuated completion defaults to a
    Gram-Schmidt complement computed per call, and the drift Jacobian to
    central finite differences. Analytic callables can be supplied where
    performance or exactness matters.
    """

    n: int
    m: int
    drift: Callable[[np.ndarray], np.ndarray]
    control: Callable[[np.ndarray], np.ndarray]
    completion: Callable[[np.ndarray], np.ndarray] | None = None
    jacobian: Callable[[np.ndarray], np.ndarray] | None = None

    def frame(self, x: np.ndarray) -> np.ndarray:
        """Full frame [F_c(x) | F(x)], invertible wherever F keeps rank."""
        F = self.control(x)
        Fc = self.completion(x) if self.completion else gram_schmidt_completion(F)
        return np.hstack([Fc, F])

    def drift_jacobian(self, x: np.ndarray) -> np.ndarray:
        if self.jacobian is not None:
            return self.jacobian(x)
        x = np.asarray(x, float)
        eps = 1e-6
        J = np.zeros((self.n, self.n))
        for j in range(self.n):
            dx = np.zeros(self.n)
            dx[j] = eps
            J[:, j] = (self.drift(x + dx) - self.drift(x - dx)) / (2 * eps)
        return J

    def drift_jacobian_t_apply(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        """J_{F_d}(x)^T w for batched inputs; generic fallback loops nodes."""
        x = np.asarray(x, float)
        w = np.asarray(w, float)
        if x.ndim == 1:
            return self.drift_jacobian(x).T @ w
        out = np.empty_like(w)
        flat_x = x.reshape(-1, self.n)
        flat_w = w.reshape(-1, self.n)
        flat_o = out.reshape(-1, self.n)
        for i in range(flat_x.shape[0]):
            flat_o[i] = self.drift_jacobian(flat_x[i]).T @ flat_w[i]
        return out


@dataclass(frozen=True)
class LeggedSystem:
    """The lifted hopper as a concrete control-affine system.

    The control matrix is constant, its orthogonal completion is
    [I_6; 0], and the full frame is exactly the identity, so metric
    computations downstream never need a matrix inverse.
    """

    params: RobotParams
    layout: StateLayout = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "layout", StateLayout(self.params.leg_count))

    @property
    def n(self) -> int:
        return self.layout.n

    @property
    def m(self) -> int:
        return self.layout.m

    def drift(self, x: np.ndarray) -> np.ndarray:
        return drift(x, self.params)

    def control(self, x: np.ndarray | None = None) -> np.ndarray:
        return control_matrix(self.params.leg_count)

    def completion(self, x: np.ndarray | None = None) -> np.ndarray:
        Fc = np.zeros((self.n, 6))
        Fc[:6, :] = np.eye(6)
        return Fc

    def frame(self, x: np.ndarray | None = None) -> np.ndarray:
        return np.eye(self.n)

    def drift_jacobian(self, x: np.ndarray) -> np.ndarray:
        return drift_jacobian(x, self.params)

    def drift_jacobian_t_apply(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        return drift_jacobian_t_apply(x, w, self.params)
