"""Marching the heat flow: grid, boundary handling, adaptive s-stepping.

The curve x(t, s) lives on a uniform time grid and is advanced in the flow
parameter s by explicit Euler steps, x <- x + ds * Psi. Steps are accepted
only if the discrete energy does not increase, with the step size halved
on rejection and grown gently after success; this makes the energy trace
monotone by construction. Boundary rows are reasserted after every step:
Dirichlet for fixed states, drift-matching (one-sided derivative equals
the drift component) for free states.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .metric import LagrangianEvaluator


class StepDiverged(RuntimeError):
    """A flow step produced a non-finite state even at the smallest step."""


@dataclass(frozen=True)
class BoundarySpec:
    """Which states are pinned at each end of the horizon, and to what."""

    init_fixed: np.ndarray
    init_value: np.ndarray
    fin_fixed: np.ndarray
    fin_value: np.ndarray

    def __post_init__(self):
        for fixed, value in ((self.init_fixed, self.init_value),
                             (self.fin_fixed, self.fin_value)):
            if fixed.shape != value.shape or fixed.ndim != 1:
                raise ValueError("boundary masks and values must be 1-d and match")
            if not np.all(np.isfinite(value[fixed])):
                raise ValueError("fixed boundary entries must be finite")

    @property
    def n(self) -> int:
        return self.init_fixed.shape[0]

    @classmethod
    def from_endpoints(cls, x_init: Sequence, x_fin: Sequence) -> "BoundarySpec":
        """Build from endpoint vectors where None marks a free state."""
        def split(vec):
            fixed = np.array([v is not None for v in vec], dtype=bool)
            value = np.array([float(v) if v is not None else np.nan for v in vec])
            return fixed, value

        fi, vi = split(x_init)
        ff, vf = split(x_fin)
        if fi.shape != ff.shape:
            raise ValueError("endpoint vectors must have equal length")
        return cls(init_fixed=fi, init_value=vi, fin_fixed=ff, fin_value=vf)


@dataclass
class CurveGrid:
    """Discretized curve: states X[i] at times[i], at flow parameter s."""

    times: np.ndarray
    X: np.ndarray
    s: float = 0.0

    def __post_init__(self):
        self.times = np.asarray(self.times, float)
        self.X = np.asarray(self.X, float)
        if self.times.ndim != 1 or self.times.size < 2:
            raise ValueError("need at least two grid points")
        if self.X.shape[0] != self.times.size:
            raise ValueError("state rows must match grid times")
        steps = np.diff(self.times)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
            raise ValueError("time grid must be uniform")

    @property
    def n_t(self) -> int:
        return self.times.size

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def copy(self) -> "CurveGrid":
        return CurveGrid(times=self.times.copy(), X=self.X.copy(), s=self.s)


@dataclass(frozen=True)
class SolverConfig:
    """Flow horizon, step-size policy and stopping rules."""

    s_max: float = 1e-3
    ds_init: float = 1e-7
    ds_growth: float = 1.2
    ds_shrink: float = 0.5
    stationarity_tol: float | None = None   # default 1e-9 * n * N_t
    max_steps: int = 400_000
    max_retries: int = 60

    def __post_init__(self):
        if self.s_max <= 0 or self.ds_init <= 0:
            raise ValueError("s_max and ds_init must be positive")
        if not 0 < self.ds_shrink < 1 or self.ds_growth < 1:
            raise ValueError("need 0 < ds_shrink < 1 <= ds_growth")


@dataclass(frozen=True)
class StepDiagnostics:
    max_psi: float
    energy_before: float
    energy_after: float


@dataclass
class SolveResult:
    grid: CurveGrid
    converged: bool
    reason: str
    trace: list
    snapshots: dict = field(default_factory=dict)

    @property
    def energy(self) -> float:
        return self.trace[-1][1] if self.trace else np.nan


def initial_curve(bc: BoundarySpec, x_init: np.ndarray, x_fin: np.ndarray,
                  n_t: int, horizon: float) -> CurveGrid:
    """Straight line between the endpoint anchor vectors.

    ``x_init``/``x_fin`` must be full, finite vectors: fixed entries carry
    the boundary values, free entries whatever anchor the scenario wants
    the initial guess to interpolate (zeros when indifferent).
    """
    if n_t < 2:
        raise ValueError("need at least two grid points")
    x_init = np.asarray(x_init, float)
    x_fin = np.asarray(x_fin, float)
    if not (np.all(np.isfinite(x_init)) and np.all(np.isfinite(x_fin))):
        raise ValueError("anchor vectors must be finite everywhere")
    times = np.linspace(0.0, horizon, n_t)
    w = (times / horizon)[:, None]
    X = (1.0 - w) * x_init[None, :] + w * x_fin[None, :]
    return CurveGrid(times=times, X=X, s=0.0)


def apply_boundary(grid: CurveGrid, bc: BoundarySpec, system) -> None:
    """Clamp fixed states and drift-match free states at both ends.

    Free states solve x[end] = x[inner] -+ dt * F_d(x[end]) by fixed-point
    iteration; for states whose drift row is zero this is a plain copy of
    the neighbouring row.
    """
    X, dt = grid.X, grid.dt
    X[0, bc.init_fixed] = bc.init_value[bc.init_fixed]
    X[-1, bc.fin_fixed] = bc.fin_value[bc.fin_fixed]

    for row, inner, sign, fixed in ((0, 1, -1.0, bc.init_fixed),
                                    (-1, -2, 1.0, bc.fin_fixed)):
        free = ~fixed
        if not np.any(free):
            continue
        for _ in range(50):
            target = X[inner, free] + sign * dt * system.drift(X[row])[free]
            delta = np.max(np.abs(target - X[row, free]))
            X[row, free] = target
            if delta < 1e-13:
                break


def flow_step(grid: CurveGrid, ds: float, evaluator: LagrangianEvaluator,
              bc: BoundarySpec, system) -> tuple:
    """One explicit Euler step of size ds; returns (new grid, diagnostics).

    Raises StepDiverged if the update produces non-finite states. The
    caller decides acceptance from the energy diagnostics.
    """
    if ds <= 0:
        raise ValueError("ds must be positive")
    psi = evaluator.flow_rhs(grid.times, grid.X)
    e_before = evaluator.energy(grid.times, grid.X)
    return _apply_step(grid, ds, psi, e_before, evaluator, bc, system)


def _apply_step(grid, ds, psi, e_before, evaluator, bc, system):
    max_psi = float(np.max(np.abs(psi)))
    new = grid.copy()
    new.X += ds * psi
    apply_boundary(new, bc, system)
    if not np.all(np.isfinite(new.X)):
        raise StepDiverged(f"non-finite state after step ds={ds:g}")
    new.s = grid.s + ds
    e_after = evaluator.energy(new.times, new.X)
    return new, StepDiagnostics(max_psi=max_psi, energy_before=e_before,
                                energy_after=e_after)


def solve(grid: CurveGrid, config: SolverConfig, evaluator: LagrangianEvaluator,
          bc: BoundarySpec, system, checkpoints: Sequence[float] = ()) -> SolveResult:
    """March the flow to s_max or stationarity; energy never increases.

    Each accepted step appends (s, E, max|Psi|, ds) to the trace. If
    ``checkpoints`` are given, a copy of the grid is stored the first time
    s passes each value. Exhausting max_steps while the energy still falls
    by more than 0.1% per step returns the best curve flagged unconverged.
    """
    grid = grid.copy()
    apply_boundary(grid, bc, system)
    stat_tol = config.stationarity_tol
    if stat_tol is None:
        stat_tol = 1e-9 * grid.X.shape[1] * grid.n_t

    remaining = sorted(float(c) for c in checkpoints)
    snapshots: dict = {}

    def take_checkpoints():
        while remaining and grid.s >= remaining[0] - 1e-15:
            snapshots[remaining.pop(0)] = grid.copy()

    energy = evaluator.energy(grid.times, grid.X)
    psi = evaluator.flow_rhs(grid.times, grid.X)
    max_psi = float(np.max(np.abs(psi)))
    ds = config.ds_init
    trace = [(grid.s, energy, max_psi, ds)]
    take_checkpoints()

    steps = 0
    last_drop = np.inf
    while grid.s < config.s_max and steps < config.max_steps:
        if max_psi * ds < stat_tol:
            take_checkpoints()
            return SolveResult(grid=grid, converged=True, reason="stationary",
                               trace=trace, snapshots=snapshots)
        step_ds = min(ds, config.s_max - grid.s)
        accepted = False
        for _ in range(config.max_retries):
            try:
                new, diag = _apply_step(grid, step_ds, psi, energy,
                                        evaluator, bc, system)
            except StepDiverged:
                step_ds *= config.ds_shrink
                ds = step_ds
                continue
            if diag.energy_after <= diag.energy_before + 1e-9:
                accepted = True
                break
            step_ds *= config.ds_shrink
            ds = step_ds
        if not accepted:
            raise StepDiverged(
                f"no acceptable step at s={grid.s:g}, ds={step_ds:g}")

        last_drop = (energy - diag.energy_after) / max(abs(energy), 1e-30)
        grid = new
        energy = diag.energy_after
        psi = evaluator.flow_rhs(grid.times, grid.X)
        max_psi = float(np.max(np.abs(psi)))
        ds = step_ds * config.ds_growth
        trace.append((grid.s, energy, max_psi, step_ds))
        take_checkpoints()
        steps += 1

    if grid.s >= config.s_max:
        return SolveResult(grid=grid, converged=True, reason="s_max reached",
                           trace=trace, snapshots=snapshots)
    converged = last_drop <= 1e-3
    reason = "max steps" if converged else "max steps, energy still falling"
    return SolveResult(grid=grid, converged=converged, reason=reason,
                       trace=trace, snapshots=snapshots)


def write_trace_csv(trace: Sequence, path) -> None:
    """Convergence trace as CSV rows (s, E, max_psi, ds)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["s", "energy", "max_psi", "ds"])
        for row in trace:
            writer.writerow([repr(float(v)) for v in row])
