"""High-rate gradient descent on the penalised cost with analytical gradients."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .problem import (FootstepPlan, PlanningProblem, PlanningState, Reference, Source,
                      is_feasible, state_arrays)
from .rk4_optimizer import NlpSolution, WarmStart, warm_start_plan


@dataclass(frozen=True)
class SensitivityTable:
    """Derivatives of the predicted boundary states.

    Row ``j`` is the state at the end of step ``j`` (``j = 0`` ends the
    current step). ``d_pos_d_foot[j, k, a]`` is the derivative of the axis-``a``
    position with respect to the same-axis coordinate of future foot ``k``;
    ``d_pos_d_dt[j, k, a]`` is with respect to duration ``k``. Velocities
    follow the same layout.
    """

    d_pos_d_foot: np.ndarray
    d_vel_d_foot: np.ndarray
    d_pos_d_dt: np.ndarray
    d_vel_d_dt: np.ndarray


@dataclass(frozen=True)
class GradientVector:
    d_ux: np.ndarray
    d_uy: np.ndarray
    d_dt: np.ndarray
    valid: bool
    value: float = float("nan")

    def as_vector(self) -> np.ndarray:
        n = self.d_ux.shape[0]
        out = np.empty(3 * n + 1)
        out[0: 2 * n: 2] = self.d_ux
        out[1: 2 * n: 2] = self.d_uy
        out[2 * n:] = self.d_dt
        return out

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.as_vector()))


def sensitivities(plan: FootstepPlan, state: PlanningState, problem: PlanningProblem) -> SensitivityTable:
    """Chain-rule recursion for the boundary states over the closed-form rollout.

    A foot first influences the state at the end of the step taken on it; a
    duration first influences the state at the end of its own step, where the
    derivative equals the CoM velocity (position) and acceleration (velocity).
    Later states inherit the influence through the step transition matrices.
    """
    if np.any(plan.durations < 0):
        raise ValueError("durations must be non-negative")
    n = plan.horizon
    z = plan.to_vector()
    x0, f0, _ = state_arrays(state)
    states = np.empty((n + 2, 4))
    jac = np.empty((n + 2, 4, 3 * n + 1))
    K.rollout(z, x0, f0, problem.lip.omega, K.EXACT, 1, states)
    K.state_jacobian(z, states, f0, problem.lip.omega, K.EXACT, 1, jac)
    b = jac[1:]
    foot_cols = [(2 * k, 2 * k + 1) for k in range(n)]
    dpf = np.stack([np.stack([b[:, 0, cx], b[:, 1, cy]], axis=-1) for cx, cy in foot_cols], axis=1)
    dvf = np.stack([np.stack([b[:, 2, cx], b[:, 3, cy]], axis=-1) for cx, cy in foot_cols], axis=1)
    dcols = range(2 * n, 3 * n + 1)
    dpt = np.stack([b[:, 0:2, c] for c in dcols], axis=1)
    dvt = np.stack([b[:, 2:4, c] for c in dcols], axis=1)
    return SensitivityTable(dpf, dvf, dpt, dvt)


def _split(vec: np.ndarray, n: int, valid: bool, value: float) -> GradientVector:
    return GradientVector(vec[0: 2 * n: 2].copy(), vec[1: 2 * n: 2].copy(), vec[2 * n:].copy(),
                          valid, value)


def gradient(plan: FootstepPlan, state: PlanningState, ref: Reference, problem: PlanningProblem,
             reject: float = 1e3) -> GradientVector:
    """Gradient of the penalised cost; ``valid`` is False when any component
    is non-finite or exceeds ``reject`` in magnitude."""
    n = plan.horizon
    m = K.n_constraints(n)
    nz = 3 * n + 1
    x0, f0, stance = state_arrays(state)
    grad = np.empty(nz)
    jp, _, valid = K.soft_gradient(plan.to_vector(), x0, f0, stance,
                                   problem.param_vector(state, ref),
                                   problem.constraints.weights(n), reject,
                                   np.empty((n + 2, 4)), np.empty((n + 2, 4, nz)), np.empty(m),
                                   np.empty(m), np.empty((m, nz)), grad)
    if not np.all(np.isfinite(grad)):
        grad = np.where(np.isfinite(grad), grad, 0.0)
        valid = False
    return _split(grad, n, bool(valid), float(jp))


@dataclass(frozen=True)
class DescentSettings:
    max_steps: int = 100
    alpha0: float = 0.01
    shrink: float = 0.5
    armijo: float = 1e-4
    grad_tol: float = 1e-6
    min_alpha: float = 1e-10
    grad_reject: float = 1e3


class GradientDescentOptimizer:
    """Keeps the current iterate between calls; one instance per thread."""

    def __init__(self, problem: PlanningProblem, settings: DescentSettings | None = None,
                 trace_path=None):
        self.problem = problem
        self.settings = settings or DescentSettings()
        self.trace_path = trace_path
        self.last: NlpSolution | None = None
        self.last_status: int | None = None
        self.force_invalid = False

    def descend(self, plan: FootstepPlan, state: PlanningState, ref: Reference,
                max_steps: int | None = None) -> NlpSolution:
        """Backtracking descent from ``plan``; the result is re-checked
        against the hard constraints."""
        s = self.settings
        steps = s.max_steps if max_steps is None else max_steps
        if steps < 1:
            raise ValueError("max_steps must be at least 1")
        start = time.perf_counter()
        n = plan.horizon
        x0, f0, stance = state_arrays(state)
        z = plan.with_(stance=state.stance).to_vector().copy()
        trace = np.full((steps + 1, 3), np.nan)
        reject = -1.0 if self.force_invalid else s.grad_reject
        taken, status, jp = K.descend(z, x0, f0, stance, self.problem.param_vector(state, ref),
                                      self.problem.constraints.weights(n), reject, steps,
                                      s.alpha0, s.shrink, s.armijo, s.grad_tol, s.min_alpha, trace)
        self.last_status = int(status)
        if self.trace_path is not None:
            self._write_trace(trace[~np.isnan(trace[:, 0])])
        if status == K.DESCENT_INVALID_FIRST:
            out = plan.with_(stance=state.stance, source=Source.GRADIENT_DESCENT, feasible=False)
        else:
            out = FootstepPlan.from_vector(z, state.stance, Source.GRADIENT_DESCENT, False)
            # an exploding gradient anywhere along the descent discards the result
            if status != K.DESCENT_INVALID:
                out = out.with_(feasible=is_feasible(out, state, self.problem))
        sol = NlpSolution(out, float(jp), int(taken),
                          status == K.DESCENT_CONVERGED, time.perf_counter() - start)
        self.last = sol
        return sol

    def solve(self, state: PlanningState, ref: Reference, warm: WarmStart | FootstepPlan) -> NlpSolution:
        guess = warm_start_plan(warm) if isinstance(warm, WarmStart) else warm
        return self.descend(guess, state, ref)

    def _write_trace(self, trace):
        with open(self.trace_path, "a", newline="") as fh:
            w = csv.writer(fh)
            if fh.tell() == 0:
                w.writerow(["step", "J", "J_p", "grad_norm"])
            for i, (j, jp, gn) in enumerate(trace):
                w.writerow([i, repr(float(j)), repr(float(jp)), repr(float(gn))])
