"""Location-only footstep MPC with fixed step timing.

With the durations frozen every predicted boundary state is affine in the
foot positions, so the tracking problem is a small dense QP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .problem import (FootstepPlan, PlanningProblem, PlanningState, Reference, Side, Source,
                      state_arrays)


@dataclass(frozen=True)
class BaselineConfig:
    fixed_dt: float = 0.5
    horizon: int = 2
    box_half_width: float | None = None
    assist_force: float = 40.0
    assist_duration: float = 0.1
    period: float = 0.002

    def __post_init__(self):
        if not self.fixed_dt > 0:
            raise ValueError("fixed_dt must be positive")

    def half_width(self, problem: PlanningProblem) -> float:
        if self.box_half_width is not None:
            return self.box_half_width
        return problem.constraints.l_max / math.sqrt(2.0)


def fixed_durations(state: PlanningState, config: BaselineConfig) -> np.ndarray:
    d = np.full(config.horizon + 1, config.fixed_dt)
    d[0] = max(config.fixed_dt - state.time_in_step, 0.0)
    return d


def affine_rollout(state: PlanningState, durations: np.ndarray, problem: PlanningProblem):
    """Boundary states as ``offset + gain @ feet`` for fixed durations.

    Returns (offset, gain) with shapes (N + 2, 4) and (N + 2, 4, 2N); feet
    are flattened as ``[u1x, u1y, u2x, u2y, ...]``.
    """
    n = durations.shape[0] - 1
    z = np.concatenate([np.zeros(2 * n), durations])
    x0, f0, _ = state_arrays(state)
    states = np.empty((n + 2, 4))
    jac = np.empty((n + 2, 4, 3 * n + 1))
    K.rollout(z, x0, f0, problem.lip.omega, K.EXACT, 1, states)
    K.state_jacobian(z, states, f0, problem.lip.omega, K.EXACT, 1, jac)
    return states, jac[:, :, : 2 * n].copy()


def build_qp(state: PlanningState, ref: Reference, problem: PlanningProblem,
             config: BaselineConfig):
    """Quadratic cost (H, q) and linear constraints ``A x <= b`` over the feet."""
    d = fixed_durations(state, config)
    n = config.horizon
    offset, gain = affine_rollout(state, d, problem)
    nv = 2 * n
    wx, wy = problem.weights.wx, problem.weights.wy
    h = np.zeros((nv, nv))
    q = np.zeros(nv)
    for j in range(1, n + 2):
        for axis, w, vr in ((2, wx, ref.vx_ref), (3, wy, ref.vy_ref)):
            row = gain[j, axis]
            h += 2.0 * w * np.outer(row, row)
            q += 2.0 * w * row * (offset[j, axis] - vr)
    h += 1e-9 * np.eye(nv)
    half = config.half_width(problem)
    f0 = state.current_foot.as_array()
    rows, rhs = [], []

    def foot_terms(k):
        sel = np.zeros((2, nv))
        if k > 0:
            sel[0, 2 * (k - 1)] = 1.0
            sel[1, 2 * (k - 1) + 1] = 1.0
            return sel, np.zeros(2)
        return sel, f0

    # reach pairs: (boundary row, foot index) as in the hard constraints
    pairs = [(k, k) for k in range(1, n + 1)] + [(k + 1, k) for k in range(n + 1)]
    for j, k in pairs:
        sel, const = foot_terms(k)
        for axis in range(2):
            lin = gain[j, axis] - sel[axis]
            c0 = offset[j, axis] - const[axis]
            rows.append(lin)
            rhs.append(half - c0)
            rows.append(-lin)
            rhs.append(half + c0)
    r = problem.constraints.r_foot
    stance = int(state.stance)
    for k in range(1, n + 1):
        sigma = -stance if k % 2 == 1 else stance
        lin = np.zeros(nv)
        lin[2 * (k - 1) + 1] = -sigma
        c0 = 0.0
        if k > 1:
            lin[2 * (k - 2) + 1] = sigma
        else:
            c0 = sigma * f0[1]
        rows.append(lin)
        rhs.append(-r - c0)
    return h, q, np.array(rows), np.array(rhs), d


def solve_baseline(state: PlanningState, ref: Reference, problem: PlanningProblem,
                   config: BaselineConfig | None = None) -> FootstepPlan:
    config = config or BaselineConfig(horizon=problem.horizon)
    h, q, a, b, d = build_qp(state, ref, problem, config)
    x = np.empty(h.shape[0])
    lam = np.empty(a.shape[0])
    status = K.qp_solve(h, q, a, b, x, lam)
    feasible = status == K.QP_OPTIMAL
    if not feasible:
        x = np.zeros(h.shape[0])
    return FootstepPlan(x.reshape(-1, 2), d, Side(state.stance), Source.BASELINE, feasible)
