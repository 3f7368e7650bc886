"""Low-rate nonlinear footstep optimizer over RK4-discretized dynamics."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .lip import DEFAULT_SUBSTEPS
from .problem import (FootstepPlan, PlanningProblem, PlanningState, Reference, Source,
                      is_feasible, nominal_plan, state_arrays)

log = logging.getLogger(__name__)

MIRROR_Y = np.array([[1.0, 0.0], [0.0, -1.0]])


@dataclass(frozen=True)
class NlpSolution:
    plan: FootstepPlan
    objective: float
    iterations: int
    converged: bool
    solve_time: float


@dataclass(frozen=True)
class WarmStart:
    previous: FootstepPlan
    elapsed: float = 0.0
    step_taken: bool = False

    def __post_init__(self):
        if not self.elapsed >= 0:
            raise ValueError("elapsed time must be non-negative")


def shift_plan(plan: FootstepPlan) -> FootstepPlan:
    """Drop the step that was just completed and synthesize a new last step.

    The new last foot repeats the previous last displacement mirrored in y and
    the last duration is repeated.
    """
    feet = plan.feet
    n = plan.horizon
    new_feet = np.empty_like(feet)
    new_feet[: n - 1] = feet[1:]
    if n >= 2:
        new_feet[n - 1] = new_feet[n - 2] + MIRROR_Y @ (feet[n - 1] - feet[n - 2])
    else:
        # a single-foot horizon has no penultimate step; mirror about the foot itself
        new_feet[0] = feet[0] + MIRROR_Y @ (feet[0] - feet[0])
    d = plan.durations
    new_d = np.empty_like(d)
    new_d[:n] = d[1:]
    new_d[n] = d[n]
    return plan.with_(feet=new_feet, durations=new_d, stance=plan.stance.other)


def warm_start_plan(warm: WarmStart) -> FootstepPlan:
    """Initial guess for the next solve.

    Without a step the current remaining duration is reduced by the elapsed
    time (floored at zero). After a step the plan is shifted one slot first and
    ``elapsed`` counts from the support exchange.
    """
    plan = shift_plan(warm.previous) if warm.step_taken else warm.previous
    d = plan.durations.copy()
    d[0] = max(d[0] - warm.elapsed, 0.0)
    return plan.with_(durations=d)


class RK4Optimizer:
    """Stateful wrapper around the compiled SQP loop.

    Keeps the last solution for warm starting. ``reach_margin`` tightens the
    leg-reach limit so that plans stay feasible under the exact dynamics
    despite the integration error.
    """

    def __init__(self, problem: PlanningProblem, substeps: int = DEFAULT_SUBSTEPS,
                 max_iter: int = 200, feas_tol: float = 1e-6, opt_tol: float = 1e-6,
                 trust: float = 0.3, reach_margin: float = 2e-3, trace_path=None):
        self.problem = problem
        self.substeps = substeps
        self.max_iter = max_iter
        self.feas_tol = feas_tol
        self.opt_tol = opt_tol
        self.trust = trust
        self.reach_margin = reach_margin
        self.trace_path = trace_path
        self.last: NlpSolution | None = None

    def objective(self, plan: FootstepPlan, state: PlanningState, ref: Reference) -> float:
        x0, f0, stance = state_arrays(state)
        n = plan.horizon
        m = K.n_constraints(n)
        prm = self.problem.param_vector(state, ref, self.reach_margin)
        return float(K.rk4_objective(plan.to_vector(), x0, f0, stance, prm, self.substeps,
                                     np.empty((n + 2, 4)), np.empty(m), np.empty(m)))

    def solve(self, state: PlanningState, ref: Reference,
              warm: WarmStart | FootstepPlan | None = None) -> NlpSolution:
        start = time.perf_counter()
        if warm is None:
            guess = nominal_plan(state, self.problem)
        elif isinstance(warm, WarmStart):
            guess = warm_start_plan(warm)
        else:
            guess = warm
        if guess.horizon != self.problem.horizon:
            raise ValueError("warm start does not match the planning horizon")
        guess = self._clip(guess, state)
        iters, status, f, z = self._run(guess, state, ref)
        if status == K.SQP_NAN:
            log.warning("NaN in SQP iterate; restarting from the nominal plan")
            more, status, f, z = self._run(self._clip(nominal_plan(state, self.problem), state),
                                           state, ref)
            iters += more
        plan = FootstepPlan.from_vector(z, state.stance, Source.RK4, False)
        feasible = (status in (K.SQP_CONVERGED, K.SQP_CAP_FEASIBLE)
                    and is_feasible(plan, state, self.problem, self.feas_tol))
        sol = NlpSolution(plan.with_(feasible=feasible), float(f), int(iters),
                          status == K.SQP_CONVERGED and feasible, time.perf_counter() - start)
        self.last = sol
        return sol

    def _clip(self, plan: FootstepPlan, state: PlanningState) -> FootstepPlan:
        lo, hi = self.problem.current_step_bounds(state)
        c = self.problem.constraints
        d = plan.durations.copy()
        d[0] = min(max(d[0], lo), hi)
        d[1:] = np.clip(d[1:], c.t_lower, c.t_upper)
        return plan.with_(durations=d, stance=state.stance)

    def _run(self, guess: FootstepPlan, state: PlanningState, ref: Reference):
        x0, f0, stance = state_arrays(state)
        z = guess.to_vector().copy()
        prm = self.problem.param_vector(state, ref, self.reach_margin)
        trace = np.full((self.max_iter + 1, 2), np.nan)
        iters, status, f, _ = K.sqp(z, x0, f0, stance, prm, self.substeps, self.max_iter,
                                    self.feas_tol, self.opt_tol, self.trust, trace)
        if self.trace_path is not None:
            self._write_trace(trace[: iters + 1])
        return iters, status, f, z

    def _write_trace(self, trace):
        with open(self.trace_path, "a", newline="") as fh:
            w = csv.writer(fh)
            if fh.tell() == 0:
                w.writerow(["iteration", "objective", "max_residual"])
            for i, (f, v) in enumerate(trace):
                w.writerow([i, repr(float(f)), repr(float(v))])
