"""Randomised consistency checks: analytical gradients and integrator accuracy."""

from __future__ import annotations

import math

import numpy as np

from .gd_optimizer import gradient, sensitivities
from .lip import ComState, FootPosition, Integrator, LipParams, closed_form_step, integrate_step
from .problem import (FootstepPlan, PlanningProblem, PlanningState, Reference, Side, Source,
                      is_feasible, predicted_states, soft_cost)

# relative tolerance the RK4(6) map has to meet in the self-check; the
# one-in-a-million target is out of reach for steps approaching 1 s
RK4_CHECK_TOL = 2e-3


def random_case(rng: np.random.Generator, problem: PlanningProblem, feasible: bool = True,
                max_tries: int = 10_000):
    """(plan, state, ref) drawn around an in-place gait; rejection-sampled for
    feasibility when asked."""
    c = problem.constraints
    n = problem.horizon
    for _ in range(max_tries):
        stance = Side.LEFT if rng.random() < 0.5 else Side.RIGHT
        s = int(stance)
        foot = FootPosition(rng.uniform(-0.05, 0.05), s * rng.uniform(0.08, 0.2))
        com = ComState(rng.uniform(-0.1, 0.1), rng.uniform(-0.08, 0.08),
                       rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4))
        tis = rng.uniform(0.0, 0.6 * c.t_lower)
        state = PlanningState(com, foot, stance, tis)
        feet = []
        side = stance
        x = com.x
        for _ in range(n):
            side = side.other
            x += rng.uniform(-0.1, 0.15)
            feet.append((x, int(side) * rng.uniform(0.08, 0.22) + rng.uniform(-0.03, 0.03)))
        lo, hi = problem.current_step_bounds(state)
        d = [rng.uniform(max(lo, 0.05), min(hi, 0.5))]
        d += list(rng.uniform(c.t_lower + 0.02, c.t_upper - 0.02, n))
        plan = FootstepPlan(np.array(feet), np.array(d), stance, Source.NOMINAL, True)
        ref = Reference(rng.uniform(-0.3, 0.3), rng.uniform(-0.2, 0.2))
        if not feasible or is_feasible(plan, state, problem):
            return plan, state, ref
    raise RuntimeError("could not draw a feasible plan")


def fd_gradient(plan: FootstepPlan, state: PlanningState, ref: Reference,
                problem: PlanningProblem, h: float = 1e-6) -> np.ndarray:
    z = plan.to_vector()
    g = np.empty_like(z)
    for i in range(z.size):
        zp, zm = z.copy(), z.copy()
        zp[i] += h
        zm[i] -= h
        fp, _ = soft_cost(FootstepPlan.from_vector(zp, plan.stance), state, ref, problem)
        fm, _ = soft_cost(FootstepPlan.from_vector(zm, plan.stance), state, ref, problem)
        g[i] = (fp - fm) / (2 * h)
    return g


def fd_sensitivities(plan: FootstepPlan, state: PlanningState, problem: PlanningProblem,
                     h: float = 1e-6) -> np.ndarray:
    """Central differences of the predicted states at the end of every step,
    shaped (steps, 4, variables)."""
    z = plan.to_vector()
    out = []
    for i in range(z.size):
        zp, zm = z.copy(), z.copy()
        zp[i] += h
        zm[i] -= h
        sp = predicted_states(FootstepPlan.from_vector(zp, plan.stance), state, problem)
        sm = predicted_states(FootstepPlan.from_vector(zm, plan.stance), state, problem)
        out.append((sp[1:] - sm[1:]) / (2 * h))
    return np.stack(out, axis=-1)


def analytic_sensitivities(plan: FootstepPlan, state: PlanningState,
                           problem: PlanningProblem) -> np.ndarray:
    """The sensitivity table laid out like :func:`fd_sensitivities`."""
    t = sensitivities(plan, state, problem)
    n = plan.horizon
    m = t.d_pos_d_foot.shape[0]
    out = np.zeros((m, 4, 3 * n + 1))
    for k in range(n):
        for a in range(2):
            out[:, a, 2 * k + a] = t.d_pos_d_foot[:, k, a]
            out[:, 2 + a, 2 * k + a] = t.d_vel_d_foot[:, k, a]
    for k in range(n + 1):
        out[:, 0:2, 2 * n + k] = t.d_pos_d_dt[:, k]
        out[:, 2:4, 2 * n + k] = t.d_vel_d_dt[:, k]
    return out


def check_gradients(problem: PlanningProblem, n: int = 100, seed: int = 0,
                    rtol: float = 1e-5, atol: float = 1e-8) -> tuple[bool, float]:
    """Worst mismatch between analytical and central-difference derivatives,
    measured as max |a - b| / (atol + rtol |b|) (pass when <= 1)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        plan, state, ref = random_case(rng, problem)
        ga = gradient(plan, state, ref, problem, reject=math.inf).as_vector()
        gf = fd_gradient(plan, state, ref, problem)
        worst = max(worst, float(np.max(np.abs(ga - gf) / (atol + rtol * np.abs(gf)))))
        sa = analytic_sensitivities(plan, state, problem)
        sf = fd_sensitivities(plan, state, problem)
        worst = max(worst, float(np.max(np.abs(sa - sf) / (atol + rtol * np.abs(sf)))))
    return worst <= 1.0, worst


def rk4_relative_errors(params: LipParams, n: int = 1000, seed: int = 0, dt_max: float = 0.8,
                        substeps: int = 6, method=Integrator.RK4) -> np.ndarray:
    """Relative state error of the integrator against the exact map on random draws."""
    rng = np.random.default_rng(seed)
    out = np.empty(n)
    for i in range(n):
        s = ComState(*rng.uniform(-0.3, 0.3, 2), *rng.uniform(-1.0, 1.0, 2))
        f = FootPosition(*rng.uniform(-0.3, 0.3, 2))
        dt = rng.uniform(0.0, dt_max)
        a = np.array(integrate_step(s, f, dt, params, method, substeps).as_array())
        b = np.array(closed_form_step(s, f, dt, params).as_array())
        out[i] = np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)
    return out


def check_integrator(params: LipParams, n: int = 1000, seed: int = 0,
                     tol: float = RK4_CHECK_TOL) -> tuple[bool, float]:
    """RK4(6) within ``tol`` and strictly better than Heun and Euler on the worst draw."""
    e = {m: rk4_relative_errors(params, n, seed, method=m).max()
         for m in (Integrator.RK4, Integrator.HEUN, Integrator.EULER)}
    worst = float(e[Integrator.RK4])
    ok = worst <= tol and e[Integrator.RK4] < e[Integrator.HEUN] < e[Integrator.EULER]
    return bool(ok), worst


def run_checks(problem: PlanningProblem, seed: int = 0, n_grad: int = 100,
               n_int: int = 1000) -> list[tuple[str, bool, str]]:
    ok_g, worst_g = check_gradients(problem, n_grad, seed)
    ok_i, worst_i = check_integrator(problem.lip, n_int, seed)
    return [
        ("gradient_vs_finite_difference", ok_g, f"worst scaled mismatch {worst_g:.3g} (<= 1)"),
        ("rk4_vs_closed_form", ok_i, f"worst relative error {worst_i:.3g} (<= {RK4_CHECK_TOL:g})"),
    ]
