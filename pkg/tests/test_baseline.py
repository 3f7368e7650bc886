import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from arto.baseline import BaselineConfig, affine_rollout, build_qp, fixed_durations, solve_baseline
from arto.lip import ComState, FootPosition
from arto.orchestrator import run, stationary_scenario
from arto.problem import (ConstraintSet, FootstepPlan, PlanningProblem, PlanningState, Reference,
                          Side, Source)
from arto.selfcheck import random_case
from oracles import oracle_rollout


def test_config_validation():
    with pytest.raises(ValueError):
        BaselineConfig(fixed_dt=0.0)


def test_fixed_durations_account_for_elapsed_time():
    state = PlanningState(ComState(0, 0, 0, 0), FootPosition(0, 0.15), Side.LEFT, 0.2)
    assert np.allclose(fixed_durations(state, BaselineConfig(0.5)), [0.3, 0.5, 0.5])
    late = PlanningState(ComState(0, 0, 0, 0), FootPosition(0, 0.15), Side.LEFT, 0.7)
    assert fixed_durations(late, BaselineConfig(0.5))[0] == 0.0


def test_affine_rollout_matches_closed_form(problem, rng):
    for _ in range(50):
        _, state, _ = random_case(rng, problem, feasible=False)
        d = fixed_durations(state, BaselineConfig(0.5))
        offset, gain = affine_rollout(state, d, problem)
        feet = rng.uniform(-0.4, 0.4, (2, 2))
        got = offset + gain @ feet.ravel()
        want, _ = oracle_rollout(FootstepPlan(feet, d, state.stance), state, problem.lip.omega)
        assert np.allclose(got, want, rtol=0, atol=1e-12)


def test_single_step_optimum_zeroes_next_velocity_error():
    cs = ConstraintSet(l_max=100.0, r_foot=0.0)
    prob = PlanningProblem(constraints=cs, horizon=1)
    cfg = BaselineConfig(0.5, horizon=1)
    state = PlanningState(ComState(0.02, 0.05, 0.1, 0.2), FootPosition(0.0, 0.6), Side.LEFT, 0.1)
    ref = Reference(0.3, -0.25)
    plan = solve_baseline(state, ref, prob, cfg)
    # hand solution: velocity at the end of the step on u1 is linear in u1 per axis
    w = prob.lip.omega
    s1, _ = oracle_rollout(FootstepPlan(np.zeros((1, 2)), np.array([0.4, 0.5]), Side.LEFT),
                           state, w)
    p1, v1 = s1[1, :2], s1[1, 2:]
    c, sh = math.cosh(0.5 * w), math.sinh(0.5 * w)
    u = p1 + (v1 * c - np.array([ref.vx_ref, ref.vy_ref])) / (w * sh)
    assert plan.feasible
    assert np.allclose(plan.feet[0], u, atol=1e-7)


def test_qp_solution_matches_generic_solver(exp_problem, rng):
    cfg = BaselineConfig(horizon=exp_problem.horizon)
    checked = 0
    for _ in range(30):
        _, state, ref = random_case(rng, exp_problem, feasible=False)
        h, q, a, b, _ = build_qp(state, ref, exp_problem, cfg)
        plan = solve_baseline(state, ref, exp_problem, cfg)
        res = minimize(lambda x: 0.5 * x @ h @ x + q @ x, np.zeros(q.size),
                       jac=lambda x: h @ x + q, method="SLSQP",
                       constraints=[{"type": "ineq", "fun": lambda x: b - a @ x,
                                     "jac": lambda x: -a}],
                       options={"maxiter": 500, "ftol": 1e-14})
        ok = res.success and np.all(a @ res.x <= b + 1e-7)
        if not plan.feasible:
            assert not ok
            continue
        x = plan.feet.ravel()
        assert np.all(a @ x <= b + 1e-9)
        if ok:
            f = 0.5 * x @ h @ x + q @ x
            assert f <= res.fun + 1e-7 * max(1.0, abs(res.fun))
            checked += 1
    assert checked >= 10


def test_crossing_rows_follow_stance():
    prob = PlanningProblem()
    for stance, sign in ((Side.LEFT, 1.0), (Side.RIGHT, -1.0)):
        state = PlanningState(ComState(0, 0, 0, 0), FootPosition(0, sign * 0.15), stance, 0.0)
        plan = solve_baseline(state, Reference(), prob)
        assert sign * (state.current_foot.uy - plan.feet[0, 1]) >= prob.constraints.r_foot - 1e-9
        assert sign * (plan.feet[1, 1] - plan.feet[0, 1]) >= prob.constraints.r_foot - 1e-9


def test_unreachable_state_is_infeasible(exp_problem):
    state = PlanningState(ComState(0.0, 0.0, 6.0, 0.0), FootPosition(0.0, 0.15), Side.LEFT, 0.0)
    plan = solve_baseline(state, Reference(), exp_problem)
    assert not plan.feasible
    assert plan.source == Source.BASELINE


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.3, 0.8))
def test_plans_keep_fixed_durations(seed, dt):
    prob = PlanningProblem()
    _, state, ref = random_case(np.random.default_rng(seed), prob, feasible=False)
    cfg = BaselineConfig(dt, horizon=2)
    plan = solve_baseline(state, ref, prob, cfg)
    assert plan.source == Source.BASELINE
    assert np.array_equal(plan.durations, fixed_durations(state, cfg))


def test_assisted_start_settles_into_fixed_period(cfg):
    sc = stationary_scenario(cfg.problem(), "baseline", assist=True, duration=6.0,
                             **{k: v for k, v in cfg.scenario_kw().items()
                                if k not in ("record_every",)}, record_every=0)
    tr = run(sc)
    assert not tr.fallen
    d = np.array([s.duration for s in tr.steps[2:]])
    assert np.allclose(d, cfg["baseline.fixed_dt"], atol=2e-3)
    widths = np.array([abs(s.foot[1] - p.foot[1]) for p, s in zip(tr.steps[-4:], tr.steps[-3:])])
    assert np.ptp(widths) < 1e-3
