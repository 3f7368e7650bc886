import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arto import _kernels as K
from arto.gd_optimizer import DescentSettings, GradientDescentOptimizer, gradient, sensitivities
from arto.lip import ComState, FootPosition, LipParams
from arto.problem import (ConstraintSet, FootstepPlan, PlanningProblem, PlanningState, Reference,
                          Side, Source, soft_cost)
from arto.rk4_optimizer import RK4Optimizer
from arto.selfcheck import (analytic_sensitivities, check_gradients, fd_gradient,
                            fd_sensitivities, random_case)
from arto.simulator import Impulse, periodic_in_place_state


def in_place(stance=Side.LEFT, tis=0.0):
    com, sup, _ = periodic_in_place_state(LipParams(), 0.15, 0.5, stance)
    return PlanningState(com, sup, stance, tis)


def test_lower_triangular(problem, rng):
    for _ in range(20):
        plan, state, _ = random_case(rng, problem)
        t = sensitivities(plan, state, problem)
        n = plan.horizon
        for j in range(n + 1):
            for k in range(n):
                # foot k+1 is stood on during step k+1, ending row k+1
                if j <= k:
                    assert np.all(t.d_pos_d_foot[j, k] == 0.0)
                    assert np.all(t.d_vel_d_foot[j, k] == 0.0)
            for k in range(n + 1):
                if j < k:
                    assert np.all(t.d_pos_d_dt[j, k] == 0.0)
                    assert np.all(t.d_vel_d_dt[j, k] == 0.0)


def test_duration_base_case_is_velocity_and_acceleration(problem, rng):
    plan, state, _ = random_case(rng, problem)
    t = sensitivities(plan, state, problem)
    from arto.problem import predicted_states
    s = predicted_states(plan, state, problem)
    w2 = problem.lip.omega ** 2
    feet = [state.current_foot.as_array()] + list(plan.feet)
    for k in range(plan.horizon + 1):
        assert np.allclose(t.d_pos_d_dt[k, k], s[k + 1, 2:], rtol=1e-12)
        assert np.allclose(t.d_vel_d_dt[k, k], w2 * (s[k + 1, :2] - feet[k]), rtol=1e-12)


def test_zero_duration_step_has_no_foot_influence(problem):
    plan, state = FootstepPlan(np.array([[0.0, -0.15], [0.0, 0.15]]),
                               np.array([0.3, 0.5, 0.0]), Side.LEFT), in_place()
    t = sensitivities(plan, state, problem)
    assert np.all(t.d_pos_d_foot[2, 1] == 0.0)
    assert np.all(t.d_vel_d_foot[2, 1] == 0.0)


def test_sensitivities_match_finite_differences(problem, rng):
    for _ in range(100):
        plan, state, _ = random_case(rng, problem)
        a = analytic_sensitivities(plan, state, problem)
        f = fd_sensitivities(plan, state, problem)
        assert np.all(np.abs(a - f) <= 1e-8 + 1e-5 * np.abs(f))


@pytest.mark.parametrize("which", ["problem", "exp_problem"])
def test_gradient_matches_finite_differences(which, request, rng):
    prob = request.getfixturevalue(which)
    for _ in range(100):
        plan, state, ref = random_case(rng, prob)
        g = gradient(plan, state, ref, prob, reject=math.inf)
        f = fd_gradient(plan, state, ref, prob)
        assert np.all(np.abs(g.as_vector() - f) <= 1e-8 + 1e-5 * np.abs(f))
        jp, _ = soft_cost(plan, state, ref, prob)
        assert g.value == pytest.approx(jp, rel=1e-12)


def test_selfcheck_agrees(problem):
    ok, worst = check_gradients(problem, n=10, seed=3)
    assert ok and worst <= 1.0


def test_gradient_vanishes_at_tracking_optimum():
    # at rest over every foot with zero reference; penalties made negligible
    cs = ConstraintSet(r_foot=0.0, w_reach=1e-12, w_crossing=1e-12, w_duration=1e-12)
    problem = PlanningProblem(constraints=cs)
    state = PlanningState(ComState(0.0, 0.0, 0.0, 0.0), FootPosition(0.0, 0.0), Side.LEFT, 0.0)
    plan = FootstepPlan(np.zeros((2, 2)), np.array([0.3, 0.5, 0.5]), Side.LEFT)
    g = gradient(plan, state, Reference(), problem)
    floor = 13 * 1e-12 * math.e * 100.0
    assert g.valid and g.norm < 10 * floor


def test_overdue_step_flags_invalid(problem):
    state = in_place(tis=0.5)
    plan = FootstepPlan(np.array([[0.0, -0.15], [0.0, 0.15]]), np.array([-0.05, 0.5, 0.5]),
                        Side.LEFT)
    g = gradient(plan, state, Reference(), problem)
    assert not g.valid
    assert np.all(np.isfinite(g.as_vector()))


def test_invalid_first_step_leaves_plan(problem):
    opt = GradientDescentOptimizer(problem)
    opt.force_invalid = True
    plan = FootstepPlan(np.array([[0.0, -0.15], [0.0, 0.15]]), np.array([0.5, 0.5, 0.5]),
                        Side.LEFT)
    sol = opt.descend(plan, in_place(), Reference())
    assert not sol.plan.feasible
    assert np.array_equal(sol.plan.to_vector(), plan.to_vector())
    assert opt.last_status == K.DESCENT_INVALID_FIRST


def test_max_steps_validated(problem):
    with pytest.raises(ValueError):
        GradientDescentOptimizer(problem).descend(
            FootstepPlan(np.zeros((2, 2)), np.full(3, 0.5), Side.LEFT), in_place(), Reference(),
            max_steps=0)


def test_descent_monotone_against_direct_evaluation(exp_problem):
    rng = np.random.default_rng(7)
    opt = GradientDescentOptimizer(exp_problem, DescentSettings(max_steps=1))
    for _ in range(1000):
        plan, state, ref = random_case(rng, exp_problem, feasible=False)
        prev, _ = soft_cost(plan, state, ref, exp_problem)
        for _ in range(5):
            sol = opt.descend(plan, state, ref)
            if opt.last_status in (K.DESCENT_INVALID_FIRST, K.DESCENT_INVALID):
                break
            plan = sol.plan
            cur, _ = soft_cost(plan, state, ref, exp_problem)
            assert cur <= prev + 1e-12 * max(1.0, abs(prev))
            prev = cur


def test_start_at_rk4_optimum_barely_moves(exp_problem):
    state = in_place()
    ref = Reference()
    rk = RK4Optimizer(exp_problem).solve(state, ref)
    assert rk.plan.feasible
    sol = GradientDescentOptimizer(exp_problem).descend(rk.plan, state, ref)
    assert np.max(np.abs(sol.plan.to_vector() - rk.plan.to_vector())) < 0.05
    assert sol.plan.source == Source.GRADIENT_DESCENT


def test_push_adapts_timing_first(exp_problem):
    # mid-stance on the left foot, then a lateral push
    state = in_place()
    ref = Reference()
    warm = RK4Optimizer(exp_problem).solve(state, ref).plan
    dv = Impulse(40.0, -math.pi / 2).delta_v
    c = state.com
    pushed = PlanningState(ComState(c.x, c.y, c.vx + dv[0], c.vy + dv[1]), state.current_foot,
                           state.stance, 0.0)
    opt = GradientDescentOptimizer(exp_problem)
    sol = opt.descend(warm, pushed, ref, max_steps=5)
    dz = np.abs(sol.plan.to_vector() - warm.to_vector())
    # timing moves more than the foot positions in the first few steps
    assert dz[4:].max() > dz[:4].max()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_y_mirror_symmetry(seed):
    problem = PlanningProblem()
    rng = np.random.default_rng(seed)
    plan, state, ref = random_case(rng, problem, feasible=False)
    c, f = state.com, state.current_foot
    m_state = PlanningState(ComState(c.x, -c.y, c.vx, -c.vy), FootPosition(f.ux, -f.uy),
                            state.stance.other, state.time_in_step)
    m_plan = plan.with_(feet=plan.feet * np.array([1.0, -1.0]), stance=plan.stance.other)
    m_ref = Reference(ref.vx_ref, -ref.vy_ref)
    a = gradient(plan, state, ref, problem, reject=math.inf)
    b = gradient(m_plan, m_state, m_ref, problem, reject=math.inf)
    assert np.allclose(a.d_ux, b.d_ux, rtol=1e-10, atol=1e-12)
    assert np.allclose(a.d_uy, -b.d_uy, rtol=1e-10, atol=1e-12)
    assert np.allclose(a.d_dt, b.d_dt, rtol=1e-10, atol=1e-12)


def test_iterate_trace_is_monotone(exp_problem, tmp_path):
    path = tmp_path / "gd.csv"
    rng = np.random.default_rng(2)
    plan, state, ref = random_case(rng, exp_problem)
    GradientDescentOptimizer(exp_problem, trace_path=path).descend(plan, state, ref)
    import csv
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["step", "J", "J_p", "grad_norm"]
    jp = [float(r[2]) for r in rows[1:]]
    assert len(jp) >= 2 and all(b <= a for a, b in zip(jp, jp[1:]))
