import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arto.lip import (ComState, FootPosition, InputDomainError, Integrator, LipParams,
                      closed_form_step, closed_form_step_exp, error_table_csv, integrate_step,
                      integration_error_table, max_error)

finite = st.floats(-2.0, 2.0, allow_nan=False)
heights = st.floats(0.4, 1.2)
states = st.builds(ComState, finite, finite, finite, finite)
feet = st.builds(FootPosition, st.floats(-1, 1), st.floats(-1, 1))


def reference_step(s, u, dt, w):
    # textbook hyperbolic solution, one axis at a time
    out = []
    for x, v, p in ((s.x, s.vx, u.ux), (s.y, s.vy, u.uy)):
        c, sh = math.cosh(w * dt), math.sinh(w * dt)
        out.append(((x - p) * c + v / w * sh + p, v * c + w * (x - p) * sh))
    return ComState(out[0][0], out[1][0], out[0][1], out[1][1])


def test_omega():
    assert LipParams(9.81, 0.8).omega == pytest.approx(math.sqrt(9.81 / 0.8), rel=1e-15)


@pytest.mark.parametrize("bad", [0.0, -1.0, float("nan"), float("inf")])
def test_bad_height_rejected(bad):
    with pytest.raises(InputDomainError):
        LipParams(h=bad)


def test_zero_dt_is_identity():
    s = ComState(0.1, -0.2, 0.3, 0.4)
    assert closed_form_step(s, FootPosition(0.0, 0.0), 0.0, LipParams()) == s


def test_at_rest_over_foot_stays():
    s = ComState(0.2, 0.1, 0.0, 0.0)
    out = closed_form_step(s, FootPosition(0.2, 0.1), 0.7, LipParams())
    assert out == s


def test_non_finite_input_rejected():
    with pytest.raises(InputDomainError):
        closed_form_step(ComState(0, 0, 0, 0), FootPosition(0, 0), float("nan"), LipParams())
    with pytest.raises(InputDomainError):
        integrate_step(ComState(0, 0, 0, 0), FootPosition(0, 0), 0.1, LipParams(), "rk4", 0)
    with pytest.raises(InputDomainError):
        integrate_step(ComState(0, 0, 0, 0), FootPosition(0, 0), 0.1, LipParams(), "midpoint")


@settings(max_examples=200, deadline=None)
@given(states, feet, st.floats(0.0, 1.0), heights)
def test_matches_textbook_solution(s, u, dt, h):
    p = LipParams(h=h)
    a = np.array(closed_form_step(s, u, dt, p).as_array())
    b = np.array(reference_step(s, u, dt, p.omega).as_array())
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(states, feet, st.floats(0.0, 1.0), heights)
def test_exponential_form_agrees(s, u, dt, h):
    p = LipParams(h=h)
    a = np.array(closed_form_step(s, u, dt, p).as_array())
    b = np.array(closed_form_step_exp(s, u, dt, p).as_array())
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(states, feet, st.floats(0.0, 0.5), st.floats(0.0, 0.5), heights)
def test_semigroup(s, u, a, b, h):
    p = LipParams(h=h)
    one = np.array(closed_form_step(s, u, a + b, p).as_array())
    two = np.array(closed_form_step(closed_form_step(s, u, a, p), u, b, p).as_array())
    assert np.allclose(one, two, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(one).max()))


@settings(max_examples=200, deadline=None)
@given(states, feet, st.floats(0.0, 1.0), heights)
def test_time_reversal(s, u, dt, h):
    p = LipParams(h=h)
    back = closed_form_step(closed_form_step(s, u, dt, p), u, -dt, p)
    a, b = np.array(back.as_array()), np.array(s.as_array())
    assert np.allclose(a, b, rtol=1e-9, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(states, feet, st.floats(0.0, 1.0))
def test_axes_decouple(s, u, dt):
    p = LipParams()
    both = closed_form_step(s, u, dt, p)
    only_x = closed_form_step(ComState(s.x, 0.0, s.vx, 0.0), FootPosition(u.ux, 0.0), dt, p)
    only_y = closed_form_step(ComState(0.0, s.y, 0.0, s.vy), FootPosition(0.0, u.uy), dt, p)
    assert (both.x, both.vx) == (only_x.x, only_x.vx)
    assert (both.y, both.vy) == (only_y.y, only_y.vy)


def test_rk4_beats_heun_beats_euler():
    p = LipParams(h=0.6)
    s, u = ComState(0.001, 0.0, 0.0, 0.0), FootPosition(0.0, 0.0)
    exact = closed_form_step(s, u, 1.0, p).x
    err = {m: abs(integrate_step(s, u, 1.0, p, m, 6).x - exact) for m in Integrator}
    assert err[Integrator.RK4] < err[Integrator.HEUN] < err[Integrator.EULER]


def test_rk4_is_fourth_order():
    p = LipParams()
    s, u = ComState(0.05, -0.02, 0.1, 0.2), FootPosition(0.0, 0.0)
    exact = np.array(closed_form_step(s, u, 0.5, p).as_array())
    e = [np.abs(np.array(integrate_step(s, u, 0.5, p, "rk4", n).as_array()) - exact).max()
         for n in (8, 16)]
    assert 14 < e[0] / e[1] < 18


def test_error_table_shape_and_csv():
    rows = integration_error_table(LipParams(h=0.6), 0.001, 1.0, 0.1)
    assert len(rows) == 3 * 4 * 11
    text = error_table_csv(rows)
    assert text.splitlines()[0] == "t,method,substeps,abs_error"
    assert all(r.abs_error == 0.0 for r in rows if r.t == 0.0)
    assert max_error(rows, "RK4", 7) < max_error(rows, "RK4", 4)
