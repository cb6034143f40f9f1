import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from invkit.models import (EQ, W, X, Y, NoEquilibriumError, InvalidBoundError, RangeError,
                           SingularityError, SmibParams, ValidationError, appendix_b, box_system,
                           build_poly_system, equilibrium, from_scaled, in_state_set, physical_field,
                           taylor_remainder_bound, terminal_voltage, to_scaled)
from invkit.polyalg import Polynomial, lie_derivative
from invkit.sim import integrate
from invkit.sos import reduce_poly, sample_state_set


def test_params_validation():
    with pytest.raises(ValidationError):
        SmibParams(omega_M=1.5)
    with pytest.raises(ValidationError):
        SmibParams(H=0.0)
    with pytest.raises(ValidationError):
        SmibParams(x_d_prime=3.0)
    with pytest.raises(ValidationError):
        SmibParams.from_dict({"H": 5.0, "bogus": 1})
    p = appendix_b(3, C_m=0.7)
    assert p.X_l == 0.2 and p.C_m == 0.7
    assert SmibParams.from_dict(p.to_dict()) == p


def test_equilibrium_second_order():
    eq = equilibrium(2, appendix_b(2))
    assert eq[0] == pytest.approx(math.asin(0.48), abs=1e-12)
    assert eq[1] == 0.0
    assert np.allclose(equilibrium(2, appendix_b(2, C_m=0.0)), 0.0, atol=1e-14)


def test_equilibrium_overloaded_machine():
    with pytest.raises(NoEquilibriumError):
        equilibrium(2, appendix_b(2, C_m=1.5))


def test_equilibrium_third_order_residual_and_relaxation():
    p = appendix_b(3)
    eq = equilibrium(3, p)
    assert np.abs(physical_field(3, p)(eq)).max() <= 1e-12
    # independent oracle: a long damped run from a nearby state settles on the same point
    start = eq + np.array([0.05, 0.0, -0.02])
    traj = integrate(physical_field(3, p), start, 120.0, tol=1e-10, dt_out=0.5)
    assert np.abs(traj.states[-1] - eq).max() < 1e-5


@pytest.mark.parametrize("order", [2, 3, 4])
def test_field_vanishes_at_scaled_equilibrium(order):
    s = build_poly_system(order, appendix_b(order), 2)
    pt = np.concatenate([s.equilibrium_scaled, np.zeros(len(s.uncertainty))])
    assert max(abs(f.evaluate(pt)) for f in s.field) <= 1e-9


@pytest.mark.parametrize("order", [2, 3, 4])
def test_circle_is_invariant(order):
    s = build_poly_system(order, appendix_b(order), 2)
    n = s.nvars
    x, y = Polynomial.variable(n, X), Polynomial.variable(n, Y)
    lie = lie_derivative(x * x + y * y - 1.0, s.field)
    rem = reduce_poly(lie, s.circle)
    assert rem.is_zero() or rem.max_abs_coef() <= 1e-12


def test_speed_row_coefficients_follow_inverse_expansion():
    p = appendix_b(2)
    s = build_poly_system(2, p, 2)
    fw = s.field[W]
    base = -(p.V_s * p.V_i / p.X_l) / (2 * p.H * p.omega_M)
    for j in range(3):
        e = [0, 1, j, 0]
        assert fw.coef(e) == pytest.approx(base * (-p.omega_M) ** j, rel=1e-12)
    assert fw.coef([0, 1, 3, 0]) == 0.0


def test_state_set_description():
    s = build_poly_system(3, appendix_b(3), 2)
    assert s.state_names == ["x", "y", "wbar", "ebar"]
    labels = sorted(F.label for F in s.boundary_faces)
    assert labels == sorted(["wbar=+1", "wbar=-1", "ebar=+1", "ebar=-1", "x=-1"])
    assert [u.name for u in s.uncertainty] == ["eps_inv"]
    # every state variable belongs to exactly one scaling map
    idx = sorted(i for m in s.scaling for i in m.indices)
    assert idx == list(range(s.nstate))


def test_taylor_bound_values():
    p = appendix_b(2)
    assert taylor_remainder_bound("inverse-speed", 2, p).bound == pytest.approx(0.05 ** 3 / 0.95, rel=1e-14)
    assert taylor_remainder_bound("inverse-speed", 2, p).bound == pytest.approx(1.3158e-4, abs=1e-8)
    assert taylor_remainder_bound("inverse-speed", 0, p).bound == pytest.approx(5.263e-2, abs=1e-5)
    with pytest.raises(InvalidBoundError):
        taylor_remainder_bound("inverse-speed", -1, p)


def test_taylor_bound_degenerate_speed_window():
    # omega_M = 0 is excluded by SmibParams, so mimic it with a plain namespace
    class P:
        omega_M = 0.0
    assert taylor_remainder_bound("inverse-speed", 2, P()).bound == 0.0


@pytest.mark.parametrize("p_order", [0, 1, 2, 3])
def test_inverse_speed_remainder_is_bounded(p_order):
    p = appendix_b(2)
    wM = p.omega_M
    w = np.concatenate([np.random.default_rng(p_order).uniform(-wM, wM, 1000), [-wM, wM]])
    approx = sum((-w) ** j for j in range(p_order + 1))
    err = np.abs(1 / (1 + w) - approx)
    bound = taylor_remainder_bound("inverse-speed", p_order, p).bound
    assert err.max() <= bound + 1e-15
    # attained at w = -omega_M
    assert err[-2] == pytest.approx(bound, rel=1e-10)


def test_terminal_voltage_remainder_is_bounded():
    p = appendix_b(4)
    s = build_poly_system(4, p, 2)
    eq = s.equilibrium_physical
    v_eq = float(terminal_voltage(p, eq[0], eq[2]))
    rng = np.random.default_rng(0)
    delta = rng.uniform(-math.pi, math.pi, 1000)
    e = rng.uniform(0.0, 2 * eq[2], 1000)
    vs = terminal_voltage(p, delta, e)
    h = vs ** 2 / v_eq ** 2 - 1
    err = np.abs(vs - v_eq * (1 + h / 2 - h * h / 8))
    assert err.max() <= taylor_remainder_bound("terminal-voltage", 2, p).bound


def test_physical_field_examples():
    p = appendix_b(2)
    eq = equilibrium(2, p)
    assert np.allclose(physical_field(2, p)(eq), 0.0, atol=1e-14)
    fault = physical_field(2, p, "bolted-terminal")(eq)
    assert fault[0] == 0.0
    assert 2 * p.H * fault[1] == pytest.approx(0.6, abs=1e-14)
    assert physical_field(2, p)(np.array([eq[0], 0.01]))[1] < 0
    with pytest.raises(SingularityError):
        physical_field(2, p)(np.array([0.0, -1.0]))
    with pytest.raises(ValidationError):
        physical_field(2, p, "open-line")


def test_fourth_order_fault_exciter_ceiling():
    p = appendix_b(4)
    f = physical_field(4, p, "bolted-terminal")
    st_ = equilibrium(4, p).copy()
    st_[3] = p.exciter_ceiling
    assert f(st_)[3] == 0.0


def test_scaling_examples():
    p = appendix_b(2)
    s = build_poly_system(2, p, 2)
    eq = s.equilibrium_physical
    assert np.allclose(to_scaled(s, eq), [math.cos(eq[0]), math.sin(eq[0]), 0.0])
    assert np.allclose(to_scaled(s, [0.0, p.omega_M / 2]), [1.0, 0.0, 0.5])
    with pytest.raises(RangeError) as err:
        to_scaled(s, [0.0, 0.2])
    assert err.value.args and "omega" in str(err.value)


@pytest.mark.parametrize("order", [2, 3, 4])
def test_scaling_round_trip(order):
    s = build_poly_system(order, appendix_b(order), 2)
    rng = np.random.default_rng(order)
    pts = from_scaled(s, sample_state_set(s, 100, rng))
    assert np.abs(from_scaled(s, to_scaled(s, pts)) - pts).max() <= 1e-12


@settings(max_examples=25, deadline=None)
@given(order=st.sampled_from([2, 3, 4]), C_m=st.floats(0.0, 0.8), H=st.floats(2.0, 10.0),
       D=st.floats(0.0, 2.0), omega_M=st.floats(0.01, 0.3))
def test_random_params_equilibrium_is_fixed_point(order, C_m, H, D, omega_M):
    try:
        p = appendix_b(order, C_m=C_m, H=H, D=D, omega_M=omega_M)
        s = build_poly_system(order, p, 2)
    except (NoEquilibriumError, InvalidBoundError):
        assume(False)
    pt = np.concatenate([s.equilibrium_scaled, np.zeros(len(s.uncertainty))])
    assert np.max(np.abs([f.evaluate(pt) for f in s.field])) <= 1e-9


def test_box_system():
    t = Polynomial.variable(1, 0)
    s = box_system([-t])
    assert s.circle is None and s.interval_vars == [0]
    assert sorted(F.label for F in s.boundary_faces) == ["x0=+1", "x0=-1"]
    assert in_state_set(s, np.array([[0.3], [1.2]])).tolist() == [True, False]
    with pytest.raises(ValidationError):
        box_system([Polynomial.variable(2, 0)])
