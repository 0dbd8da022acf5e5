import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weakkam import (HamiltonianModel, LagrangianView, discounted_mechanical, lagrangian, quartic,
                     velocity_of_momentum, verify_involution)
from weakkam.legendre import LegendreError, solve_momentum


def quadratic_no_closed_form():
    """``u + p^2/2`` with the closed-form Lagrangian stripped, so Newton is exercised."""
    h = discounted_mechanical(V="zero")
    h.lagrangian = None
    return h


def test_quadratic_examples():
    lv = LagrangianView(quadratic_no_closed_form())
    assert lagrangian(lv, 0.3, 0.0, 2.0) == pytest.approx((2.0, 2.0), abs=1e-12)
    assert lagrangian(lv, 0.3, 3.0, 0.0) == pytest.approx((-3.0, 0.0), abs=1e-12)


def test_quartic_example():
    L, p = lagrangian(LagrangianView(quartic()), 0.1, 0.0, 1.0)
    assert L == pytest.approx(0.75, abs=1e-10)
    assert p == pytest.approx(1.0, abs=1e-10)


def test_newton_matches_closed_forms():
    rng = np.random.default_rng(0)
    for h in (discounted_mechanical(), quartic()):
        x, u, v = rng.uniform(0, 1, 200), rng.uniform(-2, 2, 200), rng.uniform(-6, 6, 200)
        L, p = lagrangian(LagrangianView(h), x, u, v)
        np.testing.assert_allclose(L, h.lagrangian(x, u, v), atol=1e-9)
        np.testing.assert_allclose(h.d_p(x, u, p), v, atol=1e-10 * (1 + np.abs(v)).max())


def test_velocity_of_momentum_examples():
    assert velocity_of_momentum(LagrangianView(discounted_mechanical(V="zero")), 0.0, 0.0, 2.0) == 2.0
    assert velocity_of_momentum(LagrangianView(quartic()), 0.0, 0.0, 1.0) == 1.0


def test_round_trip_velocity():
    lv = LagrangianView(discounted_mechanical())
    v = np.arange(-5.0, 6.0)
    x = np.linspace(0, 1, v.size)
    _, p = lagrangian(lv, x, 0.5, v)
    np.testing.assert_allclose(velocity_of_momentum(lv, x, 0.5, p), v, atol=1e-9)


def test_involution():
    rng = np.random.default_rng(3)
    g = np.stack(np.meshgrid(np.linspace(0, 1, 5), np.linspace(-1, 1, 5), np.linspace(-4, 4, 9)), -1).reshape(-1, 3)
    assert verify_involution(LagrangianView(quadratic_no_closed_form()), g) <= 1e-8
    pts = np.column_stack([rng.uniform(0, 1, 60), rng.uniform(-1, 1, 60), rng.uniform(-3, 3, 60)])
    assert verify_involution(LagrangianView(quartic()), pts) <= 1e-6
    pts = np.column_stack([rng.uniform(0, 1, 100), rng.uniform(-2, 2, 100), rng.uniform(-5, 5, 100)])
    assert verify_involution(LagrangianView(discounted_mechanical()), pts) <= 1e-6


def test_not_superlinear_raises_with_x():
    # H = u + sqrt(1 + p^2): H_p stays inside (-1, 1), so v = 2 has no momentum
    h = HamiltonianModel(
        H=lambda x, u, p: u + np.sqrt(1 + p * p),
        d_x=lambda x, u, p: 0 * p, d_u=lambda x, u, p: 1 + 0 * p,
        d_p=lambda x, u, p: p / np.sqrt(1 + p * p), lam=1.0)
    with pytest.raises(LegendreError) as err:
        solve_momentum(h, 0.25, 0.0, 2.0)
    assert err.value.x == 0.25


triples = st.tuples(st.floats(0, 1), st.floats(-3, 3), st.floats(-3, 3), st.floats(-6, 6))


@settings(max_examples=80, deadline=None)
@given(triples)
def test_decreasing_and_lipschitz_in_u(t):
    x, u1, u2, v = t
    for h in (discounted_mechanical(), quartic(lam=0.7)):
        lv = LagrangianView(h)
        L1, L2 = lv(x, u1, v), lv(x, u2, v)
        if u1 >= u2:
            assert L1 <= L2 + 1e-10
        assert abs(L1 - L2) <= h.lam * abs(u1 - u2) + 1e-9


@settings(max_examples=80, deadline=None)
@given(triples)
def test_fenchel_inequality(t):
    x, u, p, v = t
    h = quartic()
    lv = LagrangianView(h)
    assert p * v <= h.H(x, u, p) + lv(x, u, v) + 1e-9
    v_star = h.d_p(x, u, p)
    assert p * v_star == pytest.approx(h.H(x, u, p) + lv(x, u, v_star), abs=1e-8)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(-2, 2), st.floats(-5, 5))
def test_convex_in_v(x, u, v):
    lv = LagrangianView(discounted_mechanical())
    d = 1e-3
    assert lv(x, u, v + d) - 2 * lv(x, u, v) + lv(x, u, v - d) >= -1e-10
