import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import sin_phi, smooth_random
from oracles import left_rule_contraction_bound, right_rule_contraction_bound, scalar_decay
from weakkam import (GridFn, SchemeOptions, SemigroupState, SpaceTimeFn, Torus1, apply_A, backtrack_calibrated,
                     discounted_mechanical, evolve, fixed_point_of_A, step, sup_dist)
from weakkam.characteristics import backward_from_terminal
from weakkam.lax_oleinik import CalibrationDefectError, VelocityBoundError, minimize_step


def no_fast_path(h):
    """Same model without the affine-in-u declaration or closed-form Lagrangian."""
    return dataclasses.replace(h, u_coefficient=None, lagrangian=None)


# -- operator A ----------------------------------------------------------------------------------

def test_apply_A_examples(h_zero):
    g = Torus1(16)
    phi = g.constant(1.0)
    dt = 1e-2
    A0 = apply_A(phi, SpaceTimeFn.constant_in_time(g.constant(0.0), 2 * dt, dt), h_zero)
    np.testing.assert_allclose(A0.slices[1], 1.0, atol=1e-15)
    A1 = apply_A(phi, SpaceTimeFn.constant_in_time(g.constant(1.0), 2 * dt, dt), h_zero)
    np.testing.assert_allclose(A1.slices[1], 1.0 - dt, atol=1e-15)


def test_space_time_fn_checks():
    g = Torus1(8)
    with pytest.raises(ValueError):
        SpaceTimeFn(g, [0.0, 0.1, 0.3], np.zeros((3, 8)))
    with pytest.raises(ValueError):
        SpaceTimeFn(g, [0.0, 0.1], np.zeros((3, 8)))


def test_apply_A_rejects_unknown_rule(h_zero):
    g = Torus1(8)
    u = SpaceTimeFn.constant_in_time(g.constant(0.0), 0.1, 0.05)
    with pytest.raises(ValueError):
        apply_A(g.constant(0.0), u, h_zero, rule="middle")


@pytest.mark.parametrize("rule,bound", [("left", left_rule_contraction_bound),
                                        ("right", right_rule_contraction_bound)])
def test_contraction_matches_discrete_bound(h_cos, rule, bound):
    # with an affine u-dependence, the n-fold iterates of two constant seeds
    # differ by exactly the binomial bound of the chosen quadrature rule
    g = Torus1(64)
    phi = sin_phi(g)
    dt, m = 0.05, 20
    a = SpaceTimeFn.constant_in_time(g.constant(0.0), m * dt, dt)
    b = SpaceTimeFn.constant_in_time(g.constant(1.0), m * dt, dt)
    for n in range(1, 5):
        a = apply_A(phi, a, h_cos, v_bound=20.0, rule=rule)
        b = apply_A(phi, b, h_cos, v_bound=20.0, rule=rule)
        gap = np.max(np.abs(a.slices[-1] - b.slices[-1]))
        assert gap == pytest.approx(bound(m, n, dt), rel=1e-9)
        if rule == "left":
            assert gap <= 1.0 / math.factorial(n) + 1e-12


def test_fixed_point_scalar_decay(h_zero):
    g = Torus1(8)
    fp = fixed_point_of_A(g.constant(1.0), 1.0, h_zero, tol=1e-10, dt=1e-3)
    np.testing.assert_allclose(fp.final().values, math.exp(-1), atol=1e-3)
    np.testing.assert_allclose(fp.final().values, scalar_decay(1.0, 1e-3), atol=1e-9)
    assert fp.info["iterations"] <= 15


def test_fixed_point_of_zero(h_zero):
    fp = fixed_point_of_A(Torus1(8).constant(0.0), 0.5, h_zero, dt=1e-2)
    assert np.all(fp.slices == 0.0)


@pytest.mark.parametrize("fast", [True, False])
def test_fixed_point_equals_evolution(h_cos, fast):
    h = h_cos if fast else no_fast_path(h_cos)
    g = Torus1(64)
    phi = sin_phi(g)
    opts = SchemeOptions(picard_tol=1e-13)
    fp = fixed_point_of_A(phi, 0.1, h, tol=1e-13, dt=1e-3)
    ev = evolve(phi, 0.1, 1e-3, h, opts)
    assert sup_dist(fp.final(), ev.u) <= 10 * opts.picard_tol


# -- one step and evolution ------------------------------------------------------------------

def test_step_examples(h_zero):
    g = Torus1(16)
    s = step(SemigroupState.start(g.constant(1.0)), 0.1, h_zero)
    np.testing.assert_allclose(s.u.values, 1 / 1.1, atol=1e-12)
    s = step(SemigroupState.start(g.constant(0.0)), 0.1, h_zero)
    assert np.all(s.u.values == 0.0)


def test_step_picard_without_fast_path(h_zero, h_cos):
    g = Torus1(64)
    for h in (h_zero, h_cos):
        phi = sin_phi(g)
        fast = step(SemigroupState.start(phi), 0.05, h)
        slow = step(SemigroupState.start(phi), 0.05, no_fast_path(h), SchemeOptions(picard_tol=1e-13))
        assert sup_dist(fast.u, slow.u) <= 1e-11
        assert slow.diagnostics[-1]["picard_iters"] > 1


def test_step_one_step_cosine_against_operator(h_cos):
    g = Torus1(128)
    dt = 1e-3
    s = step(SemigroupState.start(g.constant(0.0)), dt, h_cos)
    fp = fixed_point_of_A(g.constant(0.0), dt, h_cos, tol=1e-14, dt=dt)
    assert sup_dist(s.u, fp.final()) <= 1e-9
    # at x = 0 the potential is maximal and the optimal velocity is zero
    assert s.u.values[0] == pytest.approx(-dt * 1.0 / (1 + dt), abs=1e-12)


def test_step_enforces_time_step(h_zero):
    with pytest.raises(ValueError, match="exceeds 0.5"):
        step(SemigroupState.start(Torus1(8).constant(0.0)), 0.6, h_zero)


def test_small_velocity_bound_raises(h_zero):
    g = Torus1(64)
    with pytest.raises(VelocityBoundError, match="velocity bound too small"):
        step(SemigroupState.start(sin_phi(g)), 1e-2, h_zero, v_bound=0.5)


def test_evolve_doubles_velocity_bound(h_zero, caplog):
    g = Torus1(64)
    s = evolve(sin_phi(g), 0.05, 1e-2, h_zero, SchemeOptions())
    ref = s.u
    with caplog.at_level("WARNING"):
        out = evolve(sin_phi(g), 0.05, 1e-2, h_zero, SchemeOptions(v_bound=0.5))
    assert "doubling" in caplog.text
    assert sup_dist(out.u, ref) <= 1e-12


def test_evolve_scalar_recursion(h_zero):
    s = evolve(Torus1(8).constant(1.0), 1.0, 1e-3, h_zero)
    np.testing.assert_allclose(s.u.values, (1 + 1e-3) ** -1000, atol=1e-6)
    assert len(s.diagnostics) == 1000


def test_evolve_zero_stays_zero(h_zero):
    assert np.all(evolve(Torus1(16).constant(0.0), 0.7, 1e-2, h_zero).u.values == 0.0)


def test_evolve_rounds_end_time(h_zero):
    with pytest.warns(UserWarning, match="not a multiple"):
        s = evolve(Torus1(8).constant(1.0), 0.1005, 1e-2, h_zero)
    assert s.t == pytest.approx(0.1)


def test_semigroup_small_grid(h_cos):
    g = Torus1(128)
    phi = sin_phi(g)
    dt = 1e-3
    whole = evolve(phi, 0.6, dt, h_cos).u
    split = evolve(evolve(phi, 0.2, dt, h_cos).u, 0.4, dt, h_cos).u
    assert sup_dist(whole, split) <= 10 * dt


def test_constants_commute_for_zero_potential(h_zero):
    g = Torus1(64)
    phi = sin_phi(g)
    dt, t, c = 1e-2, 0.5, 0.75
    a = evolve(phi + c, t, dt, h_zero).u
    b = evolve(phi, t, dt, h_zero).u
    np.testing.assert_allclose(a.values, b.values + c * scalar_decay(t, dt), atol=1e-12)


def test_chebyshev_search_agrees_with_exact(h_cos):
    g = Torus1(128)
    phi = sin_phi(g)
    exact = evolve(phi, 0.05, 1e-3, h_cos).u
    cheb = evolve(phi, 0.05, 1e-3, h_cos, SchemeOptions(search="chebyshev", v_count=21)).u
    assert sup_dist(exact, cheb) <= 1e-5
    with pytest.raises(ValueError):
        minimize_step(phi.values, g, 1e-3, g.nodes, 0.0, h_cos, 10.0, SchemeOptions(search="chebyshev", v_count=8))


def test_threads_do_not_change_results(h_cos):
    g = Torus1(128)
    a = evolve(sin_phi(g), 0.02, 1e-3, h_cos).u
    b = evolve(sin_phi(g), 0.02, 1e-3, h_cos, SchemeOptions(threads=3)).u
    np.testing.assert_array_equal(a.values, b.values)


def test_uniform_bound_over_long_times(h_cos_cal):
    g = Torus1(64)
    s = evolve(sin_phi(g), 50.0, 1e-2, h_cos_cal)
    norms = np.array([d["sup_norm"] for d in s.diagnostics])
    first = norms[:100].max()
    assert norms.max() <= 10 * first


def test_diagnostics_and_snapshots(h_cos, tmp_path):
    g = Torus1(32)
    s = evolve(sin_phi(g), 0.05, 1e-2, h_cos)
    ts = [d["t"] for d in s.diagnostics]
    assert len(ts) == 5 and np.all(np.diff(ts) > 0)
    text = s.diagnostics_csv(tmp_path / "d.csv")
    assert text.splitlines()[0] == "t,sup_norm,lip,max_v,picard_iters"
    assert len(text.splitlines()) == 6
    back = SemigroupState.from_json(json.dumps(s.to_json()))
    np.testing.assert_array_equal(back.u.values, s.u.values)
    assert back.t == s.t


def _ordered_pair(seed, n=32):
    rng = np.random.default_rng(seed)
    g = Torus1(n)
    f = smooth_random(rng, g)
    bump = np.maximum(0.0, np.sin(2 * np.pi * (g.nodes - rng.random()))) ** 2 * rng.random()
    return GridFn(g, f), GridFn(g, f + bump)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_monotone_and_non_expanding(seed):
    h = discounted_mechanical()
    phi, psi = _ordered_pair(seed)
    a = evolve(phi, 0.2, 1e-2, h).u
    b = evolve(psi, 0.2, 1e-2, h).u
    assert np.all(a.values <= b.values)
    assert sup_dist(a, b) <= sup_dist(phi, psi) + 1e-10


# -- calibrated curves -------------------------------------------------------------------------

def test_backtrack_homogeneous(h_zero):
    g = Torus1(64)
    s = evolve(g.constant(1.0), 0.1, 1e-2, h_zero, keep_history=True)
    c = backtrack_calibrated(s, 0.3, h_zero)
    np.testing.assert_allclose(c.gamma, 0.3)
    np.testing.assert_allclose(c.v_along, 0.0)
    np.testing.assert_allclose(c.p_along, 0.0)
    assert c.max_defect <= 1e-12


def test_backtrack_follows_characteristics(h_zero):
    g = Torus1(512)
    dt = 1e-3
    s = evolve(sin_phi(g), 0.2, dt, h_zero, keep_history=True)
    c = backtrack_calibrated(s, 0.5, h_zero)
    assert c.gamma[-1] == 0.5
    back = backward_from_terminal(h_zero, c.gamma[-1], c.p_along[-1], c.u_along[-1], 0.2, dt)
    gap = np.max(np.abs((back.x - c.gamma + 0.5) % 1.0 - 0.5))
    assert gap <= 5 * (g.dx + dt)


def test_calibration_defect(h_cos, runs):
    g = Torus1(512)
    s = runs.get(("hist", "cos", 0.3), lambda: evolve(sin_phi(g), 0.3, 1e-3, h_cos, keep_history=True))
    for x in (0.1, 0.37, 0.5, 0.81):
        assert backtrack_calibrated(s, x, h_cos).max_defect <= 5e-3
    with pytest.raises(CalibrationDefectError) as err:
        backtrack_calibrated(s, 0.1, h_cos, SchemeOptions(calib_tol=1e-12))
    assert err.value.curve is not None
