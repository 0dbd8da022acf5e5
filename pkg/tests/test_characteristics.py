import numpy as np
import pytest

from oracles import linear_characteristic
from weakkam import CharState, HamiltonianModel, char_rhs, classical_patch, energy_law_residual, integrate
from weakkam.characteristics import BlowUpError, CausticError, backward_from_terminal, patch_from_initial


def test_rhs_examples(h_zero, h_cos):
    assert char_rhs(h_zero, CharState(0.0, 1.0, 0.0)) == pytest.approx((1.0, -1.0, 0.5))
    assert char_rhs(h_zero, CharState(0.3, 0.0, 0.0)) == (0.0, 0.0, 0.0)
    assert char_rhs(h_cos, CharState(0.25, 0.0, 0.0)) == pytest.approx((0.0, 2 * np.pi, 0.0), abs=1e-12)


def test_state_must_be_finite():
    with pytest.raises(ValueError):
        CharState(0.0, np.inf, 0.0)


def test_linear_closed_form(h_zero):
    tr = integrate(h_zero, CharState(0.0, 1.0, 0.0), 1.0, 1e-3)
    ref = linear_characteristic(1.0)
    s = tr.final
    assert s.x == pytest.approx(ref["x"], abs=1e-9)
    assert s.p == pytest.approx(ref["p"], abs=1e-9)
    assert s.u == pytest.approx(ref["u"], abs=1e-9)
    assert tr.energies[-1] == pytest.approx(ref["H"], abs=1e-9)
    assert tr.energies[0] == 0.5


def test_rest_point(h_zero):
    tr = integrate(h_zero, CharState(0.4, 0.0, 0.0), 1.0, 1e-2)
    assert np.all(tr.x == 0.4) and np.all(tr.p == 0.0) and np.all(tr.u == 0.0)
    assert energy_law_residual(h_zero, tr) <= 1e-12


def test_rk4_fourth_order(h_zero):
    def err(dt):
        tr = integrate(h_zero, CharState(0.0, 1.0, 0.0), 1.0, dt)
        ref = linear_characteristic(tr.times)
        return max(np.max(np.abs(tr.x - ref["x"])), np.max(np.abs(tr.p - ref["p"])), np.max(np.abs(tr.u - ref["u"])))

    assert err(0.1) / err(0.05) >= 14


def test_energy_law(h_cos):
    rng = np.random.default_rng(4)
    for _ in range(5):
        s0 = CharState(rng.random(), rng.uniform(-3, 3), rng.uniform(-2, 2))
        assert energy_law_residual(h_cos, integrate(h_cos, s0, 1.0, 1e-3)) <= 1e-5


def test_zero_energy_level_is_invariant(h_cos):
    x, p = 0.2, 1.3
    u = -0.5 * p * p - np.cos(2 * np.pi * x)
    tr = integrate(h_cos, CharState(x, p, u), 2.0, 1e-3)
    assert np.max(np.abs(tr.energies)) <= 1e-8


def test_energies_equal_model_values(h_cos):
    tr = integrate(h_cos, CharState(0.1, 0.5, 0.2), 0.1, 1e-2)
    np.testing.assert_array_equal(tr.energies, h_cos.H(tr.x, tr.u, tr.p))


def test_backward_integration_returns(h_cos):
    s0 = CharState(0.1, 0.7, -0.3)
    fwd = integrate(h_cos, s0, 0.5, 1e-3)
    back = backward_from_terminal(h_cos, *fwd.final.as_array(), 0.5, 1e-3)
    assert back.x[0] == pytest.approx(0.1, abs=1e-10)
    assert back.times[0] == pytest.approx(0.0) and back.times[-1] == pytest.approx(0.5)


def test_blow_up_guard():
    # H = u + p^2/2 - u^2 is not proper enough: u' = -u + u^2 + ... explodes
    h = HamiltonianModel(H=lambda x, u, p: 0.5 * p * p - u * u, d_x=lambda x, u, p: 0 * p,
                         d_u=lambda x, u, p: -2 * u + 0 * p, d_p=lambda x, u, p: p + 0 * u, lam=1.0)
    with pytest.raises(BlowUpError, match="possible H3 violation"):
        integrate(h, CharState(0.0, 0.0, 1.0), 5.0, 1e-3)


def test_csv_output(h_zero, tmp_path):
    tr = integrate(h_zero, CharState(0.9, 1.0, 0.0), 0.5, 0.1)
    text = tr.to_csv(tmp_path / "t.csv")
    lines = text.splitlines()
    assert lines[0] == "t,x,p,u,H"
    assert len(lines) == 7
    assert all(0 <= float(r.split(",")[1]) < 1 for r in lines[1:])


def test_batch_integration(h_cos):
    xs = np.array([0.1, 0.2]); ps = np.array([1.0, -1.0]); us = np.zeros(2)
    batch = integrate(h_cos, (xs, ps, us), 0.2, 1e-2)
    for k in range(2):
        one = integrate(h_cos, CharState(xs[k], ps[k], us[k]), 0.2, 1e-2)
        np.testing.assert_allclose(batch.x[:, k], one.x, atol=1e-14)


def test_patch_constant_data(h_zero):
    xs = np.linspace(0, 1, 33, endpoint=False)
    c, t = 0.8, 0.3
    patch = classical_patch(h_zero, xs, c, 0.0, t, dt=1e-3)
    np.testing.assert_allclose(patch.x[-1], xs)
    np.testing.assert_allclose(patch.u[-1], c * np.exp(-t), atol=1e-12)


def test_patch_single_characteristic(h_zero):
    patch = classical_patch(h_zero, 0.3, 0.0, [0.0], 0.1, dt=1e-2)
    assert patch.monotone.all()


def test_patch_detects_caustic(h_zero):
    phi = lambda x: np.sin(2 * np.pi * x)
    dphi = lambda x: 2 * np.pi * np.cos(2 * np.pi * x)
    xs = np.linspace(0, 1, 256, endpoint=False)
    with pytest.raises(CausticError, match="shrink t_small"):
        patch_from_initial(h_zero, phi, dphi, xs, 0.2, dt=1e-3)
    # the expanding part of the fan stays ordered well past that time
    patch_from_initial(h_zero, phi, dphi, np.linspace(0.6, 0.9, 64), 0.2, dt=1e-3)


def test_patch_threads_agree(h_cos):
    xs = np.linspace(0.6, 0.9, 40)
    a = classical_patch(h_cos, xs, np.sin(xs), np.cos(xs), 0.05, dt=1e-3)
    b = classical_patch(h_cos, xs, np.sin(xs), np.cos(xs), 0.05, dt=1e-3, threads=4)
    np.testing.assert_array_equal(a.u, b.u)
