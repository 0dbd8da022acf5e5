"""Hamiltonians ``H(x, u, p)`` that depend on the unknown, and checks on them.

A :class:`HamiltonianModel` bundles vectorized callables for ``H`` and its
partial derivatives.  Two builtin families are provided:

* :func:`discounted_mechanical` -- ``u + p**2/2 + V(x)``
* :func:`discounted_generic` -- ``lam*u + H1(x, p)``

Both are affine in ``u``; the model records the coefficient so the
semigroup can use ``L(x, u, v) = L(x, 0, v) - lam*u`` exactly.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import GridFn, Torus1
from .legendre import LegendreError, solve_momentum

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi


class CalibrationError(RuntimeError):
    pass


@dataclass
class HamiltonianModel:
    """``H(x, u, p)`` with analytic partials.

    All callables take broadcastable numpy arrays.  ``lam`` is the
    Lipschitz constant of ``H`` in ``u``; when omitted it is measured as the
    largest sampled ``|H_u|``.  ``alpha`` is the level at which the critical
    value vanishes, filled in by :func:`calibrate_alpha`.

    ``u_coefficient`` (optional) declares ``H(x, u, p) = c*u + H(x, 0, p)``
    and ``lagrangian`` (optional) is a closed form for the Legendre
    transform; the scheme uses them as fast paths.
    """

    H: Callable
    d_x: Callable
    d_u: Callable
    d_p: Callable
    d_pp: Callable | None = None
    lam: float | None = None
    alpha: float | None = None
    u_coefficient: float | None = None
    lagrangian: Callable | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lam is None:
            xs = np.linspace(0.0, 1.0, 16, endpoint=False)[:, None, None]
            us = np.linspace(-4.0, 4.0, 9)[None, :, None]
            ps = np.linspace(-8.0, 8.0, 17)[None, None, :]
            self.lam = float(np.max(np.abs(self.d_u(xs, us, ps))))

    def __call__(self, x, u, p):
        return self.H(x, u, p)

    def shifted(self, alpha: float) -> "HamiltonianModel":
        """The model ``(x, u, p) -> H(x, u + alpha, p)``.

        Solutions of the shifted equation are those of the original minus
        ``alpha``; its own calibration level is ``self.alpha - alpha``.
        """
        a = float(alpha)

        def sh(f):
            return None if f is None else (lambda x, u, p: f(x, np.add(u, a), p))

        lag = self.lagrangian
        return dataclasses.replace(
            self,
            H=sh(self.H), d_x=sh(self.d_x), d_u=sh(self.d_u), d_p=sh(self.d_p),
            d_pp=sh(self.d_pp),
            lagrangian=None if lag is None else (lambda x, u, v: lag(x, np.add(u, a), v)),
            alpha=None if self.alpha is None else self.alpha - a,
            name=f"{self.name}[u+{a:g}]",
            params={**self.params, "u_shift": self.params.get("u_shift", 0.0) + a},
        )

    def calibrated(self) -> "HamiltonianModel":
        """Shift so that the critical value vanishes at ``u = 0``."""
        if self.alpha is None:
            raise CalibrationError("model has no alpha; run calibrate_alpha first")
        return self.shifted(self.alpha)


# -- builtin families ---------------------------------------------------------

def potential(kind="cos", amplitude=1.0, period=1.0, offset=0.0):
    """Return ``(V, V')`` for a named closed-form potential or a GridFn."""
    if isinstance(kind, GridFn):
        g = kind.grid

        def V(x):
            return np.asarray(kind(x)) + offset

        def dV(x):
            s = np.floor(np.mod(x, g.period) / g.dx).astype(int) % g.n
            v = kind.values
            return (v[(s + 1) % g.n] - v[s]) / g.dx

        return V, dV
    k = TWO_PI / period
    a = float(amplitude)
    if kind == "cos":
        return (lambda x: a * np.cos(k * x) + offset), (lambda x: -a * k * np.sin(k * x))
    if kind == "sin":
        return (lambda x: a * np.sin(k * x) + offset), (lambda x: a * k * np.cos(k * x))
    if kind in ("zero", "none", None):
        return (lambda x: np.zeros_like(np.asarray(x, dtype=float)) + offset), \
            (lambda x: np.zeros_like(np.asarray(x, dtype=float)))
    raise ValueError(f"unknown potential {kind!r}")


def discounted_mechanical(V="cos", amplitude=1.0, period=1.0, offset=0.0) -> HamiltonianModel:
    """``H = u + p**2/2 + V(x)``; Lipschitz constant 1 in ``u``."""
    Vf, dV = potential(V, amplitude, period, offset)

    def H(x, u, p):
        return u + 0.5 * p * p + Vf(x)

    def d_x(x, u, p):
        return dV(x) + 0.0 * (u + p)

    def d_u(x, u, p):
        return np.ones(np.broadcast(x, u, p).shape)

    def d_p(x, u, p):
        return p + 0.0 * (x + u)

    def d_pp(x, u, p):
        return np.ones(np.broadcast(x, u, p).shape)

    def L(x, u, v):
        return 0.5 * v * v - Vf(x) - u

    label = V if isinstance(V, str) or V is None else "grid"
    return HamiltonianModel(
        H, d_x, d_u, d_p, d_pp, lam=1.0, u_coefficient=1.0, lagrangian=L,
        name="discounted_mechanical",
        params={"V": label, "V_amplitude": amplitude, "period": period, "V_offset": offset},
    )


def discounted_generic(lam, H1, H1_x, H1_p, H1_pp=None, L1=None, name="discounted_generic"):
    """``H = lam*u + H1(x, p)`` for a Tonelli ``H1`` given with its partials.

    ``L1`` is the optional closed-form conjugate of ``H1``.
    """
    lam = float(lam)
    if lam <= 0:
        raise ValueError("the discount coefficient must be positive")

    def H(x, u, p):
        return lam * u + H1(x, p)

    def d_x(x, u, p):
        return H1_x(x, p) + 0.0 * u

    def d_u(x, u, p):
        return np.full(np.broadcast(x, u, p).shape, lam)

    def d_p(x, u, p):
        return H1_p(x, p) + 0.0 * u

    d_pp = None if H1_pp is None else (lambda x, u, p: H1_pp(x, p) + 0.0 * u)
    L = None if L1 is None else (lambda x, u, v: L1(x, v) - lam * u)
    return HamiltonianModel(H, d_x, d_u, d_p, d_pp, lam=lam, u_coefficient=lam,
                            lagrangian=L, name=name, params={"lam": lam})


def quartic(lam=1.0) -> HamiltonianModel:
    """``lam*u + p**4/4``, whose Lagrangian is ``3/4 |v|^(4/3) - lam*u``."""
    return discounted_generic(
        lam,
        H1=lambda x, p: 0.25 * p ** 4 + 0.0 * x,
        H1_x=lambda x, p: 0.0 * (x + p),
        H1_p=lambda x, p: p ** 3 + 0.0 * x,
        H1_pp=lambda x, p: 3.0 * p ** 2 + 0.0 * x,
        L1=lambda x, v: 0.75 * np.abs(v) ** (4.0 / 3.0) + 0.0 * x,
        name="quartic",
    )


# -- hypothesis checks ----------------------------------------------------------

@dataclass
class SampleSpec:
    x_count: int = 16
    u_range: tuple = (-2.0, 2.0)
    p_range: tuple = (-4.0, 4.0)
    p_count: int = 17
    u_count: int = 9
    period: float = 1.0
    tol: float = 1e-8

    def __post_init__(self):
        if min(self.x_count, self.p_count, self.u_count) < 8:
            raise ValueError("sample counts must be at least 8")
        if not np.all(np.isfinite([*self.u_range, *self.p_range])):
            raise ValueError("sample ranges must be finite")


@dataclass
class HypothesisResult:
    passed: bool
    worst: float
    witness: tuple | None = None
    note: str = ""


@dataclass
class ValidationReport:
    results: dict

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results.values() if r is not None)

    def failures(self) -> list:
        return [k for k, r in self.results.items() if r is not None and not r.passed]

    def __getitem__(self, key):
        return self.results[key]

    def to_json(self) -> dict:
        return {k: None if r is None else dataclasses.asdict(r) for k, r in self.results.items()}


def _witness(arrays, idx):
    return tuple(float(np.broadcast_to(a, arrays[0].shape)[idx]) for a in arrays)


def validate_hypotheses(h: HamiltonianModel, sample_spec: SampleSpec | None = None) -> ValidationReport:
    """Sampled checks of convexity (H1), superlinearity (H2), Lipschitz
    continuity in ``u`` (H4) and monotonicity in ``u`` (H5).

    Completeness of the characteristic flow (H3) is not checked here; the
    RK4 integrator's blow-up guard is its runtime counterpart.
    """
    s = sample_spec or SampleSpec()
    tol = s.tol
    x = np.linspace(0.0, s.period, s.x_count, endpoint=False)[:, None, None]
    u = np.linspace(*s.u_range, s.u_count)[None, :, None]
    p = np.linspace(*s.p_range, s.p_count)[None, None, :]
    X, U, P = np.broadcast_arrays(x, u, p)
    res = {}

    d = 1e-3
    second = (h.H(X, U, P + d) - 2 * h.H(X, U, P) + h.H(X, U, P - d)) / d ** 2
    k = np.unravel_index(np.argmin(second), second.shape)
    res["H1"] = HypothesisResult(bool(second[k] > tol), float(second[k]), _witness((X, U, P), k))

    p_scale = max(abs(s.p_range[0]), abs(s.p_range[1]), 1.0)
    radii = p_scale * 2.0 ** np.arange(11)
    worst, wit, ok = np.inf, None, True
    for sign in (1.0, -1.0):
        pr = sign * radii[None, None, :]
        ratio = h.H(x, u, pr) / np.abs(pr)
        tail = ratio[..., 5:]
        growing = np.all(np.diff(tail, axis=-1) > 0, axis=-1) & (tail[..., -1] > 2 * tail[..., 0])
        margin = tail[..., -1] - 2 * tail[..., 0]
        j = np.unravel_index(np.argmin(margin), margin.shape)
        if margin[j] < worst:
            worst = float(margin[j])
            wit = (float(x.ravel()[j[0]]), float(u.ravel()[j[1]]), float(pr.ravel()[-1]))
        ok = ok and bool(np.all(growing))
    res["H2"] = HypothesisResult(ok, worst, wit, "H/|p| along |p| = 2^k * p_scale")

    res["H3"] = None

    du = np.diff(u.ravel())[None, :, None]
    q = np.abs(np.diff(h.H(X, U, P), axis=1)) / du
    k = np.unravel_index(np.argmax(q), q.shape)
    res["H4"] = HypothesisResult(bool(q[k] <= h.lam + tol), float(q[k]),
                                 _witness((X[:, 1:], U[:, 1:], P[:, 1:]), k),
                                 f"lambda = {h.lam:g}")

    hu = np.broadcast_to(h.d_u(X, U, P), X.shape)
    k = np.unravel_index(np.argmin(hu), hu.shape)
    res["H5"] = HypothesisResult(bool(hu[k] >= -tol), float(hu[k]), _witness((X, U, P), k))
    return ValidationReport(res)


def finite_diff_check(h: HamiltonianModel, pts) -> float:
    """Largest gap between the analytic partials and centered differences."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    x, u, p = pts[:, 0], pts[:, 1], pts[:, 2]
    worst = 0.0
    for k, partial in enumerate((h.d_x, h.d_u, h.d_p)):
        z = pts[:, k]
        step = 1e-6 * np.maximum(1.0, np.abs(z))
        args_hi = [x, u, p]
        args_lo = [x, u, p]
        args_hi[k] = z + step
        args_lo[k] = z - step
        fd = (h.H(*args_hi) - h.H(*args_lo)) / (2 * step)
        worst = max(worst, float(np.max(np.abs(partial(x, u, p) - fd))))
    return worst


# -- critical value -------------------------------------------------------------

def critical_value(h: HamiltonianModel, alpha: float, grid: Torus1) -> float:
    """``max_x min_p H(x, alpha, p)`` over the grid nodes.

    In one dimension (zero cohomology) this equals the inf over smooth ``u``
    of ``max_x H(x, alpha, u'(x))``.
    """
    x = grid.nodes
    try:
        p = solve_momentum(h, x, alpha, 0.0)
    except LegendreError as exc:
        raise LegendreError(f"critical value: {exc}", x=exc.x) from exc
    return float(np.max(h.H(x, alpha, p)))


def calibrate_alpha(h: HamiltonianModel, grid: Torus1, tol: float = 1e-10) -> float:
    """Find ``alpha`` with ``|critical_value(h, alpha)| <= tol`` and store it on ``h``."""
    def c(a):
        return critical_value(h, a, grid)

    a, ca = 0.0, c(0.0)
    if abs(ca) <= tol:
        h.alpha = 0.0
        return 0.0
    step = 1.0 if ca < 0 else -1.0
    for _ in range(60):
        b = a + step
        cb = c(b)
        if np.sign(cb) != np.sign(ca) or abs(cb) <= tol:
            break
        a, ca = b, cb
        step *= 2.0
    else:
        raise CalibrationError("H6 appears unsatisfiable: no sign change of the critical value")
    lo, hi = (a, b) if a < b else (b, a)
    logger.info("calibrate_alpha: bracket [%g, %g]", lo, hi)
    clo = c(lo)
    mid = 0.5 * (lo + hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        cm = c(mid)
        if abs(cm) <= tol or hi - lo < 1e-15 * max(1.0, abs(mid)):
            break
        if np.sign(cm) == np.sign(clo):
            lo, clo = mid, cm
        else:
            hi = mid
    h.alpha = float(mid)
    return float(mid)
