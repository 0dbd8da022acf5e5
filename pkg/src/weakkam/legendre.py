"""Fiberwise Legendre transform with the unknown frozen as a parameter.

``L(x, u, v) = sup_p { p v - H(x, u, p) }``.  Under strict convexity the
supremum sits at the unique ``p*`` with ``H_p(x, u, p*) = v``; we find it by
Newton's method kept inside a bisection bracket, so the transform is
computed on demand and never tabulated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .hamiltonian import HamiltonianModel

RESIDUAL_TOL = 1e-10
MAX_DOUBLINGS = 60


class LegendreError(ArithmeticError):
    """The momentum equation could not be solved (superlinearity or convexity fails)."""

    def __init__(self, message, x=None):
        super().__init__(message)
        self.x = x


def _second_p(h, x, u, p):
    if h.d_pp is not None:
        return h.d_pp(x, u, p)
    step = 1e-6 * (1.0 + np.abs(p))
    return (h.d_p(x, u, p + step) - h.d_p(x, u, p - step)) / (2 * step)


def solve_momentum(h: HamiltonianModel, x, u, v, p0=None, tol=RESIDUAL_TOL, max_iter=100):
    """Solve ``H_p(x, u, p) = v`` for ``p`` (vectorized over broadcast inputs).

    Newton from ``p0`` (default 0) inside a bracket grown by doubling; a
    Newton step that leaves the bracket is replaced by bisection.

    Raises
    ------
    LegendreError
        If no bracket is found within 60 doublings, or the residual does not
        reach ``tol * (1 + |v|)`` within ``max_iter`` iterations.
    """
    x, u, v = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, u, v)))
    shape = x.shape
    x, u, v = x.ravel(), u.ravel(), v.ravel()

    lo = np.full(x.shape, -1.0)
    hi = np.full(x.shape, 1.0)
    for _ in range(MAX_DOUBLINGS):
        bad_hi = h.d_p(x, u, hi) < v
        bad_lo = h.d_p(x, u, lo) > v
        if not (bad_hi.any() or bad_lo.any()):
            break
        hi = np.where(bad_hi, 2.0 * hi, hi)
        lo = np.where(bad_lo, 2.0 * lo, lo)
    else:
        k = int(np.flatnonzero(bad_hi | bad_lo)[0])
        raise LegendreError(
            f"momentum not bracketed for v={v[k]:.6g} at x={x[k]:.6g}; "
            "is H superlinear in p?", x=float(x[k]))

    p = np.zeros_like(x) if p0 is None else np.clip(
        np.broadcast_to(np.asarray(p0, dtype=float), shape).ravel().copy(), lo, hi)
    scale = tol * (1.0 + np.abs(v))
    for _ in range(max_iter):
        g = h.d_p(x, u, p) - v
        if np.all(np.abs(g) <= scale):
            return p.reshape(shape)
        lo = np.where(g < 0, p, lo)
        hi = np.where(g > 0, p, hi)
        gp = _second_p(h, x, u, p)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = p - g / gp
        inside = (gp > 0) & (newton >= lo) & (newton <= hi)
        p = np.where(np.abs(g) <= scale, p, np.where(inside, newton, 0.5 * (lo + hi)))
    g = h.d_p(x, u, p) - v
    if np.all(np.abs(g) <= scale):
        return p.reshape(shape)
    k = int(np.argmax(np.abs(g) / scale))
    raise LegendreError(
        f"Newton did not converge at x={x[k]:.6g} (residual {g[k]:.3g})", x=float(x[k]))


@dataclass(frozen=True)
class LagrangianView:
    """The Lagrangian of a Hamiltonian model, evaluated on demand."""

    h: HamiltonianModel

    def __call__(self, x, u, v):
        return lagrangian(self, x, u, v)[0]


def lagrangian(lv: LagrangianView, x, u, v, p0=None):
    """Return ``(L, p_star)`` at ``(x, u, v)``; arrays broadcast.

    ``p0`` is an optional warm start (for instance the previous ``p*``).
    """
    h = lv.h
    p = solve_momentum(h, x, u, v, p0=p0)
    L = p * v - h.H(x, u, p)
    if np.ndim(L) == 0:
        return float(L), float(p)
    return L, p


def velocity_of_momentum(lv: LagrangianView, x, u, p):
    """Inverse of the ``p*`` map: the velocity ``H_p(x, u, p)``."""
    out = lv.h.d_p(x, u, p)
    return float(out) if np.ndim(out) == 0 else out


def verify_involution(lv: LagrangianView, pts) -> float:
    """Max error of the double conjugate ``sup_v {p v - L(x,u,v)}`` against ``H``.

    The inner supremum is attained at ``v = H_p(x, u, p)``; that velocity is
    fed back through :func:`lagrangian` so the Newton inversion is what gets
    tested.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    x, u, p = pts[:, 0], pts[:, 1], pts[:, 2]
    v = lv.h.d_p(x, u, p)
    L, _ = lagrangian(lv, x, u, v)
    return float(np.max(np.abs(p * v - L - lv.h.H(x, u, p))))


def lagrangian_values(h: HamiltonianModel, x, u, v):
    """``L`` only, preferring the model's closed form when it carries one."""
    if h.lagrangian is not None:
        return h.lagrangian(x, u, v)
    p = solve_momentum(h, x, u, v)
    return p * v - h.H(x, u, p)
