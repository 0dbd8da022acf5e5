"""Characteristics of ``u_t + H(x, u, u_x) = 0`` and their energy.

The extended system on ``(x, p, u)`` is

    x' = H_p,   p' = -H_x - H_u p,   u' = H_p p - H

and along it ``dH/ds = -H_u H``: the energy keeps its sign and relaxes
toward zero.  Integration is classical fixed-step RK4; a negative ``dt``
runs the flow backward.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import GridFn, Torus1, interp
from .hamiltonian import HamiltonianModel

BLOWUP = 1e12


class BlowUpError(RuntimeError):
    """A trajectory left every reasonable bound (the flow may be incomplete)."""

    def __init__(self, message, t=None, state=None):
        super().__init__(message)
        self.t = t
        self.state = state


class CausticError(RuntimeError):
    pass


@dataclass(frozen=True)
class CharState:
    x: float
    p: float
    u: float

    def __post_init__(self):
        if not np.all(np.isfinite([self.x, self.p, self.u])):
            raise ValueError("characteristic state must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.p, self.u], dtype=float)


@dataclass
class CharTrajectory:
    times: np.ndarray
    x: np.ndarray
    p: np.ndarray
    u: np.ndarray
    energies: np.ndarray
    period: float = 1.0

    def state(self, j) -> CharState:
        return CharState(float(self.x[j]), float(self.p[j]), float(self.u[j]))

    @property
    def states(self) -> list:
        return [self.state(j) for j in range(self.times.size)]

    @property
    def final(self) -> CharState:
        return self.state(-1)

    def wrapped_x(self) -> np.ndarray:
        return np.mod(self.x, self.period)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "x", "p", "u", "H"])
        for row in zip(self.times, self.wrapped_x(), self.p, self.u, self.energies):
            w.writerow([repr(float(c)) for c in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def char_rhs(h: HamiltonianModel, s):
    """Right-hand side ``(dx, dp, du)``; ``s`` is a CharState or an ``(x, p, u)`` array."""
    if isinstance(s, CharState):
        x, p, u = s.x, s.p, s.u
    else:
        x, p, u = s
    hp = h.d_p(x, u, p)
    dx = hp
    dp = -h.d_x(x, u, p) - h.d_u(x, u, p) * p
    du = hp * p - h.H(x, u, p)
    if np.ndim(dx) == 0:
        return float(dx), float(dp), float(du)
    return dx, dp, du


def _rk4(h, z, dt):
    def f(y):
        return np.array(char_rhs(h, y))

    k1 = f(z)
    k2 = f(z + 0.5 * dt * k1)
    k3 = f(z + 0.5 * dt * k2)
    k4 = f(z + dt * k3)
    return z + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate(h: HamiltonianModel, s0, t_end: float, dt: float, period: float = 1.0) -> CharTrajectory:
    """RK4 from ``s0`` over ``[0, t_end]`` (``t_end < 0`` with ``dt < 0`` runs backward).

    ``s0`` may be a :class:`CharState` or arrays ``(x, p, u)`` of equal
    shape, in which case a batch is integrated together and the trajectory
    fields carry a trailing batch axis.  Positions are not wrapped while
    integrating; :meth:`CharTrajectory.wrapped_x` gives torus positions.

    Raises
    ------
    BlowUpError
        If ``|p|`` or ``|u|`` exceeds ``1e12`` (possible H3 violation).
    """
    if dt == 0 or (t_end != 0 and np.sign(t_end) != np.sign(dt)):
        raise ValueError("dt must be nonzero with the sign of t_end")
    k = int(round(t_end / dt))
    z = s0.as_array() if isinstance(s0, CharState) else np.array(s0, dtype=float)
    out = np.empty((k + 1,) + z.shape)
    out[0] = z
    for j in range(k):
        z = _rk4(h, z, dt)
        if not np.all(np.isfinite(z)) or np.max(np.abs(z[1:])) > BLOWUP:
            raise BlowUpError(f"trajectory blew up at t={(j + 1) * dt:.6g}: possible H3 violation",
                              t=(j + 1) * dt, state=z)
        out[j + 1] = z
    times = np.arange(k + 1) * dt
    x, p, u = out[:, 0], out[:, 1], out[:, 2]
    return CharTrajectory(times, x, p, u, h.H(x, u, p), period)


def energy_law_residual(h: HamiltonianModel, traj: CharTrajectory) -> float:
    """Max over interior samples of ``|dH/ds + H_u H| / (1 + |H|)``, centered differences."""
    if traj.times.size < 3:
        raise ValueError("need at least three samples")
    dt = traj.times[1] - traj.times[0]
    E = traj.energies
    dE = (E[2:] - E[:-2]) / (2 * dt)
    mid = slice(1, -1)
    hu = h.d_u(traj.x[mid], traj.u[mid], traj.p[mid])
    return float(np.max(np.abs(dE + hu * E[mid]) / (1.0 + np.abs(E[mid]))))


@dataclass
class PatchSamples:
    """Scattered classical-solution samples ``u(x(t), t)`` from a fan of characteristics."""

    times: np.ndarray
    x: np.ndarray
    u: np.ndarray
    p: np.ndarray
    x0: np.ndarray
    monotone: np.ndarray
    period: float = 1.0

    def at(self, j: int = -1):
        """``(x, u)`` at time index ``j`` sorted by position (positions not wrapped)."""
        order = np.argsort(self.x[j])
        return self.x[j][order], self.u[j][order]

    def compare(self, u_grid: GridFn, j: int = -1) -> float:
        """Sup gap between the patch and a grid solution interpolated at the sample points."""
        return float(np.max(np.abs(interp(u_grid, self.x[j]) - self.u[j])))


def classical_patch(h: HamiltonianModel, x0, u0, p_range, t_small: float, dt: float = 1e-4,
                    period: float = 1.0, threads: int = 1) -> PatchSamples:
    """Fan characteristics out of the initial data and certify no crossing.

    ``x0``, ``u0`` and ``p_range`` are broadcast together: one characteristic
    starts at ``(x0[k], p_range[k], u0[k])``.  For a smooth initial condition
    ``phi`` pass ``x0`` = start points, ``u0 = phi(x0)`` and
    ``p_range = phi'(x0)``; at each time the positions must stay strictly
    increasing along the fan (ordered as given), which is what makes the
    samples a graph of the classical solution.

    Raises
    ------
    CausticError
        If the ordering is lost at some sampled time.
    """
    x0, u0, p = np.broadcast_arrays(*(np.atleast_1d(np.asarray(a, dtype=float)) for a in (x0, u0, p_range)))
    if t_small <= 0:
        raise ValueError("t_small must be positive")

    def run(ix):
        tr = integrate(h, np.stack([x0[ix], p[ix], u0[ix]]), t_small, dt, period)
        return tr

    if threads > 1 and x0.size >= 2 * threads:
        chunks = np.array_split(np.arange(x0.size), threads)
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, chunks))
        X = np.concatenate([t.x for t in parts], axis=1)
        P = np.concatenate([t.p for t in parts], axis=1)
        U = np.concatenate([t.u for t in parts], axis=1)
        times = parts[0].times
    else:
        tr = run(slice(None))
        X, P, U, times = tr.x, tr.p, tr.u, tr.times
    if x0.size > 1:
        monotone = np.all(np.diff(X, axis=1) > 0, axis=1)
        if not np.all(monotone):
            j = int(np.flatnonzero(~monotone)[0])
            raise CausticError(f"caustic reached at t={times[j]:.4g}, shrink t_small")
    else:
        monotone = np.ones(times.size, dtype=bool)
    return PatchSamples(times, X, U, P, x0, monotone, period)


def patch_from_initial(h: HamiltonianModel, phi, dphi, x_starts, t_small: float, dt: float = 1e-4,
                       period: float = 1.0) -> PatchSamples:
    """Convenience wrapper: start points with ``u0 = phi(x)`` and ``p0 = phi'(x)``."""
    xs = np.asarray(x_starts, dtype=float)
    return classical_patch(h, xs, phi(xs), dphi(xs), t_small, dt, period)


def backward_from_terminal(h: HamiltonianModel, x: float, p: float, u: float, t: float, dt: float,
                           period: float = 1.0) -> CharTrajectory:
    """Integrate from a terminal state at time ``t`` back to time 0.

    The returned trajectory is reordered to run forward in time.
    """
    tr = integrate(h, CharState(x, p, u), -t, -abs(dt), period)
    rev = slice(None, None, -1)
    return CharTrajectory(t + tr.times[rev], tr.x[rev], tr.p[rev], tr.u[rev], tr.energies[rev], period)
