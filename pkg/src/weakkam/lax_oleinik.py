"""The implicitly defined solution semigroup and its discretization.

The value at ``(x, t)`` is the least ``phi(gamma(0))`` plus action over
curves ending at ``x``, where the Lagrangian is evaluated at the solution
itself.  Discretely we work with curves that are linear on each time step
and minimize, per node, over the foot point ``x - dt*v`` of one step:

    w(x) = min_v { u_prev(x - dt*v) + dt * L(x, w(x), v) }

``u_prev`` is interpolated piecewise-linearly.  Over one interpolation cell
the objective is convex in ``v`` and its stationary velocity is
``H_p(x, w, s)`` for the cell slope ``s``, so the minimum over the
interpolant is computed exactly from the cells and nodes within reach
(``search="exact"``).  ``search="chebyshev"`` instead scans Chebyshev
points and refines with golden sections.

Two ways of solving for the trajectory are provided and agree:

* :func:`fixed_point_of_A` -- Picard iteration of the space-time operator
  :func:`apply_A`, in which the Lagrangian sees a frozen input function;
* :func:`evolve` -- step by step, each step a small Picard solve.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import GridFn, Torus1, interp, lipschitz_estimate, sup_dist, sup_norm
from .hamiltonian import HamiltonianModel
from .legendre import lagrangian_values, solve_momentum

logger = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class VelocityBoundError(RuntimeError):
    """The minimizing velocity hit the edge of the search window."""

    def __init__(self, message, v_bound=None):
        super().__init__(message)
        self.v_bound = v_bound


class PicardError(RuntimeError):
    pass


class CalibrationDefectError(RuntimeError):
    def __init__(self, message, curve=None):
        super().__init__(message)
        self.curve = curve


@dataclass
class SchemeOptions:
    """Knobs of the semi-Lagrangian scheme.

    ``v_bound=None`` means ``10 * (1 + Lip)`` of the slice being stepped
    from.  ``rule`` selects which time slice of the frozen input the
    Lagrangian of :func:`apply_A` reads: ``"right"`` (the arrival slice,
    whose fixed point is the stepping scheme) or ``"left"`` (the departure
    slice).
    """

    picard_tol: float = 1e-12
    picard_max: int = 100
    v_bound: float | None = None
    v_count: int = 21
    search: str = "exact"
    golden_iters: int = 12
    rule: str = "right"
    calib_tol: float = 5e-3
    max_bound_doublings: int = 8
    threads: int = 1


def default_v_bound(values: np.ndarray, dx: float) -> float:
    lip = float(np.max(np.abs(np.roll(values, -1) - values)) / dx)
    return 10.0 * (1.0 + lip)


# -- the one-step minimization ---------------------------------------------------

def _exact_min(prev, dx, dt, base, theta, y, u_arg, h, v_bound):
    n = prev.size
    K = max(1, int(math.ceil(v_bound * dt / dx)))
    m = np.arange(-K - 1, K + 2)
    un = prev[(base[:, None] + m[None, :]) % n]
    v_node = (np.asarray(theta)[..., None] - m) * (dx / dt)
    if np.ndim(v_node) == 1:
        v_node = v_node[None, :]
    yc = y[:, None]
    uc = u_arg[:, None]
    node_val = un + dt * lagrangian_values(h, yc, uc, v_node)

    s = (un[:, 1:] - un[:, :-1]) / dx
    v_cell = h.d_p(yc, uc, s)
    ok = (v_cell <= v_node[:, :-1]) & (v_cell >= v_node[:, 1:])
    offset = (np.asarray(theta)[..., None] - m[:-1]) * dx
    if np.ndim(offset) == 1:
        offset = offset[None, :]
    with np.errstate(invalid="ignore", over="ignore"):
        cell_val = np.where(ok, un[:, :-1] + s * offset - dt * h.H(yc, uc, s), np.inf)

    vals = np.concatenate([node_val, cell_val], axis=1)
    vels = np.concatenate([np.broadcast_to(v_node, node_val.shape), v_cell], axis=1)
    best = vals.min(axis=1)
    # ties go to the smallest |v|
    cand = np.where(vals == best[:, None], np.abs(vels), np.inf)
    j = np.argmin(cand, axis=1)
    rows = np.arange(vals.shape[0])
    at_edge = (j == 0) | (j == node_val.shape[1] - 1)
    return best, vels[rows, j], at_edge


def _chebyshev_min(prev, grid, dt, y, u_arg, h, v_bound, v_count, golden_iters):
    if v_count < 9 or v_count % 2 == 0:
        raise ValueError("v_count must be odd and at least 9")
    u_prev = GridFn(grid, prev)

    def f(v):
        return interp(u_prev, y[:, None] - dt * v) + dt * lagrangian_values(h, y[:, None], u_arg[:, None], v)

    k = np.arange(v_count)
    cand = v_bound * np.cos(np.pi * k / (v_count - 1))[None, :]
    fv = f(cand)
    best = fv.min(axis=1)
    j = np.argmin(np.where(fv == best[:, None], np.abs(cand), np.inf), axis=1)
    at_edge = (j == 0) | (j == v_count - 1)
    jl = np.clip(j + 1, 0, v_count - 1)
    jr = np.clip(j - 1, 0, v_count - 1)
    a = cand[0, jl][:, None]
    b = cand[0, jr][:, None]
    for _ in range(golden_iters):
        c = b - GOLDEN * (b - a)
        d = a + GOLDEN * (b - a)
        fc, fd = f(c), f(d)
        left = fc < fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    v_ref = np.where(fc < fd, c, d)[:, 0]
    f_ref = np.minimum(fc, fd)[:, 0]
    v0 = cand[0, j]
    better = f_ref < best
    return np.where(better, f_ref, best), np.where(better, v_ref, v0), at_edge


def minimize_step(prev: np.ndarray, grid: Torus1, dt: float, x, u_arg, h: HamiltonianModel,
                  v_bound: float, opts: SchemeOptions | None = None):
    """``min_v { interp(prev, x - dt*v) + dt*L(x, u_arg, v) }`` at points ``x``.

    Returns ``(value, argmin_velocity)`` arrays.  The search is node-parallel;
    ``opts.threads > 1`` splits the points into chunks.

    Raises
    ------
    VelocityBoundError
        If any minimizer sits on the edge of ``[-v_bound, v_bound]``.
    """
    opts = opts or SchemeOptions()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u_arg = np.broadcast_to(np.asarray(u_arg, dtype=float), x.shape)
    c = h.u_coefficient
    u_eval = np.zeros_like(x) if c is not None else np.array(u_arg)

    def run(sl):
        xs, us = x[sl], u_eval[sl]
        if opts.search == "exact":
            s = np.mod(xs, grid.period) / grid.dx
            base = np.floor(s)
            theta = s - base
            base = base.astype(int) % grid.n
            theta = np.where(theta < 1e-12, 0.0, theta)
            return _exact_min(prev, grid.dx, dt, base, theta, xs, us, h, v_bound)
        if opts.search == "chebyshev":
            return _chebyshev_min(prev, grid, dt, xs, us, h, v_bound, opts.v_count, opts.golden_iters)
        raise ValueError(f"unknown velocity search {opts.search!r}")

    if opts.threads > 1 and x.size >= 2 * opts.threads:
        chunks = np.array_split(np.arange(x.size), opts.threads)
        with ThreadPoolExecutor(opts.threads) as pool:
            parts = list(pool.map(lambda ix: run(ix), chunks))
        val, vel, edge = (np.concatenate(z) for z in zip(*parts))
    else:
        val, vel, edge = run(slice(None))
    if edge.any():
        k = int(np.flatnonzero(edge)[0])
        raise VelocityBoundError(
            f"velocity bound too small: minimizer at the edge of +-{v_bound:.4g} "
            f"near x={x[k]:.6g}", v_bound=v_bound)
    if c is not None:
        val = val - dt * c * u_arg
    return val, vel


# -- space-time functions and the operator A ---------------------------------------

@dataclass
class SpaceTimeFn:
    grid: Torus1
    times: np.ndarray
    slices: np.ndarray
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.slices = np.atleast_2d(np.asarray(self.slices, dtype=float))
        if self.slices.shape != (self.times.size, self.grid.n):
            raise ValueError("slices must have shape (len(times), n)")
        if self.times.size > 1:
            dts = np.diff(self.times)
            if np.max(np.abs(dts - dts[0])) > 1e-12 * max(1.0, self.times[-1]):
                raise ValueError("time steps must be uniform")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def slice(self, j) -> GridFn:
        return GridFn(self.grid, self.slices[j])

    def final(self) -> GridFn:
        return self.slice(-1)

    @classmethod
    def constant_in_time(cls, phi: GridFn, horizon: float, dt: float) -> "SpaceTimeFn":
        m = _step_count(horizon, dt)
        times = np.arange(m + 1) * dt
        return cls(phi.grid, times, np.tile(phi.values, (m + 1, 1)))

    def sup_dist(self, other: "SpaceTimeFn") -> float:
        return float(np.max(np.abs(self.slices - other.slices)))


def _step_count(t_end, dt):
    k = int(round(t_end / dt))
    if k < 1:
        raise ValueError("t_end must be at least one time step")
    if abs(k * dt - t_end) > 1e-9 * max(1.0, abs(t_end)):
        warnings.warn(f"t_end={t_end} is not a multiple of dt={dt}; using {k * dt}", stacklevel=3)
    return k


def apply_A(phi: GridFn, u: SpaceTimeFn, h: HamiltonianModel, v_bound: float | None = None,
            v_count: int = 21, rule: str = "right", search: str = "exact") -> SpaceTimeFn:
    """One application of the action-minimization operator with ``u`` frozen.

    Slice ``j`` is ``min_v { A(x - dt*v, t_{j-1}) + dt*L(x, u(x, t_k), v) }``
    with ``k = j`` for ``rule="right"`` and ``k = j - 1`` for ``rule="left"``;
    slice 0 is ``phi``.
    """
    if rule not in ("right", "left"):
        raise ValueError("rule must be 'right' or 'left'")
    grid, dt = u.grid, u.dt
    if abs(u.times[0]) > 1e-14:
        raise ValueError("the input must start at t = 0")
    vb = v_bound if v_bound is not None else default_v_bound(phi.values, grid.dx)
    opts = SchemeOptions(v_count=v_count, search=search)
    out = np.empty_like(u.slices)
    out[0] = phi.values
    x = grid.nodes
    shift = 0 if rule == "right" else 1
    for j in range(1, u.times.size):
        out[j], _ = minimize_step(out[j - 1], grid, dt, x, u.slices[j - shift], h, vb, opts)
    return SpaceTimeFn(grid, u.times.copy(), out)


def fixed_point_of_A(phi: GridFn, horizon: float, h: HamiltonianModel, tol: float = 1e-10,
                     dt: float = 1e-3, v_bound: float | None = None, v_count: int = 21,
                     rule: str = "right", search: str = "exact", seed: SpaceTimeFn | None = None,
                     ) -> SpaceTimeFn:
    """Picard-iterate :func:`apply_A` from ``phi`` extended constantly in time.

    Stops once consecutive iterates differ by at most ``tol`` on every slice;
    ``result.info["iterations"]`` records the count.  The iterate distances
    shrink at least like ``(t*lam)^k / k!``, so more than
    ``ceil(e*lam*horizon) + 50`` iterations is treated as an error.
    """
    u = seed if seed is not None else SpaceTimeFn.constant_in_time(phi, horizon, dt)
    limit = math.ceil(math.e * h.lam * horizon) + 50
    vb = v_bound if v_bound is not None else default_v_bound(phi.values, phi.grid.dx)
    dists = []
    for k in range(1, limit + 1):
        while True:
            try:
                nxt = apply_A(phi, u, h, vb, v_count, rule, search)
                break
            except VelocityBoundError:
                logger.info("fixed_point_of_A: doubling v_bound %g", vb)
                vb *= 2.0
        d = nxt.sup_dist(u)
        dists.append(d)
        u = nxt
        if d <= tol:
            u.info.update(iterations=k, distances=dists, v_bound=vb)
            return u
    raise PicardError(f"operator A did not converge in {limit} iterations (last change {dists[-1]:.3g})")


# -- step-by-step evolution -------------------------------------------------------------

@dataclass
class SemigroupState:
    """Current time and slice of ``T_t phi`` plus per-step diagnostics.

    ``history`` (when kept) holds every slice from ``t = 0``; ``velocities``
    the minimizing velocity field of each step.
    """

    t: float
    u: GridFn
    phi: GridFn
    diagnostics: list = field(default_factory=list)
    history: list | None = None
    velocities: list | None = None
    dt: float | None = None

    @classmethod
    def start(cls, phi: GridFn, keep_history: bool = False) -> "SemigroupState":
        return cls(0.0, phi, phi, [], [phi.values] if keep_history else None,
                   [] if keep_history else None)

    def space_time(self) -> SpaceTimeFn:
        if self.history is None:
            raise ValueError("this run did not keep its history")
        times = np.arange(len(self.history)) * self.dt
        return SpaceTimeFn(self.u.grid, times, np.array(self.history))

    def diagnostics_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "sup_norm", "lip", "max_v", "picard_iters"])
        for d in self.diagnostics:
            w.writerow([repr(d["t"]), repr(d["sup_norm"]), repr(d["lip"]), repr(d["max_v"]), d["picard_iters"]])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_json(self) -> dict:
        return {"t": self.t, "dt": self.dt, "u": self.u.to_json(), "phi": self.phi.to_json(),
                "diagnostics": self.diagnostics}

    @classmethod
    def from_json(cls, obj) -> "SemigroupState":
        if isinstance(obj, (str, bytes)):
            obj = json.loads(obj)
        return cls(float(obj["t"]), GridFn.from_json(obj["u"]), GridFn.from_json(obj["phi"]),
                   list(obj.get("diagnostics", [])), dt=obj.get("dt"))


def step(state: SemigroupState, dt: float, h: HamiltonianModel,
         opts: SchemeOptions | None = None, v_bound: float | None = None) -> SemigroupState:
    """Advance ``state`` by ``dt`` in place and return it.

    Solves ``w = min_v { u(x - dt*v) + dt*L(x, w, v) }`` node-wise by Picard
    iteration from ``w = u``.  ``dt * lam <= 0.5`` keeps the iteration a
    contraction with factor at most 1/2.  For models declaring an affine
    ``u`` dependence the iteration's limit ``m0 / (1 + dt*c)`` is used
    directly (one minimization, recorded as one iteration).
    """
    opts = opts or SchemeOptions()
    if dt <= 0:
        raise ValueError("dt must be positive")
    if dt * h.lam > 0.5:
        raise ValueError(f"dt*lambda = {dt * h.lam:g} exceeds 0.5")
    g = state.u.grid
    u = state.u.values
    x = g.nodes
    vb = v_bound or opts.v_bound or default_v_bound(u, g.dx)
    c = h.u_coefficient
    if c is not None:
        # L(x, w, v) = L(x, 0, v) - c*w, so the minimizer does not move with w
        # and the Picard limit of w <- m0 - dt*c*w is available in closed form
        m0, vel = minimize_step(u, g, dt, x, np.zeros_like(u), h, vb, opts)
        w = m0 / (1.0 + dt * c)
        it = 1
    else:
        w = u.copy()
        for it in range(1, opts.picard_max + 1):
            w_new, vel = minimize_step(u, g, dt, x, w, h, vb, opts)
            change = np.max(np.abs(w_new - w))
            w = w_new
            if change <= opts.picard_tol:
                break
        else:
            raise PicardError(f"Picard iteration stalled at change {change:.3g}")
    state.u = GridFn(g, w)
    state.t = state.t + dt
    state.dt = dt
    state.diagnostics.append({
        "t": state.t, "sup_norm": sup_norm(state.u), "lip": lipschitz_estimate(state.u),
        "max_v": float(np.max(np.abs(vel))), "picard_iters": it,
    })
    if state.history is not None:
        state.history.append(w)
        state.velocities.append(vel)
    return state


def evolve(phi: GridFn, t_end: float, dt: float, h: HamiltonianModel,
           opts: SchemeOptions | None = None, keep_history: bool = False,
           callback=None, state: SemigroupState | None = None) -> SemigroupState:
    """Apply :func:`step` ``t_end/dt`` times starting from ``phi`` (or ``state``).

    A step whose minimizer hits the velocity window is retried with the
    bound doubled.  ``callback(state, previous_values)`` runs after each step.
    """
    opts = opts or SchemeOptions()
    k = _step_count(t_end, dt)
    if state is None:
        state = SemigroupState.start(phi, keep_history)
    for _ in range(k):
        prev = state.u.values
        vb = opts.v_bound or default_v_bound(prev, phi.grid.dx)
        for attempt in range(opts.max_bound_doublings + 1):
            try:
                step(state, dt, h, opts, v_bound=vb)
                break
            except VelocityBoundError:
                if attempt == opts.max_bound_doublings:
                    raise
                logger.warning("t=%.6g: minimizer at velocity bound %.4g, doubling", state.t, vb)
                vb *= 2.0
        if callback is not None:
            callback(state, prev)
    return state


# -- calibrated curves ---------------------------------------------------------------------

@dataclass
class CalibratedCurve:
    times: np.ndarray
    gamma: np.ndarray
    u_along: np.ndarray
    p_along: np.ndarray
    v_along: np.ndarray
    action_along: np.ndarray
    defect: np.ndarray

    @property
    def max_defect(self) -> float:
        return float(np.max(self.defect))


def terminal_minimizer(prev: np.ndarray, current: np.ndarray, grid: Torus1, dt: float, x,
                       h: HamiltonianModel, opts: SchemeOptions | None = None, v_bound=None):
    """Minimizing velocity, value and momentum of the last step into ``(x, t)``."""
    opts = opts or SchemeOptions()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    w = interp(GridFn(grid, current), x)
    vb = v_bound or opts.v_bound or default_v_bound(prev, grid.dx)
    for attempt in range(opts.max_bound_doublings + 1):
        try:
            _, v = minimize_step(prev, grid, dt, x, w, h, vb, opts)
            break
        except VelocityBoundError:
            if attempt == opts.max_bound_doublings:
                raise
            vb *= 2.0
    p = solve_momentum(h, x, w, v)
    return v, np.atleast_1d(w), p


def backtrack_calibrated(history, x: float, h: HamiltonianModel, opts: SchemeOptions | None = None,
                         t_index: int | None = None) -> CalibratedCurve:
    """Recover a minimizing curve ending at ``(x, t)`` from a stored run.

    ``history`` is a :class:`SpaceTimeFn` or a :class:`SemigroupState` that
    kept its history.  Walking back one step at a time, the minimizing
    velocity is recomputed at the (off-grid) current point and the curve
    moves to its foot.  The calibration identity
    ``u(gamma(t_j), t_j) = phi(gamma(0)) + sum dt*L`` is checked along the way.

    Raises
    ------
    CalibrationDefectError
        If the identity is off by more than ``opts.calib_tol`` anywhere.
    """
    opts = opts or SchemeOptions()
    st = history.space_time() if isinstance(history, SemigroupState) else history
    g, dt = st.grid, st.dt
    J = st.times.size - 1 if t_index is None else int(t_index)
    gamma = np.empty(J + 1)
    u_al = np.empty(J + 1)
    v_al = np.zeros(J + 1)
    p_al = np.zeros(J + 1)
    L_al = np.zeros(J + 1)
    y = float(np.mod(x, g.period))
    for j in range(J, 0, -1):
        v, w, p = terminal_minimizer(st.slices[j - 1], st.slices[j], g, dt, y, h, opts)
        gamma[j], u_al[j], v_al[j], p_al[j] = y, w[0], v[0], p[0]
        L_al[j] = float(lagrangian_values(h, y, w[0], v[0]))
        y = y - dt * v[0]
    gamma[0] = y
    u_al[0] = interp(GridFn(g, st.slices[0]), y)
    if J > 0:
        v_al[0], p_al[0] = v_al[1], solve_momentum(h, y, u_al[0], v_al[1])
    action = u_al[0] + np.concatenate([[0.0], np.cumsum(dt * L_al[1:])])
    defect = np.abs(u_al - action)
    curve = CalibratedCurve(st.times[:J + 1].copy(), gamma, u_al, p_al, v_al, action, defect)
    if curve.max_defect > opts.calib_tol:
        raise CalibrationDefectError(
            f"calibration defect {curve.max_defect:.3g} exceeds {opts.calib_tol:g}", curve)
    return curve
