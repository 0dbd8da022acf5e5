"""Long-time behaviour: run the semigroup to rest and certify the limit.

:func:`run_to_stationary` evolves until the distance travelled per unit
time drops below a tolerance.  The limit is then checked against the
stationary equation ``H(x, u, u_x) = 0`` by :func:`stationary_residual`.
:func:`limsup_fixed_point` builds the pointwise upper envelope of a late
window and lets the semigroup descend from it to a common fixed point.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import GridFn, one_sided_slopes, sup_dist
from .hamiltonian import HamiltonianModel
from .lax_oleinik import SchemeOptions, SemigroupState, evolve, step, terminal_minimizer
from .legendre import solve_momentum

logger = logging.getLogger(__name__)


class StationarityError(RuntimeError):
    """``t_max`` was reached first; ``report`` holds what was computed."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class DescentError(RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


@dataclass
class StationaryOptions:
    dt: float = 1e-3
    check_every: float = 0.5
    stat_tol: float = 1e-4
    t_max: float = 50.0
    residual_kind: str = "kink_aware"
    scheme: SchemeOptions = field(default_factory=SchemeOptions)


@dataclass
class ConvergenceReport:
    """Outcome of a run toward the stationary solution.

    ``checkpoints`` holds ``(t, slice values)`` every ``check_every``;
    ``check_distances[k]`` is the sup distance between checkpoints ``k`` and
    ``k + 1``.  ``tail_history`` holds ``{t, sup_dist_to_final}``.
    """

    u_infty: GridFn
    t_star: float | None
    residual_profile: GridFn
    tail_history: list
    monotone_envelope_ok: bool
    check_distances: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list, repr=False)
    fixed_point_move: float | None = None
    sup_norm_ceiling: float | None = None
    dt: float | None = None
    converged: bool = True

    @property
    def median_residual(self) -> float:
        return float(np.median(self.residual_profile.values))

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residual_profile.values))

    @property
    def t_final(self) -> float:
        return self.checkpoints[-1][0] if self.checkpoints else 0.0

    def tail_slices(self, t_from: float) -> list:
        g = self.u_infty.grid
        return [GridFn(g, v) for t, v in self.checkpoints if t >= t_from - 1e-12]

    def to_json(self) -> dict:
        return {
            "t_star": self.t_star, "converged": self.converged, "dt": self.dt,
            "u_infty": self.u_infty.to_json(), "residual_profile": self.residual_profile.to_json(),
            "median_residual": self.median_residual, "max_residual": self.max_residual,
            "tail_history": self.tail_history, "monotone_envelope_ok": self.monotone_envelope_ok,
            "check_distances": self.check_distances, "fixed_point_move": self.fixed_point_move,
            "sup_norm_ceiling": self.sup_norm_ceiling,
        }

    def write(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "report.json").write_text(json.dumps(self.to_json(), indent=2))
        self.u_infty.to_csv(d / "u_infty.csv")
        self.residual_profile.to_csv(d / "residual.csv")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "sup_dist_to_final"])
        for row in self.tail_history:
            w.writerow([repr(row["t"]), repr(row["sup_dist_to_final"])])
        (d / "tail_history.csv").write_text(buf.getvalue())


def stationary_residual(u: GridFn, h: HamiltonianModel, kind: str = "kink_aware") -> GridFn:
    """Node-wise defect of ``u`` in ``H(x, u, u_x) = 0``.

    ``kind``:

    ``"kink_aware"``
        ``|H|`` at the centered slope; at concave corners (``p- > p+``) the
        smaller of that and ``max(|H(p-)|, |H(p+)|)``, since a viscosity
        solution may have such corners with both one-sided slopes on the
        zero level.
    ``"subdifferential"``
        At nodes with ``p- <= p+``, the least ``|H|`` over ``p-``, ``p+``,
        their midpoint and the minimizer of ``H`` in ``p`` if it lies in
        ``[p-, p+]``; at concave corners ``|H|`` at the midpoint.
    ``"centered"``
        ``|H|`` at the centered slope everywhere.
    """
    x = u.grid.nodes
    v = u.values
    pm, pp = one_sided_slopes(u)
    mid = 0.5 * (pm + pp)
    r_mid = np.abs(h.H(x, v, mid))
    if kind == "centered":
        r = r_mid
    elif kind == "kink_aware":
        r_side = np.maximum(np.abs(h.H(x, v, pm)), np.abs(h.H(x, v, pp)))
        r = np.where(pm > pp, np.minimum(r_mid, r_side), r_mid)
    elif kind == "subdifferential":
        p_min = solve_momentum(h, x, v, np.zeros_like(x))
        inside = (p_min >= pm) & (p_min <= pp)
        r_cvx = np.minimum.reduce([np.abs(h.H(x, v, pm)), np.abs(h.H(x, v, pp)), r_mid,
                                   np.where(inside, np.abs(h.H(x, v, p_min)), np.inf)])
        r = np.where(pm <= pp, r_cvx, r_mid)
    else:
        raise ValueError(f"unknown residual kind {kind!r}")
    return GridFn(u.grid, r)


def run_to_stationary(phi: GridFn, h: HamiltonianModel, opts: StationaryOptions | None = None,
                      require_alpha: bool = False) -> ConvergenceReport:
    """Evolve until ``sup_dist(u(t), u(t - check_every)) <= stat_tol * check_every``.

    The check runs every ``check_every`` time units.  The first time it holds
    is ``t_star`` and the run stops there.

    Raises
    ------
    StationarityError
        If ``t_max`` passes first; the exception carries the partial report.
    """
    opts = opts or StationaryOptions()
    if opts.stat_tol <= 0 or opts.check_every <= 0:
        raise ValueError("stat_tol and check_every must be positive")
    if require_alpha and h.alpha is None:
        raise ValueError("the model is not calibrated (alpha unset)")
    dt = opts.dt
    per_check = max(1, int(round(opts.check_every / dt)))
    n_checks = int(np.ceil(opts.t_max / (per_check * dt) - 1e-9))
    state = SemigroupState.start(phi)
    checkpoints = [(0.0, phi.values)]
    dists = []
    t_star = None
    for _ in range(n_checks):
        evolve(phi, per_check * dt, dt, h, opts.scheme, state=state)
        checkpoints.append((state.t, state.u.values))
        d = float(np.max(np.abs(checkpoints[-1][1] - checkpoints[-2][1])))
        dists.append(d)
        logger.info("t=%.4g  moved %.3g over the last check", state.t, d)
        if d <= opts.stat_tol * per_check * dt:
            t_star = state.t
            break

    report = _assemble(state, checkpoints, dists, t_star, h, opts)
    if t_star is None:
        report.converged = False
        raise StationarityError(
            f"no stationarity by t_max={opts.t_max}: last move {dists[-1]:.3g}", report)
    return report


def _assemble(state, checkpoints, dists, t_star, h, opts):
    u = state.u
    final = u.values
    tail = [{"t": t, "sup_dist_to_final": float(np.max(np.abs(v - final)))} for t, v in checkpoints]
    mono = bool(all(b <= a + 1e-12 for a, b in zip(dists, dists[1:])))
    probe = SemigroupState.start(u)
    step(probe, opts.dt, h, opts.scheme)
    move = sup_dist(probe.u, u)
    ceiling = max(float(np.max(np.abs(v))) for _, v in checkpoints)
    return ConvergenceReport(u, t_star, stationary_residual(u, h, opts.residual_kind), tail, mono,
                             dists, checkpoints, move, ceiling, opts.dt)


# -- limsup envelope ---------------------------------------------------------------------

@dataclass
class LimsupOptions:
    dt: float = 1e-3
    t_max: float = 20.0
    descent_time: float = 10.0
    record_every: float = 0.5
    slack_factor: float = 10.0
    scheme: SchemeOptions = field(default_factory=SchemeOptions)


@dataclass
class LimsupResult:
    u_bar: GridFn
    limit: GridFn
    times: np.ndarray
    max_excess: float
    max_rise: float
    slack: float

    @property
    def below_ok(self) -> bool:
        return self.max_excess <= self.slack

    @property
    def descent_ok(self) -> bool:
        return self.max_rise <= self.slack


def limsup_analysis(phi: GridFn, h: HamiltonianModel, opts: LimsupOptions | None = None,
                    tail: list | None = None, strict: bool = True) -> LimsupResult:
    """Envelope ``u_bar`` of the late window, its descent and the two checks.

    ``u_bar`` is the node-wise max over slices recorded in
    ``[t_max/2, t_max]`` (or over ``tail`` when given).  The semigroup is then
    run from ``u_bar`` for ``descent_time``, recording every ``record_every``.
    ``max_excess`` is the largest ``T_t u_bar - u_bar`` and ``max_rise`` the
    largest increase between consecutive records.

    Raises
    ------
    DescentError
        If ``strict`` and either exceeds ``slack_factor * dt``.
    """
    opts = opts or LimsupOptions()
    dt = opts.dt
    every = max(1, int(round(opts.record_every / dt)))
    if tail is None:
        state = SemigroupState.start(phi)
        tail = []
        k = int(round(opts.t_max / (every * dt)))
        for j in range(k):
            evolve(phi, every * dt, dt, h, opts.scheme, state=state)
            if state.t >= opts.t_max / 2 - 1e-12:
                tail.append(state.u)
    if not tail:
        raise ValueError("empty tail window")
    u_bar = GridFn(tail[0].grid, np.max([s.values for s in tail], axis=0))

    state = SemigroupState.start(u_bar)
    prev = u_bar.values
    times = [0.0]
    excess = 0.0
    rise = 0.0
    for _ in range(int(round(opts.descent_time / (every * dt)))):
        evolve(u_bar, every * dt, dt, h, opts.scheme, state=state)
        cur = state.u.values
        excess = max(excess, float(np.max(cur - u_bar.values)))
        rise = max(rise, float(np.max(cur - prev)))
        prev = cur
        times.append(state.t)
    res = LimsupResult(u_bar, state.u, np.array(times), excess, rise, opts.slack_factor * dt)
    if strict and not (res.below_ok and res.descent_ok):
        raise DescentError(
            f"descent from the envelope failed: excess {excess:.3g}, rise {rise:.3g}, slack {res.slack:.3g}",
            res)
    return res


def limsup_fixed_point(phi: GridFn, h: HamiltonianModel, opts: LimsupOptions | None = None,
                       tail: list | None = None) -> GridFn:
    """Limit of the descent from the late-window envelope (see :func:`limsup_analysis`)."""
    return limsup_analysis(phi, h, opts, tail).limit


# -- energy at the end of calibrated curves --------------------------------------------------

@dataclass
class TerminalEnergy:
    times: np.ndarray
    x: np.ndarray
    energies: np.ndarray
    slack: float = 5e-2

    @property
    def max_per_time(self) -> np.ndarray:
        return self.energies.max(axis=1)

    @property
    def limsup_ok(self) -> bool:
        return bool(self.max_per_time[-1] <= self.slack)


def _terminal_energy(prev, cur, grid, dt, x, h, opts):
    v, w, p = terminal_minimizer(prev, cur, grid, dt, x, h, opts)
    return h.H(x, w, p)


def energy_at_terminal(history, h: HamiltonianModel, sample_times, x=None,
                       opts: SchemeOptions | None = None, slack: float = 5e-2) -> TerminalEnergy:
    """``H(x, u(x, t), p(t))`` at the end of the minimizing curve into ``(x, t)``.

    ``history`` is a :class:`SpaceTimeFn` or a state that kept its history.
    ``p(t)`` is the momentum of the minimizing velocity of the last step.
    ``x`` defaults to 16 equally spaced points.
    """
    st = history.space_time() if isinstance(history, SemigroupState) else history
    g = st.grid
    x = np.linspace(0, g.period, 16, endpoint=False) if x is None else np.atleast_1d(np.asarray(x, float))
    out = []
    for t in sample_times:
        j = int(round(t / st.dt))
        if j < 1 or j >= st.times.size:
            raise ValueError(f"sample time {t} outside the stored run")
        out.append(_terminal_energy(st.slices[j - 1], st.slices[j], g, st.dt, x, h, opts))
    return TerminalEnergy(np.asarray(sample_times, float), x, np.array(out), slack)


def energy_along_run(phi: GridFn, h: HamiltonianModel, sample_times, dt: float, x=None,
                     opts: SchemeOptions | None = None, slack: float = 5e-2) -> TerminalEnergy:
    """Same as :func:`energy_at_terminal` but computed during a fresh run.

    Only the two slices around each sample time are used, so no history is
    stored.
    """
    g = phi.grid
    x = np.linspace(0, g.period, 16, endpoint=False) if x is None else np.atleast_1d(np.asarray(x, float))
    idx = {int(round(t / dt)): k for k, t in enumerate(sample_times)}
    out = [None] * len(idx)

    def cb(state, prev):
        j = int(round(state.t / dt))
        if j in idx:
            out[idx[j]] = _terminal_energy(prev, state.u.values, g, dt, x, h, opts)

    evolve(phi, max(sample_times), dt, h, opts, callback=cb)
    return TerminalEnergy(np.asarray(sample_times, float), x, np.array(out), slack)
