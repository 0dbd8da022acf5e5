"""Experiment runner: ``python -m weakkam <subcommand> [--config FILE] [--set k=v ...]``.

Configuration is a TOML file of flat tables (``[model]``, ``[grid]``,
``[scheme]``, ``[initial]``, ``[run]``, ``[output]``); see ``DEFAULTS``.
Command-line flags override the file.  Every run writes ``manifest.json``
with the fully resolved configuration, which can itself be passed back
as ``--config``.

Exit codes: 0 success, 1 validation failure, 2 runtime failure, 3 bad
configuration.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from .characteristics import BlowUpError, CausticError, integrate, patch_from_initial
from .convergence import (DescentError, LimsupOptions, StationaryOptions, StationarityError,
                          limsup_analysis, run_to_stationary)
from .fd_oracle import CFLError, LFConfig, lf_evolve
from .grid import GridFn, Torus1
from .hamiltonian import (CalibrationError, HamiltonianModel, SampleSpec, calibrate_alpha,
                          critical_value, discounted_generic, discounted_mechanical, finite_diff_check,
                          potential, validate_hypotheses)
from .lax_oleinik import (CalibrationDefectError, PicardError, SchemeOptions, VelocityBoundError,
                          evolve)
from .legendre import LagrangianView, LegendreError, verify_involution

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

logger = logging.getLogger("weakkam")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2, 3

DEFAULTS = {
    "model": {"family": "discounted_mechanical", "V": "cos", "V_amplitude": 1.0, "V_offset": 0.0,
              "V_period": 1.0, "lam": 1.0, "H1": "quadratic", "calibrate": False, "alpha": None},
    "grid": {"n": 512, "period": 1.0},
    "scheme": {"dt": 1e-3, "picard_tol": 1e-12, "v_bound": None, "v_count": 21, "search": "exact"},
    "initial": {"kind": "sin", "amplitude": 1.0, "frequency": 1, "value": 0.0, "center": 0.5,
                "width": 0.1, "path": None},
    "run": {"t_end": 1.0, "save_every": None, "check_every": 0.5, "stat_tol": 1e-4, "t_max": 50.0,
            "descent_time": 10.0, "x0": [0.1, 0.3, 0.5, 0.7, 0.9], "p0": [0.0], "u0": 0.0,
            "char_dt": 1e-3, "patch": False, "t_small": 0.05, "patch_window": [0.0, 1.0], "compare_times": [1.0],
            "seed": 0, "threads": None},
    "output": {"directory": "out", "formats": ["csv", "json"]},
}

RUNTIME_ERRORS = (VelocityBoundError, PicardError, StationarityError, LegendreError, BlowUpError,
                  CausticError, CFLError, DescentError, CalibrationDefectError, CalibrationError)


class ConfigError(ValueError):
    pass


# -- configuration -----------------------------------------------------------------

def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def merge_config(base: dict, override: dict, where: str = "") -> dict:
    """Deep-merge ``override`` into a copy of ``base``; unknown keys are errors."""
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where}{k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{where}{k} must be a table")
            out[k] = merge_config(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def load_config(path=None, sets=(), flags=None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        try:
            if p.suffix == ".json":
                data = json.loads(p.read_text())
                data = data.get("config", data)
            else:
                data = tomllib.loads(p.read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        cfg = merge_config(cfg, data)
    for item in sets:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        key, val = item.split("=", 1)
        sec, name = key.strip().split(".", 1)
        cfg = merge_config(cfg, {sec: {name: _parse_value(val.strip())}})
    for (sec, name), val in (flags or {}).items():
        if val is not None:
            cfg = merge_config(cfg, {sec: {name: val}})
    check_config(cfg)
    return cfg


def check_config(cfg: dict) -> None:
    g, s, r = cfg["grid"], cfg["scheme"], cfg["run"]
    try:
        n = int(g["n"])
        if n != g["n"] or n < 4:
            raise ConfigError("grid.n must be an integer >= 4")
        for key in ("dt", "picard_tol"):
            if not float(s[key]) > 0:
                raise ConfigError(f"scheme.{key} must be positive")
        for key in ("check_every", "stat_tol", "t_max", "char_dt", "t_small"):
            if not float(r[key]) > 0:
                raise ConfigError(f"run.{key} must be positive")
        lam = float(cfg["model"]["lam"]) if cfg["model"]["family"] != "discounted_mechanical" else 1.0
        if float(s["dt"]) * lam > 0.5:
            raise ConfigError("scheme.dt * lambda must not exceed 0.5")
        if s["search"] not in ("exact", "chebyshev"):
            raise ConfigError("scheme.search must be 'exact' or 'chebyshev'")
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def build_model(mc: dict) -> HamiltonianModel:
    fam = mc["family"]
    if fam == "discounted_mechanical":
        return discounted_mechanical(mc["V"], mc["V_amplitude"], mc["V_period"], mc["V_offset"])
    if fam == "discounted_generic":
        V, dV = potential(mc["V"], mc["V_amplitude"], mc["V_period"], mc["V_offset"])
        if mc["H1"] == "quadratic":
            return discounted_generic(mc["lam"], lambda x, p: 0.5 * p * p + V(x), lambda x, p: dV(x) + 0 * p,
                                      lambda x, p: p + 0 * x, lambda x, p: 1.0 + 0 * (x + p),
                                      lambda x, v: 0.5 * v * v - V(x))
        if mc["H1"] == "quartic":
            return discounted_generic(mc["lam"], lambda x, p: 0.25 * p ** 4 + V(x), lambda x, p: dV(x) + 0 * p,
                                      lambda x, p: p ** 3 + 0 * x, lambda x, p: 3 * p * p + 0 * x,
                                      lambda x, v: 0.75 * np.abs(v) ** (4 / 3) - V(x))
        if mc["H1"] == "relativistic":
            # strictly convex but only linearly growing: a negative control for validate
            return discounted_generic(mc["lam"], lambda x, p: np.sqrt(1 + p * p) + V(x),
                                      lambda x, p: dV(x) + 0 * p, lambda x, p: p / np.sqrt(1 + p * p) + 0 * x,
                                      lambda x, p: (1 + p * p) ** -1.5 + 0 * x,
                                      lambda x, v: np.where(np.abs(v) < 1, -np.sqrt(np.clip(1 - v * v, 0, None)),
                                                            np.inf) - V(x))
        raise ConfigError(f"unknown model.H1 {mc['H1']!r}")
    raise ConfigError(f"unknown model.family {fam!r}")


def build_initial(ic: dict, grid: Torus1) -> GridFn:
    kind = ic["kind"]
    a, k = float(ic["amplitude"]), float(ic["frequency"])
    w = 2 * np.pi * k / grid.period
    if kind == "const":
        return grid.constant(ic["value"])
    if kind == "sin":
        return grid.sample(lambda x: a * np.sin(w * x) + ic["value"])
    if kind == "cos":
        return grid.sample(lambda x: a * np.cos(w * x) + ic["value"])
    if kind == "bump":
        def f(x):
            d = (x - ic["center"] + 0.5 * grid.period) % grid.period - 0.5 * grid.period
            return a * np.exp(-0.5 * (d / ic["width"]) ** 2) + ic["value"]
        return grid.sample(f)
    if kind == "csv":
        if not ic["path"]:
            raise ConfigError("initial.path is required for kind = 'csv'")
        u = GridFn.from_csv(Path(ic["path"]), grid.period)
        return u if u.grid == grid else u.resample(grid)
    raise ConfigError(f"unknown initial.kind {kind!r}")


def initial_closed_form(ic: dict, grid: Torus1):
    """``(phi, phi')`` as callables for the smooth named kinds (used by the classical patch)."""
    a, c = float(ic["amplitude"]), float(ic["value"])
    w = 2 * np.pi * float(ic["frequency"]) / grid.period
    kind = ic["kind"]
    if kind == "const":
        return (lambda x: c + 0.0 * x), (lambda x: 0.0 * x)
    if kind == "sin":
        return (lambda x: a * np.sin(w * x) + c), (lambda x: a * w * np.cos(w * x))
    if kind == "cos":
        return (lambda x: a * np.cos(w * x) + c), (lambda x: -a * w * np.sin(w * x))
    raise ConfigError(f"the classical patch needs a sin/cos/const initial condition, not {kind!r}")


def scheme_options(cfg: dict) -> SchemeOptions:
    s = cfg["scheme"]
    return SchemeOptions(picard_tol=float(s["picard_tol"]), v_bound=s["v_bound"], v_count=int(s["v_count"]),
                         search=s["search"], threads=int(cfg["run"]["threads"] or 1))


# -- output helpers --------------------------------------------------------------------------

def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, default=float))


def _version() -> str:
    from . import __version__
    return __version__


def write_manifest(out: Path, command: str, cfg: dict, extra=None) -> None:
    manifest = {
        "command": command,
        "config": cfg,
        "versions": {"weakkam": _version(), "numpy": np.__version__, "python": platform.python_version()},
        "seed": cfg["run"]["seed"],
    }
    if extra:
        manifest.update(extra)
    _write_json(out / "manifest.json", manifest)


def _save(u: GridFn, out: Path, stem: str, formats) -> None:
    if "csv" in formats:
        u.to_csv(out / f"{stem}.csv")
    if "json" in formats:
        _write_json(out / f"{stem}.json", u.to_json())


def _prepare(cfg):
    grid = Torus1(int(cfg["grid"]["n"]), float(cfg["grid"]["period"]))
    try:
        h = build_model(cfg["model"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg["model"]["alpha"] is not None:
        h.alpha = float(cfg["model"]["alpha"])
    if cfg["model"]["calibrate"]:
        if h.alpha is None:
            calibrate_alpha(h, grid)
        h = h.calibrated()
    return grid, h


# -- subcommands ------------------------------------------------------------------------------

def cmd_validate(cfg, out):
    grid, h = _prepare(cfg)
    rng = np.random.default_rng(cfg["run"]["seed"])
    report = validate_hypotheses(h, SampleSpec(period=grid.period))
    pts = np.column_stack([rng.uniform(0, grid.period, 100), rng.uniform(-2, 2, 100), rng.uniform(-3, 3, 100)])
    inv = verify_involution(LagrangianView(h), pts)
    fd = finite_diff_check(h, pts)
    ok = report.passed and inv <= 1e-6 and fd <= 1e-5
    _write_json(out / "validation.json", {"hypotheses": report.to_json(), "involution_error": inv,
                                          "finite_diff_error": fd, "passed": ok})
    print(f"hypotheses {'ok' if report.passed else 'FAILED'}; involution {inv:.2e}; partials {fd:.2e}")
    return EXIT_OK if ok else EXIT_INVALID


def cmd_evolve(cfg, out):
    grid, h = _prepare(cfg)
    phi = build_initial(cfg["initial"], grid)
    dt = float(cfg["scheme"]["dt"])
    fmt = cfg["output"]["formats"]
    save_every = cfg["run"]["save_every"]
    every = None if not save_every else max(1, int(round(save_every / dt)))
    if every:
        (out / "slices").mkdir(exist_ok=True)

    def cb(state, prev):
        j = int(round(state.t / dt))
        if every and j % every == 0:
            _save(state.u, out / "slices", f"t{state.t:.6f}", fmt)

    state = evolve(phi, float(cfg["run"]["t_end"]), dt, h, scheme_options(cfg), callback=cb)
    _save(state.u, out, "final", fmt)
    state.diagnostics_csv(out / "diagnostics.csv")
    if "json" in fmt:
        _write_json(out / "state.json", state.to_json())
    print(f"t = {state.t:.6g}: sup norm {state.diagnostics[-1]['sup_norm']:.6g}")
    return EXIT_OK


def cmd_stationary(cfg, out):
    grid, h = _prepare(cfg)
    if h.alpha is None:
        calibrate_alpha(h, grid)
        if abs(h.alpha) > 0:
            logger.info("shifting the model by alpha = %g", h.alpha)
        h = h.calibrated()
    phi = build_initial(cfg["initial"], grid)
    r, dt = cfg["run"], float(cfg["scheme"]["dt"])
    opts = StationaryOptions(dt=dt, check_every=float(r["check_every"]), stat_tol=float(r["stat_tol"]),
                             t_max=float(r["t_max"]), scheme=scheme_options(cfg))
    try:
        report = run_to_stationary(phi, h, opts)
    except StationarityError as exc:
        exc.report.write(out)
        raise
    report.write(out)
    lim = limsup_analysis(phi, h, LimsupOptions(dt=dt, t_max=report.t_final, descent_time=float(r["descent_time"]),
                                                record_every=opts.check_every, scheme=opts.scheme),
                          tail=report.tail_slices(report.t_final / 2), strict=False)
    _save(lim.limit, out, "limsup_limit", cfg["output"]["formats"])
    _write_json(out / "limsup.json", {"max_excess": lim.max_excess, "max_rise": lim.max_rise, "slack": lim.slack,
                                      "distance_to_u_infty": float(np.max(np.abs(lim.limit.values - report.u_infty.values)))})
    print(f"stationary at t = {report.t_star:.4g}; sup norm {np.max(np.abs(report.u_infty.values)):.4g}; "
          f"median residual {report.median_residual:.3g}")
    if not (lim.below_ok and lim.descent_ok):
        raise DescentError("descent from the limsup envelope failed", lim)
    return EXIT_OK


def cmd_characteristics(cfg, out):
    grid, h = _prepare(cfg)
    r = cfg["run"]
    x0, p0, u0 = np.broadcast_arrays(np.atleast_1d(np.asarray(r["x0"], float)),
                                     np.atleast_1d(np.asarray(r["p0"], float)),
                                     np.atleast_1d(np.asarray(r["u0"], float)))
    for k in range(x0.size):
        tr = integrate(h, (x0[k], p0[k], u0[k]), float(r["t_end"]), float(r["char_dt"]), grid.period)
        tr.to_csv(out / f"trajectory_{k:03d}.csv")
    summary = {"count": int(x0.size)}
    if r["patch"]:
        phi = build_initial(cfg["initial"], grid)
        f, df = initial_closed_form(cfg["initial"], grid)
        lo, hi = float(r["patch_window"][0]), float(r["patch_window"][1])
        xs = np.linspace(lo, hi, 4 * grid.n)
        patch = patch_from_initial(h, f, df, xs, float(r["t_small"]), float(cfg["scheme"]["dt"]), grid.period)
        state = evolve(phi, float(r["t_small"]), float(cfg["scheme"]["dt"]), h, scheme_options(cfg))
        summary["patch_gap"] = patch.compare(state.u)
    _write_json(out / "characteristics.json", summary)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_critical_value(cfg, out):
    grid, h = _prepare(cfg)
    alpha = calibrate_alpha(h, grid)
    c = critical_value(h, alpha, grid)
    _write_json(out / "critical_value.json", {"alpha": alpha, "critical_value_at_alpha": c,
                                              "critical_value_at_0": critical_value(h, 0.0, grid)})
    print(f"alpha = {alpha:.12g}")
    return EXIT_OK


def cmd_oracle_compare(cfg, out):
    grid, h = _prepare(cfg)
    phi = build_initial(cfg["initial"], grid)
    dt = float(cfg["scheme"]["dt"])
    times = sorted(float(t) for t in cfg["run"]["compare_times"])
    lf_cfg = LFConfig.for_data(phi, h)
    rows = []
    state = None
    u_lf, t_lf = phi, 0.0
    for t in times:
        state = evolve(phi, t - (state.t if state else 0.0), dt, h, scheme_options(cfg), state=state)
        u_lf = lf_evolve(u_lf, t - t_lf, h, lf_cfg)
        t_lf = t
        rows.append((t, float(np.max(np.abs(state.u.values - u_lf.values)))))
        _save(state.u, out, f"sl_t{t:g}", cfg["output"]["formats"])
        _save(u_lf, out, f"lf_t{t:g}", cfg["output"]["formats"])
    (out / "compare.csv").write_text("t,sup_dist\n" + "".join(f"{t!r},{d!r}\n" for t, d in rows))
    for t, d in rows:
        print(f"t = {t:g}: sup distance {d:.3e}")
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "evolve": cmd_evolve,
    "stationary": cmd_stationary,
    "characteristics": cmd_characteristics,
    "critical-value": cmd_critical_value,
    "oracle-compare": cmd_oracle_compare,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="python -m weakkam", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="TOML config (or a previous manifest.json)")
    ap.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                    help="override one config entry (repeatable)")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--n", type=int, help="grid nodes")
    ap.add_argument("--dt", type=float, help="time step")
    ap.add_argument("--t-end", type=float, help="final time")
    ap.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {("output", "directory"): args.out, ("grid", "n"): args.n, ("scheme", "dt"): args.dt,
             ("run", "t_end"): args.t_end, ("run", "threads"): args.threads}
    try:
        cfg = load_config(args.config, args.set, flags)
        if cfg["run"]["threads"] is None:
            cfg["run"]["threads"] = os.cpu_count() or 1
        out = Path(cfg["output"]["directory"])
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out, args.command, cfg)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RUNTIME_ERRORS as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
