"""Periodic one-dimensional grids and grid functions.

Everything in the package lives on the flat circle ``[0, period)``
sampled at ``n`` equally spaced nodes ``x_i = i * dx``.  A :class:`GridFn`
pairs such a grid with nodal values and interpolates between them
piecewise-linearly (monotone, so it never creates new extrema).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class GridMismatchError(ValueError):
    """Raised when two grid functions do not live on the same grid."""


@dataclass(frozen=True)
class Torus1:
    """Uniform grid on the circle of length ``period``."""

    n: int
    period: float = 1.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 4:
            raise ValueError(f"a torus grid needs an integer n >= 4, got {self.n!r}")
        if not (np.isfinite(self.period) and self.period > 0):
            raise ValueError(f"period must be positive and finite, got {self.period!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "period", float(self.period))

    @property
    def dx(self) -> float:
        return self.period / self.n

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n) * self.dx

    def wrap(self, x):
        """Map positions into ``[0, period)``."""
        return np.mod(x, self.period)

    def sample(self, f) -> "GridFn":
        """Evaluate a vectorized callable at the nodes."""
        return GridFn(self, np.asarray(f(self.nodes), dtype=float) * np.ones(self.n))

    def constant(self, c: float) -> "GridFn":
        return GridFn(self, np.full(self.n, float(c)))


@dataclass(frozen=True, eq=False)
class GridFn:
    """Nodal samples of a continuous function on a :class:`Torus1`.

    The value array is copied and made read-only on construction.
    """

    grid: Torus1
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.size != self.grid.n:
            raise ValueError(f"expected {self.grid.n} values, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function values must be finite (NaN/Inf rejected)")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __call__(self, x):
        return interp(self, x)

    def __len__(self):
        return self.grid.n

    def __add__(self, other):
        if isinstance(other, GridFn):
            _check_same_grid(self, other)
            return GridFn(self.grid, self.values + other.values)
        return GridFn(self.grid, self.values + float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, GridFn):
            _check_same_grid(self, other)
            return GridFn(self.grid, self.values - other.values)
        return GridFn(self.grid, self.values - float(other))

    def __mul__(self, c):
        return GridFn(self.grid, self.values * float(c))

    __rmul__ = __mul__

    def __neg__(self):
        return GridFn(self.grid, -self.values)

    def resample(self, grid: Torus1) -> "GridFn":
        """Interpolate onto another grid of the same period."""
        if grid.period != self.grid.period:
            raise GridMismatchError("cannot resample across different periods")
        return GridFn(grid, interp(self, grid.nodes))

    # -- serialization -------------------------------------------------

    def to_json(self) -> dict:
        return {"n": self.grid.n, "period": self.grid.period, "values": self.values.tolist()}

    @classmethod
    def from_json(cls, obj) -> "GridFn":
        if isinstance(obj, (str, bytes)):
            obj = json.loads(obj)
        grid = Torus1(int(obj["n"]), float(obj.get("period", 1.0)))
        return cls(grid, np.asarray(obj["values"], dtype=float))

    def to_csv(self, path=None) -> str:
        """Write ``x,value`` rows (with header); returns the text."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "value"])
        for x, v in zip(self.grid.nodes, self.values):
            w.writerow([repr(float(x)), repr(float(v))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source, period: float = 1.0) -> "GridFn":
        """Read ``x,value`` rows written by :meth:`to_csv` (path or text)."""
        text = source
        if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
            text = Path(source).read_text()
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        if rows and rows[0][0].strip().lower() == "x":
            rows = rows[1:]
        values = np.array([float(r[1]) for r in rows])
        return cls(Torus1(len(values), period), values)


def _check_same_grid(u: GridFn, v: GridFn):
    if u.grid != v.grid:
        raise GridMismatchError(f"grid mismatch: {u.grid} vs {v.grid}")


def interp(u: GridFn, x):
    """Periodic piecewise-linear interpolation of ``u`` at ``x``.

    Works on scalars and arrays; ``x`` is wrapped into ``[0, period)``.
    """
    g = u.grid
    s = np.asarray(np.mod(x, g.period) / g.dx, dtype=float)
    i = np.floor(s)
    theta = s - i
    i = i.astype(int) % g.n
    v = u.values
    out = (1.0 - theta) * v[i] + theta * v[(i + 1) % g.n]
    return float(out) if out.ndim == 0 else out


def sup_norm(u: GridFn) -> float:
    return float(np.max(np.abs(u.values)))


def sup_dist(u: GridFn, v: GridFn) -> float:
    _check_same_grid(u, v)
    return float(np.max(np.abs(u.values - v.values)))


def one_sided_slopes(u: GridFn, i=None):
    """Backward and forward difference quotients at node ``i`` (all nodes if None)."""
    v = u.values
    dx = u.grid.dx
    p_minus = (v - np.roll(v, 1)) / dx
    p_plus = (np.roll(v, -1) - v) / dx
    if i is None:
        return p_minus, p_plus
    i = int(i) % u.grid.n
    return float(p_minus[i]), float(p_plus[i])


def lipschitz_estimate(u: GridFn) -> float:
    """Largest absolute slope between neighbouring nodes (wrap included)."""
    v = u.values
    return float(np.max(np.abs(np.roll(v, -1) - v)) / u.grid.dx)
