"""Shared models, grids and the long runs that several test modules reuse."""

import time

import numpy as np
import pytest

from weakkam import (SchemeOptions, StationaryOptions, Torus1, discounted_mechanical, evolve,
                     run_to_stationary)

TWO_PI = 2 * np.pi


def sin_phi(grid):
    return grid.sample(lambda x: np.sin(TWO_PI * x))


def smooth_random(rng, grid, modes=4, scale=1.0):
    """Random trigonometric polynomial with decaying coefficients."""
    k = np.arange(1, modes + 1)[:, None]
    a = rng.normal(size=modes)[:, None] / k ** 2
    b = rng.normal(size=modes)[:, None] / k ** 2
    x = grid.nodes[None, :]
    return scale * (a * np.cos(TWO_PI * k * x) + b * np.sin(TWO_PI * k * x)).sum(axis=0)


@pytest.fixture(scope="session")
def h_zero():
    return discounted_mechanical(V="zero")


@pytest.fixture(scope="session")
def h_cos():
    return discounted_mechanical(V="cos")


@pytest.fixture(scope="session")
def h_cos_cal():
    """``u + p^2/2 + cos(2 pi x) - 1``: the cosine model shifted to its critical level."""
    return discounted_mechanical(V="cos").shifted(-1.0)


@pytest.fixture(scope="session")
def g512():
    return Torus1(512)


class RunCache:
    """Memoize expensive runs across test modules."""

    def __init__(self):
        self._store = {}
        self.seconds = {}

    def get(self, key, make):
        if key not in self._store:
            t0 = time.perf_counter()
            self._store[key] = make()
            self.seconds[key] = time.perf_counter() - t0
        return self._store[key]


@pytest.fixture(scope="session")
def runs():
    return RunCache()


@pytest.fixture(scope="session")
def sl_sin_runs(runs, h_zero, h_cos, g512):
    """Semi-Lagrangian runs from sin(2 pi x) on n = 512, dt = 1e-3, sampled at t = 1 and 10."""
    def make(h):
        out = {}

        def cb(state, prev):
            if abs(state.t - 1.0) < 1e-9:
                out[1.0] = state.u
        out[10.0] = evolve(sin_phi(g512), 10.0, 1e-3, h, callback=cb).u
        return out

    return {
        "zero": runs.get(("sl", "zero"), lambda: make(h_zero)),
        "cos": runs.get(("sl", "cos"), lambda: make(h_cos)),
    }


@pytest.fixture(scope="session")
def stationary_cos(runs, h_cos_cal):
    """Long runs of the calibrated cosine model at two resolutions (dt proportional to dx)."""
    def make(n, dt):
        g = Torus1(n)
        return run_to_stationary(sin_phi(g), h_cos_cal, StationaryOptions(dt=dt, t_max=30.0))

    return {
        512: runs.get(("stat", 512), lambda: make(512, 1e-3)),
        1024: runs.get(("stat", 1024), lambda: make(1024, 5e-4)),
    }


@pytest.fixture(scope="session")
def stationary_zero(runs, h_zero, g512):
    return runs.get(("stat0", 512), lambda: run_to_stationary(
        sin_phi(g512), h_zero, StationaryOptions(dt=1e-3, t_max=30.0)))


@pytest.fixture
def fast_opts():
    return SchemeOptions()
