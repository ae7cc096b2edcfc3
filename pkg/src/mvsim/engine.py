"""Euler-Maruyama integration of the d-particle system and its d-vs-2d coupling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _compiled
from .model import ModelSpec, ScalarField2
from .rng import NoisePlan


class NonFinite(FloatingPointError):
    def __init__(self, step: int, particle: int, value: float | None = None):
        self.step = step
        self.particle = particle
        self.value = value
        super().__init__(f"non-finite position for particle {particle} at step {step} (value {value})")


@dataclass(frozen=True)
class SimGrid:
    t_end: float = 1.0
    n_steps: int = 64

    def __post_init__(self):
        if not (self.t_end > 0 and math.isfinite(self.t_end)):
            raise ValueError("t_end must be positive and finite")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError("n_steps must be a positive integer")

    @property
    def dt(self) -> float:
        return self.t_end / self.n_steps

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


@dataclass(frozen=True, eq=False)
class ParticleState:
    t: float
    x: np.ndarray
    path: Optional[np.ndarray] = None  # (n_steps + 1, d) when recorded

    @property
    def d(self) -> int:
        return self.x.size


@dataclass(frozen=True, eq=False)
class CoupledPair:
    small: ParticleState
    big: ParticleState
    shared_prefix: int


def sorted_sum(a: np.ndarray, axis: int = -1) -> np.ndarray:
    """Sum whose bits do not depend on the order of the summands."""
    return np.sum(np.sort(a, axis=axis), axis=axis)


# --- reference (numpy) path ---------------------------------------------------


def mean_field(kernel: ScalarField2, i: int, x: np.ndarray) -> float:
    """(1/d) sum_j kernel(x_i, x_j) for 0-based particle i."""
    x = np.asarray(x, dtype=np.float64)
    if not 0 <= i < x.size:
        raise IndexError(f"particle index {i} out of range for d={x.size}")
    xs = np.sort(x)
    return float(np.sum(kernel.eval(x[i], xs)) / x.size)


def mean_field_all(kernel: ScalarField2, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    sums = np.sum(kernel.eval(xs[:, None], xs[None, :]), axis=1)
    out = np.empty_like(x)
    out[order] = sums / x.size
    return out


def em_step(model: ModelSpec, state: ParticleState, dt: float, gaussians: np.ndarray) -> ParticleState:
    x = state.x
    m1 = mean_field_all(model.kernel1, x)
    m2 = mean_field_all(model.kernel2, x)
    a = model.drift.eval(x, m1)
    sig = model.diffusion.eval(x, m2)
    xn = x + a * dt + sig * math.sqrt(dt) * np.asarray(gaussians, dtype=np.float64)
    bad = np.flatnonzero(~np.isfinite(xn))
    if bad.size:
        raise NonFinite(-1, int(bad[0]), float(xn[bad[0]]))
    return ParticleState(state.t + dt, xn)


def _integrate_numpy(model, x0, gauss, grid, record):
    state = ParticleState(0.0, x0)
    path = np.empty((grid.n_steps + 1, x0.size)) if record else None
    if record:
        path[0] = x0
    for k in range(grid.n_steps):
        try:
            state = em_step(model, state, grid.dt, gauss[k])
        except NonFinite as exc:
            raise NonFinite(k, exc.particle, exc.value) from None
        if record:
            path[k + 1] = state.x
    # t from the grid, not accumulated dt
    return ParticleState(grid.t_end, state.x, path)


# --- compiled path -------------------------------------------------------------


def _compiled_args(model: ModelSpec):
    forms = model.compiled_form
    if forms is None:
        return None
    drift, diff, k1, k2 = forms
    coef = np.array(drift[1:4] + diff[1:4], dtype=np.float64)
    k1kind, k1p = _compiled.encode_kernel(k1)
    k2kind, k2p = _compiled.encode_kernel(k2)
    return coef, k1kind, k1p, k2kind, k2p


def _integrate_compiled(args, x0, gauss, grid, record):
    coef, k1kind, k1p, k2kind, k2p = args
    dt = grid.dt
    x, step, particle, path = _compiled.run_system(
        np.ascontiguousarray(x0), np.ascontiguousarray(gauss), dt, math.sqrt(dt),
        coef, k1kind, k1p, k2kind, k2p, bool(record),
    )
    if step != _compiled.OK:
        raise NonFinite(int(step), int(particle))
    return ParticleState(grid.t_end, x, path if record else None)


def resolve_backend(model: ModelSpec, backend: str = "auto") -> str:
    if backend not in ("auto", "numpy", "compiled"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "auto":
        return "compiled" if model.compiled_form is not None else "numpy"
    if backend == "compiled" and model.compiled_form is None:
        raise ValueError(f"model {model.name!r} has coefficients outside the compiled family")
    return backend


def integrate(model: ModelSpec, x0: np.ndarray, gauss: np.ndarray, grid: SimGrid,
              backend: str = "auto", record: bool = False) -> ParticleState:
    """Run the scheme from explicit initial positions and (n_steps, d) standard normals."""
    x0 = np.asarray(x0, dtype=np.float64)
    gauss = np.asarray(gauss, dtype=np.float64)
    if gauss.shape != (grid.n_steps, x0.size):
        raise ValueError(f"gaussians must have shape {(grid.n_steps, x0.size)}, got {gauss.shape}")
    if resolve_backend(model, backend) == "compiled":
        return _integrate_compiled(_compiled_args(model), x0, gauss, grid, record)
    return _integrate_numpy(model, x0, gauss, grid, record)


# --- noise-driven entry points ------------------------------------------------------


def init_particles(model: ModelSpec, d: int, noise: NoisePlan, replicate: int) -> ParticleState:
    if d < 1:
        raise ValueError("d must be >= 1")
    return ParticleState(0.0, model.initial.from_uniform(noise.uniforms(replicate, d)))


def system_inputs(model: ModelSpec, d: int, grid: SimGrid, noise: NoisePlan, replicate: int):
    """(x0, gaussians) consumed by a d-particle run; particle i always reads coordinate i."""
    x0 = init_particles(model, d, noise, replicate).x
    return x0, noise.gaussian_block(replicate, grid.n_steps, d)


def simulate(model: ModelSpec, d: int, grid: SimGrid, noise: NoisePlan, replicate: int = 0,
             backend: str = "auto", record: bool = False) -> ParticleState:
    x0, gauss = system_inputs(model, d, grid, noise, replicate)
    return integrate(model, x0, gauss, grid, backend, record)


def simulate_coupled(model: ModelSpec, d: int, grid: SimGrid, noise: NoisePlan, replicate: int = 0,
                     backend: str = "auto") -> CoupledPair:
    """d- and 2d-particle systems; the first d particles of both read the same noise."""
    x0, gauss = system_inputs(model, 2 * d, grid, noise, replicate)
    small = integrate(model, x0[:d], gauss[:, :d], grid, backend)
    big = integrate(model, x0, gauss, grid, backend)
    return CoupledPair(small, big, d)


# --- dumps -------------------------------------------------------------------


def write_terminal_csv(path, state: ParticleState) -> None:
    with open(path, "w") as fh:
        fh.write("particle,x\n")
        for i, v in enumerate(state.x):
            fh.write(f"{i},{float(v)!r}\n")


def write_trajectory_csv(path, state: ParticleState, grid: SimGrid) -> None:
    if state.path is None:
        raise ValueError("state has no recorded path; simulate with record=True")
    times = grid.times()
    with open(path, "w") as fh:
        fh.write("t,particle,x\n")
        for k, row in enumerate(state.path):
            t = times[k]
            for i, v in enumerate(row):
                fh.write(f"{float(t)!r},{i},{float(v)!r}\n")
