"""First and second variations of a d-dimensional SDE under Euler-Maruyama.

The variations are the exact derivatives of the discrete Euler map

    x' = x + nu(x) dt + S(x) dW,

so with A = I + Jnu dt + sum_m dW_m dS_m and B = Hnu dt + sum_m dW_m HS_m

    Y' = A Y,        Z' = A Z + B[Y, Y],

where Y = dX/dx0 and Z = d^2X/dx0^2.  Finite differences of the scheme with
common random numbers therefore agree with Y to round-off, not O(dt).

Every contraction sums its terms after sorting them by value, so relabelling
the coordinates of an exchangeable system permutes the outputs bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .engine import NonFinite, SimGrid, mean_field_all
from .estimators import Z95, map_replicates
from .model import ModelSpec
from .rng import NoisePlan

MAX_DIM_ORDER2 = 16


class MissingDerivative(ValueError):
    pass


def _ssum(a: np.ndarray, axis) -> np.ndarray:
    """Sum over ``axis`` (int or tuple) with the summands in ascending order."""
    if isinstance(axis, tuple):
        a = np.moveaxis(a, axis, tuple(range(-len(axis), 0)))
        a = a.reshape(a.shape[: a.ndim - len(axis)] + (-1,))
        axis = -1
    return np.sum(np.sort(a, axis=axis), axis=axis)


@dataclass(frozen=True, eq=False)
class GeneralSde:
    """dX = nu(X) dt + S(X) dW with X in R^dim and W in R^driver_dim.

    Shapes: drift (d,), diffusion (d, d'), drift_jacobian [i, k],
    diffusion_jacobian [i, m, k], drift_hessian [i, k, l],
    diffusion_hessian [i, m, k, l].
    """

    dim: int
    driver_dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    drift_jacobian: Optional[Callable] = None
    diffusion_jacobian: Optional[Callable] = None
    drift_hessian: Optional[Callable] = None
    diffusion_hessian: Optional[Callable] = None
    name: str = "sde"

    @property
    def has_first(self) -> bool:
        return self.drift_jacobian is not None and self.diffusion_jacobian is not None

    @property
    def has_second(self) -> bool:
        return self.has_first and self.drift_hessian is not None and self.diffusion_hessian is not None


@dataclass(frozen=True, eq=False)
class VariationState:
    t: float
    x: np.ndarray
    first: np.ndarray  # [i, j] = dX_i / dx_j
    second: Optional[np.ndarray] = None  # [i, j, j'] = d^2 X_i / dx_j dx_j'

    @classmethod
    def start(cls, x0, order: int = 1) -> "VariationState":
        x0 = np.array(x0, dtype=np.float64).ravel()
        d = x0.size
        second = np.zeros((d, d, d)) if order == 2 else None
        return cls(0.0, x0, np.eye(d), second)


# --- model instances ----------------------------------------------------------------


def linear_sde(lam: float = 1.0, s: float = 0.0, dim: int = 1) -> GeneralSde:
    """Decoupled dX_i = lam X_i dt + s dW_i."""
    lam, s = float(lam), float(s)
    return GeneralSde(
        dim=dim,
        driver_dim=dim,
        drift=lambda x: lam * x,
        diffusion=lambda x: s * np.eye(dim),
        drift_jacobian=lambda x: lam * np.eye(dim),
        diffusion_jacobian=lambda x: np.zeros((dim, dim, dim)),
        drift_hessian=lambda x: np.zeros((dim, dim, dim)),
        diffusion_hessian=lambda x: np.zeros((dim, dim, dim, dim)),
        name=f"linear({lam:g}, {s:g})",
    )


def constant_sde(sigma: np.ndarray) -> GeneralSde:
    """nu = 0 and a constant diffusion matrix."""
    sigma = np.array(sigma, dtype=np.float64)
    d, dp = sigma.shape
    return GeneralSde(
        dim=d,
        driver_dim=dp,
        drift=lambda x: np.zeros(d),
        diffusion=lambda x: sigma.copy(),
        drift_jacobian=lambda x: np.zeros((d, d)),
        diffusion_jacobian=lambda x: np.zeros((d, dp, d)),
        drift_hessian=lambda x: np.zeros((d, d, d)),
        diffusion_hessian=lambda x: np.zeros((d, dp, d, d)),
        name="constant",
    )


def _pairwise(fn, x):
    return fn(x[:, None], x[None, :])


def _rowsum(m: np.ndarray, order: np.ndarray) -> np.ndarray:
    # columns in ascending-position order, as in the particle engine
    return np.sum(m[:, order], axis=1)


def particle_sde(model: ModelSpec, d: int) -> GeneralSde:
    """The d-particle system as a d-dimensional SDE with diagonal noise.

    nu_i = a(x_i, m1_i), S_ii = sigma(x_i, m2_i), m_i = (1/d) sum_j k(x_i, x_j).
    """
    fields = (model.drift, model.diffusion, model.kernel1, model.kernel2)
    if not all(f.has_first for f in fields):
        missing = [n for n, f in model.fields.items() if not f.has_first]
        raise MissingDerivative(f"model {model.name!r} lacks first partials for {missing}")
    second = all(f.has_second for f in fields)
    a, sg, k1, k2 = fields

    def means(x):
        order = np.argsort(x, kind="stable")
        return mean_field_all(k1, x), mean_field_all(k2, x), order

    def dmean(k, x, order):
        s = _rowsum(_pairwise(k.d_dx, x), order)
        return (np.diag(s) + _pairwise(k.d_dy, x)) / d

    def d2mean(k, x, order):
        sxx = _rowsum(_pairwise(k.d_dxx, x), order)
        kxy = _pairwise(k.d_dxy, x)
        kyy = _pairwise(k.d_dyy, x)
        out = np.zeros((d, d, d))
        idx = np.arange(d)
        out[idx, idx, idx] += sxx
        out[idx, idx, :] += kxy
        out[idx, :, idx] += kxy
        out[:, idx, idx] += kyy
        return out / d

    def drift(x):
        m1, _, _ = means(x)
        return a.eval(x, m1)

    def diffusion(x):
        _, m2, _ = means(x)
        return np.diag(sg.eval(x, m2))

    def coeff_jac(f, x, m, dm):
        return np.diag(f.d_dx(x, m)) + f.d_dy(x, m)[:, None] * dm

    def drift_jacobian(x):
        m1, _, order = means(x)
        return coeff_jac(a, x, m1, dmean(k1, x, order))

    def diffusion_jacobian(x):
        _, m2, order = means(x)
        out = np.zeros((d, d, d))
        out[np.arange(d), np.arange(d), :] = coeff_jac(sg, x, m2, dmean(k2, x, order))
        return out

    def coeff_hess(f, k, x, m, order):
        dm = dmean(k, x, order)
        d2m = d2mean(k, x, order)
        fxx, fxy, fyy, fy = f.d_dxx(x, m), f.d_dxy(x, m), f.d_dyy(x, m), f.d_dy(x, m)
        idx = np.arange(d)
        out = np.zeros((d, d, d))
        out[idx, idx, idx] += fxx
        out[idx, idx, :] += fxy[:, None] * dm
        out[idx, :, idx] += fxy[:, None] * dm
        out += fyy[:, None, None] * dm[:, :, None] * dm[:, None, :]
        out += fy[:, None, None] * d2m
        return out

    def drift_hessian(x):
        m1, _, order = means(x)
        return coeff_hess(a, k1, x, m1, order)

    def diffusion_hessian(x):
        _, m2, order = means(x)
        out = np.zeros((d, d, d, d))
        out[np.arange(d), np.arange(d)] = coeff_hess(sg, k2, x, m2, order)
        return out

    return GeneralSde(
        dim=d,
        driver_dim=d,
        drift=drift,
        diffusion=diffusion,
        drift_jacobian=drift_jacobian,
        diffusion_jacobian=diffusion_jacobian,
        drift_hessian=drift_hessian if second else None,
        diffusion_hessian=diffusion_hessian if second else None,
        name=f"{model.name}[d={d}]",
    )


# --- stepping -----------------------------------------------------------------------------


def _x_update(sde: GeneralSde, x: np.ndarray, dt: float, dw: np.ndarray) -> np.ndarray:
    return x + sde.drift(x) * dt + _ssum(sde.diffusion(x) * dw[None, :], axis=1)


def _check_order(sde: GeneralSde, order: int) -> None:
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if not sde.has_first:
        raise MissingDerivative(f"{sde.name}: first partials are required")
    if order == 2:
        if not sde.has_second:
            raise MissingDerivative(f"{sde.name}: second partials are required for order 2")
        if sde.dim > MAX_DIM_ORDER2:
            raise ValueError(f"order 2 stores d^3 entries; limited to d <= {MAX_DIM_ORDER2}")


def em_step_variation(sde: GeneralSde, state: VariationState, dt: float, gaussians, order: int = 1,
                      step: int = -1) -> VariationState:
    _check_order(sde, order)
    g = np.asarray(gaussians, dtype=np.float64)
    if g.shape != (sde.driver_dim,):
        raise ValueError(f"expected {sde.driver_dim} gaussians, got shape {g.shape}")
    x = state.x
    d = sde.dim
    dw = math.sqrt(dt) * g

    amat = np.eye(d) + sde.drift_jacobian(x) * dt + _ssum(sde.diffusion_jacobian(x) * dw[None, :, None], axis=1)
    xn = _x_update(sde, x, dt, dw)
    first = _ssum(amat[:, :, None] * state.first[None, :, :], axis=1)

    second = None
    if order == 2:
        z = state.second if state.second is not None else np.zeros((d, d, d))
        bmat = sde.drift_hessian(x) * dt + _ssum(sde.diffusion_hessian(x) * dw[None, :, None, None], axis=1)
        y = state.first
        iu, ju = np.triu_indices(d)
        # only j <= j' is computed; the lower half is a mirror, so symmetry is exact
        az = _ssum(amat[:, :, None] * z[None, :, iu, ju], axis=1)  # [i, pair]
        yy = y[:, None, iu] * y[None, :, ju]  # [k, l, pair]
        byy = _ssum(bmat[:, :, :, None] * yy[None], axis=(1, 2))
        second = np.empty((d, d, d))
        second[:, iu, ju] = az + byy
        second[:, ju, iu] = second[:, iu, ju]

    for arr in (xn, first) + ((second,) if second is not None else ()):
        if not np.all(np.isfinite(arr)):
            bad = np.argwhere(~np.isfinite(arr))[0]
            raise NonFinite(step, int(bad[0]))
    return VariationState(state.t + dt, xn, first, second)


def simulate_variation(sde: GeneralSde, x0, grid: SimGrid, noise: NoisePlan, replicate: int = 0,
                       order: int = 1) -> VariationState:
    _check_order(sde, order)
    x0 = np.array(x0, dtype=np.float64).ravel()
    if x0.size != sde.dim:
        raise ValueError(f"x0 has {x0.size} entries, sde has dim {sde.dim}")
    gauss = noise.gaussian_block(replicate, grid.n_steps, sde.driver_dim)
    state = VariationState.start(x0, order)
    for k in range(grid.n_steps):
        state = em_step_variation(sde, state, grid.dt, gauss[k], order, k)
    return VariationState(grid.t_end, state.x, state.first, state.second)


def simulate_sde(sde: GeneralSde, x0, grid: SimGrid, noise: NoisePlan, replicate: int = 0) -> np.ndarray:
    """Terminal state only, using exactly the x-update of ``simulate_variation``."""
    x = np.array(x0, dtype=np.float64).ravel()
    gauss = noise.gaussian_block(replicate, grid.n_steps, sde.driver_dim)
    sq = math.sqrt(grid.dt)
    for k in range(grid.n_steps):
        x = _x_update(sde, x, grid.dt, sq * gauss[k])
        if not np.all(np.isfinite(x)):
            raise NonFinite(k, int(np.flatnonzero(~np.isfinite(x))[0]))
    return x


def fd_first_variation(sde: GeneralSde, x0, grid: SimGrid, noise: NoisePlan, replicate: int = 0,
                       h: float = 1e-4) -> np.ndarray:
    """Central differences of the terminal state in each x0 coordinate, common noise."""
    x0 = np.array(x0, dtype=np.float64).ravel()
    out = np.empty((x0.size, x0.size))
    for j in range(x0.size):
        e = np.zeros_like(x0)
        e[j] = h
        up = simulate_sde(sde, x0 + e, grid, noise, replicate)
        dn = simulate_sde(sde, x0 - e, grid, noise, replicate)
        out[:, j] = (up - dn) / (2 * h)
    return out


# --- Monte Carlo functionals ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VectorObservable:
    name: str
    eval: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]


def sum_observable() -> VectorObservable:
    return VectorObservable("sum", lambda x: float(np.sum(np.sort(x))), lambda x: np.ones_like(x))


def sum_sin_observable() -> VectorObservable:
    return VectorObservable("sum-sin", lambda x: float(np.sum(np.sort(np.sin(x)))), np.cos)


def constant_vector_observable(c: float) -> VectorObservable:
    return VectorObservable(f"const({c:g})", lambda x: float(c), lambda x: np.zeros_like(x))


@dataclass(frozen=True)
class ValueGradEstimate:
    gradient: np.ndarray
    ci: np.ndarray
    replicates: int

    def __post_init__(self):
        if self.gradient.shape != self.ci.shape:
            raise ValueError("gradient and ci must have the same length")


def _mean_ci_rows(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = rows.shape[0]
    mean = rows.mean(axis=0)
    if n < 2:
        return mean, np.full(mean.shape, np.inf)
    return mean, Z95 * rows.std(axis=0, ddof=1) / math.sqrt(n)


def value_gradient(sde: GeneralSde, g: VectorObservable, x0, grid: SimGrid, noise: NoisePlan,
                   replicates: int, threads: int = 1) -> ValueGradEstimate:
    """d/dx0_j E g(X(T)) as the mean of sum_i g_i(X(T)) Y_ij(T)."""

    def one(r):
        st = simulate_variation(sde, x0, grid, noise, r, 1)
        return _ssum(g.grad(st.x)[:, None] * st.first, axis=0)

    rows = np.array(map_replicates(one, range(replicates), threads))
    mean, ci = _mean_ci_rows(rows)
    return ValueGradEstimate(mean, ci, replicates)


def value_estimate(sde: GeneralSde, g: VectorObservable, x0, grid: SimGrid, noise: NoisePlan,
                   replicates: int, threads: int = 1) -> tuple[float, float]:
    vals = np.array(map_replicates(lambda r: g.eval(simulate_sde(sde, x0, grid, noise, r)),
                                   range(replicates), threads))
    m, ci = _mean_ci_rows(vals[:, None])
    return float(m[0]), float(ci[0])


def fd_value_gradient(sde: GeneralSde, g: VectorObservable, x0, grid: SimGrid, noise: NoisePlan,
                      replicates: int, h: float = 1e-3, threads: int = 1) -> ValueGradEstimate:
    """Central differences of the plain Monte Carlo value, common random numbers per replicate."""
    x0 = np.array(x0, dtype=np.float64).ravel()

    def one(r):
        row = np.empty(x0.size)
        for j in range(x0.size):
            e = np.zeros_like(x0)
            e[j] = h
            row[j] = (g.eval(simulate_sde(sde, x0 + e, grid, noise, r))
                      - g.eval(simulate_sde(sde, x0 - e, grid, noise, r))) / (2 * h)
        return row

    rows = np.array(map_replicates(one, range(replicates), threads))
    mean, ci = _mean_ci_rows(rows)
    return ValueGradEstimate(mean, ci, replicates)


def variation_moment_check(sde: GeneralSde, x0, grid: SimGrid, noise: NoisePlan, replicates: int,
                           p: int, threads: int = 1) -> dict:
    """Monte Carlo E|dX_i/dx_j (T)|^p, split into diagonal and off-diagonal entries."""
    if p not in (2, 4):
        raise ValueError("p must be 2 or 4")
    d = sde.dim
    firsts = map_replicates(lambda r: simulate_variation(sde, x0, grid, noise, r, 1).first, range(replicates), threads)
    powers = np.abs(np.array(firsts)) ** p  # [replicate, i, j]
    mean, ci = _mean_ci_rows(powers.reshape(replicates, -1))
    mean = mean.reshape(d, d)
    ci = ci.reshape(d, d)
    diag = np.eye(d, dtype=bool)
    i_max = np.unravel_index(np.argmax(mean), mean.shape)
    off = mean[~diag]
    estimates = {
        "max": float(mean[i_max]),
        "diag_max": float(mean[diag].max()),
        "diag_mean": float(mean[diag].mean()),
        "offdiag_max": float(off.max()) if off.size else 0.0,
        "offdiag_mean": float(off.mean()) if off.size else 0.0,
    }
    cis = {
        "max": float(ci[i_max]),
        "diag_max": float(ci[diag][np.argmax(mean[diag])]),
        "offdiag_max": float(ci[~diag][np.argmax(off)]) if off.size else 0.0,
    }
    return {"d": d, "p": p, "replicates": replicates, "estimates": estimates, "ci": cis,
            "seed": noise.master_seed, "sde": sde.name}


def moments_stable(reports: list[dict], factor: float = 3.0, key: str = "max") -> bool:
    """True when the chosen moment stays within ``factor`` across the reports (e.g. over d)."""
    vals = [r["estimates"][key] for r in reports]
    return max(vals) <= factor * min(vals)


def derivative_sums(sde: GeneralSde, x) -> dict:
    """max_i of the l1 norms of the coefficient derivatives at x.

    These are the per-row quantities that the bounded-derivative condition
    keeps uniform in d; the check can only sample them at finitely many d.
    """
    x = np.asarray(x, dtype=np.float64)
    out = {
        "drift_1": float(np.max(np.sum(np.abs(sde.drift_jacobian(x)), axis=1))),
        "diffusion_1": float(np.max(np.sum(np.abs(sde.diffusion_jacobian(x)), axis=(1, 2)))),
    }
    if sde.has_second:
        out["drift_2"] = float(np.max(np.sum(np.abs(sde.drift_hessian(x)), axis=(1, 2))))
        out["diffusion_2"] = float(np.max(np.sum(np.abs(sde.diffusion_hessian(x)), axis=(1, 2, 3))))
    return out
