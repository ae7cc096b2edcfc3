"""Coefficient functions for pairwise-interacting particle systems.

A model is the quadruple (drift a, diffusion sigma, kernels k1, k2) plus a law
for the initial positions.  Particle i evolves as

    dX_i = a(X_i, mean_j k1(X_i, X_j)) dt + sigma(X_i, mean_j k2(X_i, X_j)) dW_i

Coefficients are built from a small closed family (affine, bump, gaussian)
so the compiled engine can evaluate them; arbitrary callables are accepted
too and routed to the reference engine.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtri


class NotFound(KeyError):
    """Unknown registry name."""


class Smoothness(enum.IntEnum):
    DISCONTINUOUS = 0
    LIPSCHITZ = 1
    C1 = 2
    C2 = 3
    C3 = 4


def phi_eval(r, x):
    """Bump (1 - x^2)^r on |x| <= 1, zero outside.  phi_0 is the indicator of [-1, 1]."""
    if r < 0 or int(r) != r:
        raise ValueError(f"bump order must be a non-negative integer, got {r!r}")
    r = int(r)
    xa = np.asarray(x, dtype=np.float64)
    inside = np.abs(xa) <= 1.0
    if r == 0:
        out = np.where(inside, 1.0, 0.0)
    else:
        out = np.where(inside, (1.0 - xa * xa) ** r, 0.0)
    if np.ndim(out) == 0:
        return float(out)
    return out


def bump_smoothness(r: int) -> Smoothness:
    # (r-1)-th derivative of phi_r is Lipschitz
    if r == 0:
        return Smoothness.DISCONTINUOUS
    if r == 1:
        return Smoothness.LIPSCHITZ
    return Smoothness(min(r, 4))


Fn2 = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class ScalarField2:
    """A real function of (x, y) with optional analytic partials.

    ``form`` is a hashable description ``(kind, *params)`` understood by the
    compiled engine; ``None`` means the field is only available as a callable.
    """

    eval: Fn2
    d_dx: Optional[Fn2] = None
    d_dy: Optional[Fn2] = None
    d_dxx: Optional[Fn2] = None
    d_dxy: Optional[Fn2] = None
    d_dyy: Optional[Fn2] = None
    lipschitz_const: Optional[float] = None
    smoothness: Smoothness = Smoothness.LIPSCHITZ
    form: Optional[tuple] = None
    label: str = ""

    def __call__(self, x, y):
        return self.eval(x, y)

    def partials(self) -> dict:
        names = ("d_dx", "d_dy", "d_dxx", "d_dxy", "d_dyy")
        return {n: getattr(self, n) for n in names if getattr(self, n) is not None}

    @property
    def has_first(self) -> bool:
        return self.d_dx is not None and self.d_dy is not None

    @property
    def has_second(self) -> bool:
        return self.has_first and None not in (self.d_dxx, self.d_dxy, self.d_dyy)


def _const_like(c):
    def f(x, y):
        return np.full(np.broadcast(x, y).shape, float(c))
    return f


def affine(c0: float = 0.0, cx: float = 0.0, cy: float = 0.0) -> ScalarField2:
    """c0 + cx*x + cy*y."""
    c0, cx, cy = float(c0), float(cx), float(cy)

    def f(x, y):
        return c0 + cx * np.asarray(x, dtype=np.float64) + cy * np.asarray(y, dtype=np.float64)

    zero = _const_like(0.0)
    return ScalarField2(
        eval=f,
        d_dx=_const_like(cx),
        d_dy=_const_like(cy),
        d_dxx=zero,
        d_dxy=zero,
        d_dyy=zero,
        lipschitz_const=math.hypot(cx, cy),
        smoothness=Smoothness.C3,
        form=("affine", c0, cx, cy),
        label=f"affine({c0:g}, {cx:g}, {cy:g})",
    )


def constant(c: float) -> ScalarField2:
    return affine(c, 0.0, 0.0)


def bump_kernel(r: int, scale: float) -> ScalarField2:
    """phi_r(scale * |x - y|).

    No analytic partials are attached: for r = 1 the first derivative jumps at
    the edge of the support and the compiled engine never needs them.
    """
    r = int(r)
    scale = float(scale)
    if r < 0 or scale <= 0:
        raise ValueError("bump kernel needs r >= 0 and scale > 0")

    def f(x, y):
        u = scale * np.abs(np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64))
        if r == 0:
            return np.where(u <= 1.0, 1.0, 0.0)
        return np.where(u <= 1.0, (1.0 - u * u) ** r, 0.0)

    lip = None if r == 0 else 2.0 * r * scale * max_bump_slope(r)
    return ScalarField2(
        eval=f,
        lipschitz_const=lip,
        smoothness=bump_smoothness(r),
        form=("bump", float(r), scale),
        label=f"phi_{r}({scale:g}|x-y|)",
    )


def max_bump_slope(r: int) -> float:
    """max over |u| <= 1 of |u| (1-u^2)^(r-1), so |phi_r'| <= 2 r * this."""
    if r <= 1:
        return 1.0
    u = 1.0 / math.sqrt(2 * r - 1)
    return u * (1 - u * u) ** (r - 1)


def gauss_kernel(rate: float) -> ScalarField2:
    """exp(-rate * (x - y)^2), all partials analytic."""
    rate = float(rate)
    if rate <= 0:
        raise ValueError("gaussian kernel rate must be positive")

    def _u(x, y):
        return np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)

    def f(x, y):
        u = _u(x, y)
        return np.exp(-rate * u * u)

    def fx(x, y):
        u = _u(x, y)
        return -2.0 * rate * u * np.exp(-rate * u * u)

    def fy(x, y):
        return -fx(x, y)

    def fxx(x, y):
        u = _u(x, y)
        return (4.0 * rate * rate * u * u - 2.0 * rate) * np.exp(-rate * u * u)

    def fxy(x, y):
        return -fxx(x, y)

    return ScalarField2(
        eval=f,
        d_dx=fx,
        d_dy=fy,
        d_dxx=fxx,
        d_dxy=fxy,
        d_dyy=fxx,
        lipschitz_const=math.sqrt(2.0 * rate / math.e) * math.sqrt(2.0),
        smoothness=Smoothness.C3,
        form=("gauss", rate),
        label=f"exp(-{rate:g}(x-y)^2)",
    )


def zero_kernel() -> ScalarField2:
    return replace(constant(0.0), label="0")


# --- initial laws -----------------------------------------------------------


@dataclass(frozen=True)
class InitialLaw:
    """Law of the initial position, sampled by inverse CDF from a uniform in (0, 1)."""

    kind: str = "uniform"
    lo: float = -1.0
    hi: float = 1.0
    mean: float = 0.0
    sd: float = 1.0
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("uniform", "normal", "point"):
            raise ValueError(f"unknown initial law {self.kind!r}")
        if self.kind == "uniform" and not self.hi > self.lo:
            raise ValueError("uniform law needs hi > lo")
        if self.kind == "normal" and not self.sd > 0:
            raise ValueError("normal law needs sd > 0")

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        if self.kind == "uniform":
            return self.lo + (self.hi - self.lo) * u
        if self.kind == "normal":
            return self.mean + self.sd * ndtri(u)
        return np.full(u.shape, float(self.value))

    def moment(self, k: int) -> float:
        """E|xi|^k, used as a closed-form oracle."""
        if self.kind == "point":
            return abs(self.value) ** k
        if self.kind == "uniform":
            lo, hi = self.lo, self.hi
            if lo >= 0 or hi <= 0:
                a, b = sorted((abs(lo), abs(hi)))
                return (b ** (k + 1) - a ** (k + 1)) / ((k + 1) * (hi - lo))
            return (abs(lo) ** (k + 1) + hi ** (k + 1)) / ((k + 1) * (hi - lo))
        if self.mean == 0.0 and k % 2 == 0:
            return self.sd ** k * math.prod(range(k - 1, 0, -2))
        raise NotImplementedError("closed-form moment only for centred even normal moments")


def uniform_law(lo: float = -1.0, hi: float = 1.0) -> InitialLaw:
    return InitialLaw("uniform", lo=lo, hi=hi)


def point_law(value: float) -> InitialLaw:
    return InitialLaw("point", value=value)


# --- models -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ModelSpec:
    name: str
    drift: ScalarField2
    diffusion: ScalarField2
    kernel1: ScalarField2
    kernel2: ScalarField2
    initial: InitialLaw = field(default_factory=uniform_law)

    @property
    def smoothness_class(self) -> Smoothness:
        return min(f.smoothness for f in (self.drift, self.diffusion, self.kernel1, self.kernel2))

    @property
    def fields(self) -> dict:
        return {
            "drift": self.drift,
            "diffusion": self.diffusion,
            "kernel1": self.kernel1,
            "kernel2": self.kernel2,
        }

    @property
    def compiled_form(self) -> Optional[tuple]:
        """Forms for the compiled engine, or None when some slot is an opaque callable."""
        forms = tuple(f.form for f in self.fields.values())
        if any(f is None for f in forms):
            return None
        if forms[0][0] != "affine" or forms[1][0] != "affine":
            return None
        return forms

    def with_initial(self, law: InitialLaw) -> "ModelSpec":
        return replace(self, initial=law)


def paper_example() -> ModelSpec:
    # The printed drift 2(x - 0.2) + y pushes particles away from 0.2 and the
    # terminal law spreads over roughly [-10, 7]; the reference histogram sits
    # in [-0.5, 0.85] and is reproduced by the mean-reverting sign.
    return ModelSpec(
        name="paper-example",
        drift=affine(0.4, -2.0, 1.0),  # 2(0.2 - x) + y
        diffusion=affine(0.2, 0.0, 0.2),  # 0.2(1 + y)
        kernel1=bump_kernel(1, 10.0),
        kernel2=bump_kernel(1, 5.0),
        initial=uniform_law(-1.0, 1.0),
    )


def paper_example_printed() -> ModelSpec:
    """Same model with the drift exactly as printed, 2(x - 0.2) + y."""
    return replace(paper_example(), name="paper-example-printed", drift=affine(-0.4, 2.0, 1.0))


def smooth_gauss() -> ModelSpec:
    return ModelSpec(
        name="smooth-gauss",
        drift=affine(0.4, -2.0, 1.0),
        diffusion=affine(0.2, 0.0, 0.2),
        kernel1=gauss_kernel(25.0),
        kernel2=gauss_kernel(6.25),
        initial=uniform_law(-1.0, 1.0),
    )


def decoupled_linear(lam: float = 1.0, s: float = 0.2) -> ModelSpec:
    return ModelSpec(
        name="decoupled-linear",
        drift=affine(0.0, lam, 0.0),
        diffusion=constant(s),
        kernel1=zero_kernel(),
        kernel2=zero_kernel(),
        initial=uniform_law(-1.0, 1.0),
    )


_REGISTRY: dict[str, Callable[..., ModelSpec]] = {
    "paper-example": paper_example,
    "paper-example-printed": paper_example_printed,
    "smooth-gauss": smooth_gauss,
    "decoupled-linear": decoupled_linear,
}


def registry_names() -> list[str]:
    return sorted(_REGISTRY)


def registry_get(name: str, **params) -> ModelSpec:
    """Look up a named model; keyword params go to the builder (e.g. ``lam``, ``s``)."""
    try:
        builder = _REGISTRY[name]
    except KeyError:
        raise NotFound(f"unknown model {name!r}; known models: {', '.join(registry_names())}") from None
    return builder(**params)


# --- observables ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Observable:
    name: str
    eval: Callable[[np.ndarray], np.ndarray]
    lipschitz_const: Optional[float] = None

    def __call__(self, x):
        return self.eval(x)


def _paper_g(x):
    return phi_eval(0, 10.0 * np.abs(np.asarray(x, dtype=np.float64) - 0.2))


_OBSERVABLES = {
    "paper-g": lambda: Observable("paper-g", _paper_g, None),
    "identity": lambda: Observable("identity", lambda x: np.asarray(x, dtype=np.float64), 1.0),
    "square": lambda: Observable("square", lambda x: np.asarray(x, dtype=np.float64) ** 2, None),
}


def observable_get(name: str) -> Observable:
    try:
        return _OBSERVABLES[name]()
    except KeyError:
        raise NotFound(f"unknown observable {name!r}; known: {', '.join(sorted(_OBSERVABLES))}") from None


def constant_observable(c: float) -> Observable:
    return Observable(f"const({c:g})", lambda x: np.full(np.shape(x), float(c)), 0.0)


# --- restricted expressions from config --------------------------------------


def field_from_config(raw) -> ScalarField2:
    """Build a coefficient from a config object.

    Accepted shapes::

        {"affine": [c0, cx, cy]}
        {"bump": {"r": 1, "scale": 10}}      # phi_r(scale |x - y|)
        {"gauss": {"rate": 25}}              # exp(-rate (x - y)^2)
        {"const": c}   or a bare number
    """
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        return constant(raw)
    if not isinstance(raw, dict) or len(raw) != 1:
        raise ValueError("coefficient must be a number or a single-key object (affine/bump/gauss/const)")
    (kind, val), = raw.items()
    if kind == "affine":
        if not isinstance(val, (list, tuple)) or len(val) != 3:
            raise ValueError("affine takes [c0, cx, cy]")
        return affine(*(float(v) for v in val))
    if kind == "const":
        return constant(float(val))
    if kind == "bump":
        return bump_kernel(int(val["r"]), float(val["scale"]))
    if kind == "gauss":
        return gauss_kernel(float(val["rate"]))
    raise ValueError(f"unknown coefficient kind {kind!r}")


def law_from_config(raw) -> InitialLaw:
    if not isinstance(raw, dict):
        raise ValueError("initial law must be an object")
    raw = dict(raw)
    kind = raw.pop("kind", "uniform")
    return InitialLaw(kind, **{k: float(v) for k, v in raw.items()})


def model_from_config(raw) -> ModelSpec:
    """A registry name, ``{"name": ..., "params": {...}}`` or an inline coefficient set."""
    if isinstance(raw, str):
        return registry_get(raw)
    if not isinstance(raw, dict):
        raise ValueError("model must be a registry name or an object")
    if "drift" not in raw:
        return registry_get(raw["name"], **raw.get("params", {}))
    required = ("drift", "diffusion", "kernel1", "kernel2")
    missing = [k for k in required if k not in raw]
    if missing:
        raise ValueError(f"inline model missing {missing}")
    return ModelSpec(
        name=raw.get("name", "custom"),
        drift=field_from_config(raw["drift"]),
        diffusion=field_from_config(raw["diffusion"]),
        kernel1=field_from_config(raw["kernel1"]),
        kernel2=field_from_config(raw["kernel2"]),
        initial=law_from_config(raw.get("initial", {"kind": "uniform", "lo": -1.0, "hi": 1.0})),
    )
