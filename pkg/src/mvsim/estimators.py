"""Monte Carlo error estimates for the d-vs-2d coupling, rate fits, moments and histograms.

Every estimator is assembled from per-replicate summaries (``ErrorSample``),
stored in replicate order and reduced in that order, so the thread count
never changes a reported digit.  Confidence intervals are 95% normal
approximations built from replicate-level means only: particles inside one
replicate are correlated.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .engine import SimGrid, init_particles, simulate, simulate_coupled
from .model import ModelSpec, Observable
from .rng import NoisePlan

Z95 = 1.959963984540054


class NonPositiveError(ValueError):
    """A log-log fit was asked to take the log of a non-positive error."""


class EmptyInput(ValueError):
    pass


# --- replicate bookkeeping ------------------------------------------------------


def map_replicates(fn: Callable[[int], object], replicates: Sequence[int], threads: int = 1) -> list:
    """fn(r) for each replicate id, results returned in the order of ``replicates``."""
    replicates = list(replicates)
    if threads <= 1 or len(replicates) < 2:
        return [fn(r) for r in replicates]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, replicates))


@dataclass(frozen=True)
class ErrorSample:
    d: int
    replicate: int
    strong_sq: float  # (1/d) sum_i (X_i^{2d} - X_i^d)^2
    weak_small: float  # (1/d) sum_i g(X_i^d)
    weak_big: float  # (1/d) sum_{i<d} g(X_i^{2d})
    strong_abs: float = 0.0  # (1/d) sum_i |X_i^{2d} - X_i^d|

    def __post_init__(self):
        if not self.strong_sq >= 0:
            raise ValueError("strong_sq must be non-negative")


def coupled_sample(model: ModelSpec, g: Optional[Observable], d: int, grid: SimGrid,
                   noise: NoisePlan, replicate: int, backend: str = "auto") -> ErrorSample:
    pair = simulate_coupled(model, d, grid, noise, replicate, backend)
    xs = pair.small.x
    xb = pair.big.x[:d]
    gap = xb - xs
    strong_sq = float(np.mean(gap * gap))
    strong_abs = float(np.mean(np.abs(gap)))
    if g is None:
        ws = wb = 0.0
    else:
        ws = float(np.mean(g(xs)))
        wb = float(np.mean(g(xb)))
    return ErrorSample(d, replicate, strong_sq, ws, wb, strong_abs)


def collect_samples(model: ModelSpec, g: Optional[Observable], d: int, grid: SimGrid, noise: NoisePlan,
                    replicates: int, start: int = 0, threads: int = 1,
                    backend: str = "auto") -> list[ErrorSample]:
    """Samples for replicate ids start .. start + replicates - 1."""
    return map_replicates(
        lambda r: coupled_sample(model, g, d, grid, noise, r, backend),
        range(start, start + replicates),
        threads,
    )


def _mean_ci(values: np.ndarray) -> tuple[float, float]:
    n = values.size
    mean = float(np.mean(values))
    if n < 2:
        return mean, math.inf
    return mean, Z95 * float(np.std(values, ddof=1)) / math.sqrt(n)


def strong_stats(samples: Sequence[ErrorSample], norm: str = "rms") -> tuple[float, float]:
    """Strong error and CI half-width from coupled samples.

    ``rms``: sqrt(E gap^2) with a delta-method CI on the square-root scale.
    ``abs``: E|gap|.
    """
    if len(samples) < 2:
        raise ValueError("need at least 2 replicates")
    if norm == "rms":
        m, ci = _mean_ci(np.array([s.strong_sq for s in samples]))
        if m == 0.0:
            return 0.0, 0.0
        return math.sqrt(m), ci / (2.0 * math.sqrt(m))
    if norm == "abs":
        m, ci = _mean_ci(np.array([s.strong_abs for s in samples]))
        return m, (0.0 if m == 0.0 else ci)
    raise ValueError(f"unknown strong norm {norm!r} (rms or abs)")


def weak_stats(samples: Sequence[ErrorSample]) -> tuple[float, float]:
    """|E(weak_big - weak_small)| and the CI of the signed difference."""
    if len(samples) < 2:
        raise ValueError("need at least 2 replicates")
    diff = np.array([s.weak_big - s.weak_small for s in samples])
    if not np.any(diff):
        return 0.0, 0.0
    m, ci = _mean_ci(diff)
    return abs(m), ci


def strong_error(model: ModelSpec, d: int, grid: SimGrid, noise: NoisePlan, replicates: int,
                 threads: int = 1, backend: str = "auto", norm: str = "rms") -> tuple[float, float]:
    if replicates < 2:
        raise ValueError("replicates must be >= 2")
    return strong_stats(collect_samples(model, None, d, grid, noise, replicates, 0, threads, backend), norm)


def weak_error(model: ModelSpec, g: Observable, d: int, grid: SimGrid, noise: NoisePlan, replicates: int,
               threads: int = 1, backend: str = "auto") -> tuple[float, float]:
    if replicates < 2:
        raise ValueError("replicates must be >= 2")
    return weak_stats(collect_samples(model, g, d, grid, noise, replicates, 0, threads, backend))


# --- rates -----------------------------------------------------------------------


def fit_rate(d_list, errors) -> tuple[float, float, float]:
    """OLS of log2(error) on log2(d): (slope, intercept, slope standard error)."""
    d = np.asarray(d_list, dtype=np.float64)
    e = np.asarray(errors, dtype=np.float64)
    if d.shape != e.shape or d.ndim != 1:
        raise ValueError("d_list and errors must be 1-d of equal length")
    if d.size < 3:
        raise ValueError("need at least 3 points to fit a rate")
    if np.any(~(e > 0)):
        raise NonPositiveError(f"errors must be positive to fit a log-log rate, got {e.tolist()}")
    lx = np.log2(d)
    ly = np.log2(e)
    xm = lx.mean()
    sxx = float(np.sum((lx - xm) ** 2))
    slope = float(np.sum((lx - xm) * (ly - ly.mean())) / sxx)
    intercept = float(ly.mean() - slope * xm)
    resid = ly - (intercept + slope * lx)
    stderr = math.sqrt(float(np.sum(resid ** 2)) / (d.size - 2) / sxx)
    return slope, intercept, stderr


@dataclass(frozen=True)
class RateEstimate:
    d_list: tuple
    errors: tuple
    ci_halfwidths: tuple
    slope: float
    intercept: float
    slope_stderr: float
    n_replicates: tuple = ()

    def __post_init__(self):
        if not len(self.d_list) == len(self.errors) == len(self.ci_halfwidths):
            raise ValueError("d_list, errors and ci_halfwidths must have equal length")
        if any(b <= a for a, b in zip(self.d_list, self.d_list[1:])):
            raise ValueError("d_list must be strictly increasing")

    @classmethod
    def from_points(cls, d_list, errors, cis, n_replicates=()) -> "RateEstimate":
        slope, intercept, stderr = fit_rate(d_list, errors)
        return cls(tuple(int(v) for v in d_list), tuple(float(v) for v in errors),
                   tuple(float(v) for v in cis), slope, intercept, stderr,
                   tuple(int(v) for v in n_replicates))

    def fit_dict(self, seed: int) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "stderr": self.slope_stderr,
            "d_list": list(self.d_list),
            "n_replicates": list(self.n_replicates),
            "seed": seed,
        }


@dataclass
class RateStudy:
    """Per-d rows of a rate study; the fits are filled in by ``rate_study``."""

    d_list: list = field(default_factory=list)
    strong: list = field(default_factory=list)  # (estimate, ci)
    weak: list = field(default_factory=list)
    n_replicates: list = field(default_factory=list)
    samples: dict = field(default_factory=dict)  # d -> list[ErrorSample]

    def strong_rate(self) -> RateEstimate:
        return RateEstimate.from_points(self.d_list, [e for e, _ in self.strong],
                                        [c for _, c in self.strong], self.n_replicates)

    def weak_rate(self) -> RateEstimate:
        return RateEstimate.from_points(self.d_list, [e for e, _ in self.weak],
                                        [c for _, c in self.weak], self.n_replicates)


def stream_for(noise: NoisePlan, d: int) -> NoisePlan:
    """Independent noise per particle count, so the points of a rate plot are uncorrelated."""
    return noise.derive((noise.stream << 32) | int(d))


def _check_d_list(d_list) -> list[int]:
    d_list = [int(v) for v in d_list]
    if not d_list:
        raise ValueError("d_list is empty")
    if any(b <= a for a, b in zip(d_list, d_list[1:])):
        raise ValueError("d_list must be ascending")
    if any(v < 1 for v in d_list):
        raise ValueError("d_list entries must be >= 1")
    return d_list


def collect_study(model: ModelSpec, g: Optional[Observable], d_list, grid: SimGrid, noise: NoisePlan,
                  replicates: int = 256, weak_replicates: int = 0, weak_rel_ci: float = 0.15,
                  weak_max: int = 0, threads: int = 1, backend: str = "auto", norm: str = "rms",
                  progress: Optional[Callable[[str], None]] = None) -> RateStudy:
    """Coupled samples for every d, then per-d strong/weak estimates.

    At least ``max(replicates, weak_replicates)`` replicates are run.  When
    ``weak_max`` exceeds that, the replicate count doubles (capped at
    ``weak_max``) until the weak CI half-width drops below ``weak_rel_ci``
    times the estimate.  Extra replicates extend the same id sequence, so
    the result is a deterministic function of the arguments.
    """
    d_list = _check_d_list(d_list)
    if replicates < 2:
        raise ValueError("replicates must be >= 2")
    study = RateStudy()
    for d in d_list:
        nz = stream_for(noise, d)
        n = max(replicates, weak_replicates)
        samples = collect_samples(model, g, d, grid, nz, n, 0, threads, backend)
        while g is not None and len(samples) < weak_max:
            est, ci = weak_stats(samples)
            if est > 0 and ci < weak_rel_ci * est:
                break
            extra = min(len(samples), weak_max - len(samples))
            samples += collect_samples(model, g, d, grid, nz, extra, len(samples), threads, backend)
        study.d_list.append(d)
        study.strong.append(strong_stats(samples, norm))
        study.weak.append(weak_stats(samples) if g is not None else (math.nan, math.nan))
        study.n_replicates.append(len(samples))
        study.samples[d] = samples
        if progress is not None:
            s, w = study.strong[-1], study.weak[-1]
            progress(f"d={d} n={len(samples)} strong={s[0]:.6g}+-{s[1]:.2g} weak={w[0]:.6g}+-{w[1]:.2g}")
    return study


def rate_study(model: ModelSpec, g: Observable, d_list, grid: SimGrid, noise: NoisePlan,
               replicates: int = 256, **kw) -> tuple[RateEstimate, RateEstimate]:
    """Strong and weak rate estimates over ``d_list``; raises NonPositiveError on zero errors."""
    study = collect_study(model, g, d_list, grid, noise, replicates, **kw)
    return study.strong_rate(), study.weak_rate()


# --- moments and histograms ---------------------------------------------------------


def moment_estimate(model: ModelSpec, d: int, grid: Optional[SimGrid], noise: NoisePlan, replicates: int,
                    p: int, threads: int = 1, backend: str = "auto") -> tuple[float, float]:
    """E|X^d|^(2p) at t_end (at t = 0 when grid is None), averaged over particles and replicates."""
    if int(p) != p or p < 1 or 2 * p > 8:
        raise ValueError("p must be a positive integer with 2p <= 8")
    if replicates < 1:
        raise ValueError("replicates must be >= 1")

    def one(r):
        if grid is None:
            x = init_particles(model, d, noise, r).x
        else:
            x = simulate(model, d, grid, noise, r, backend).x
        return float(np.mean(np.abs(x) ** (2 * p)))

    return _mean_ci(np.array(map_replicates(one, range(replicates), threads)))


@dataclass(frozen=True, eq=False)
class Histogram:
    edges: np.ndarray
    mass: np.ndarray
    n_samples: int = 0
    n_outside: int = 0

    def __post_init__(self):
        if self.edges.size != self.mass.size + 1:
            raise ValueError("len(mass) must equal len(edges) - 1")

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def mode_center(self) -> float:
        return float(self.centers[int(np.argmax(self.mass))])

    def n_modes(self, n_sigma: float = 3.0) -> int:
        return count_modes(self.mass * (self.n_samples - self.n_outside), n_sigma)


def count_modes(counts, n_sigma: float = 3.0) -> int:
    """Local maxima separated by dips deeper than n_sigma Poisson standard deviations.

    Hysteresis keeps sampling noise in a smooth unimodal histogram from
    registering as extra peaks.
    """
    counts = np.asarray(counts, dtype=np.float64)

    def thr(v):
        return n_sigma * math.sqrt(max(v, 1.0))

    modes = 0
    rising = True
    extreme = counts[0] if counts.size else 0.0
    for c in counts[1:]:
        if rising:
            if c > extreme:
                extreme = c
            elif extreme - c > thr(extreme):
                modes += 1
                rising = False
                extreme = c
        else:
            if c < extreme:
                extreme = c
            elif c - extreme > thr(c):
                rising = True
                extreme = c
    if rising and extreme > thr(0.0):
        modes += 1
    return modes


def build_histogram(samples, n_bins: int = 99, range: Optional[tuple] = None) -> Histogram:
    """Equal-width bins, last bin right-closed.  Samples outside ``range`` are dropped
    and counted in ``n_outside``; masses are fractions of the samples kept."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise EmptyInput("no samples")
    if int(n_bins) != n_bins or n_bins < 1:
        raise ValueError("n_bins must be a positive integer")
    if range is not None and not range[1] > range[0]:
        raise ValueError("histogram range must have hi > lo")
    counts, edges = np.histogram(x, bins=int(n_bins), range=range)
    kept = int(counts.sum())
    if kept == 0:
        raise EmptyInput("no samples inside the histogram range")
    return Histogram(edges, counts / kept, int(x.size), int(x.size - kept))


# --- writers ---------------------------------------------------------------------------


def write_rates_csv(path, study: RateStudy) -> None:
    with open(path, "w") as fh:
        fh.write("d,strong_err,strong_ci,weak_err,weak_ci\n")
        for d, (s, sc), (w, wc) in zip(study.d_list, study.strong, study.weak):
            fh.write(",".join([str(d)] + [repr(float(v)) for v in (s, sc, w, wc)]) + "\n")


def write_fit_json(path, fits: dict) -> None:
    with open(path, "w") as fh:
        json.dump(fits, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_histogram_csv(path, hist: Histogram) -> None:
    with open(path, "w") as fh:
        fh.write("bin_left,bin_right,mass\n")
        for lo, hi, m in zip(hist.edges[:-1], hist.edges[1:], hist.mass):
            fh.write(f"{float(lo)!r},{float(hi)!r},{float(m)!r}\n")
