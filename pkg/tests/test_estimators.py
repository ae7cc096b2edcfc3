import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvsim.engine import SimGrid
from mvsim.estimators import (
    EmptyInput,
    ErrorSample,
    Histogram,
    NonPositiveError,
    RateEstimate,
    build_histogram,
    collect_samples,
    collect_study,
    count_modes,
    fit_rate,
    moment_estimate,
    rate_study,
    strong_error,
    strong_stats,
    weak_error,
    weak_stats,
    write_fit_json,
    write_histogram_csv,
    write_rates_csv,
)
from mvsim.model import ModelSpec, constant, constant_observable, observable_get, registry_get, zero_kernel
from mvsim.reference import RATE_D, RATE_STRONG, RATE_WEAK
from mvsim.rng import NoisePlan

PAPER = registry_get("paper-example")
GRID = SimGrid(1.0, 64)


@settings(max_examples=50)
@given(st.floats(-2, 0), st.floats(1e-3, 1e3))
def test_fit_rate_exact_power_law(expo, c):
    d = np.array([16, 32, 64, 128, 256])
    slope, intercept, stderr = fit_rate(d, c * d ** expo)
    assert slope == pytest.approx(expo, abs=1e-12)
    assert intercept == pytest.approx(math.log2(c), abs=1e-9)
    assert stderr < 1e-9


def test_fit_rate_reference_curves():
    # oracle: numpy least squares in natural-log space (same slope)
    for errs, near in ((RATE_STRONG, -0.564), (RATE_WEAK, -1.005)):
        want = np.polyfit(np.log(RATE_D), np.log(errs), 1)[0]
        got = fit_rate(RATE_D, errs)[0]
        assert got == pytest.approx(want, abs=1e-12)
        assert got == pytest.approx(near, abs=5e-4)


def test_fit_rate_errors():
    with pytest.raises(NonPositiveError):
        fit_rate([1, 2, 4], [1.0, 0.0, 0.5])
    with pytest.raises(ValueError):
        fit_rate([1, 2], [1.0, 0.5])


def test_strong_zero_for_decoupled():
    m = registry_get("decoupled-linear")
    assert strong_error(m, 8, GRID, NoisePlan(0), 4) == (0.0, 0.0)


def test_weak_constant_observable_zero():
    assert weak_error(PAPER, constant_observable(3.0), 8, GRID, NoisePlan(0), 4) == (0.0, 0.0)


def test_replicates_validated():
    with pytest.raises(ValueError):
        strong_error(PAPER, 8, GRID, NoisePlan(0), 1)


def test_rate_study_decoupled_raises():
    with pytest.raises(NonPositiveError):
        rate_study(registry_get("decoupled-linear"), observable_get("identity"), [2, 4, 8], GRID, NoisePlan(0), 3)


def test_strong_stats_delta_ci():
    samples = [ErrorSample(4, r, v, 0.0, 0.0, math.sqrt(v)) for r, v in enumerate([1.0, 4.0, 9.0, 16.0])]
    est, ci = strong_stats(samples)
    m = 7.5
    se = np.std([1, 4, 9, 16], ddof=1) / 2
    assert est == math.sqrt(m)
    assert ci == pytest.approx(1.959963984540054 * se / (2 * math.sqrt(m)))
    assert strong_stats(samples, "abs")[0] == 2.5
    with pytest.raises(ValueError):
        strong_stats(samples, "l3")


def test_weak_stats_sign():
    samples = [ErrorSample(4, r, 0.0, 0.5, 0.5 - v) for r, v in enumerate([0.1, 0.2, 0.3])]
    est, ci = weak_stats(samples)
    assert est == pytest.approx(0.2)
    assert ci > 0


def test_thread_count_does_not_change_results():
    a = collect_samples(PAPER, observable_get("paper-g"), 16, GRID, NoisePlan(5), 12, threads=1)
    b = collect_samples(PAPER, observable_get("paper-g"), 16, GRID, NoisePlan(5), 12, threads=4)
    assert a == b


def test_weak_bounded_by_strong_for_lipschitz_g():
    g = observable_get("identity")
    samples = collect_samples(PAPER, g, 16, GRID, NoisePlan(8), 200)
    w, wci = weak_stats(samples)
    s, sci = strong_stats(samples)
    assert w <= s + wci + sci


def test_halving_replicates_is_stable():
    g = observable_get("paper-g")
    full = collect_samples(PAPER, g, 16, GRID, NoisePlan(3), 400)
    half = full[:200]
    for stat in (strong_stats, weak_stats):
        e1, c1 = stat(full)
        e2, c2 = stat(half)
        assert abs(e1 - e2) < 4 * max(c1, c2)


def test_strong_decreases_with_d():
    study = collect_study(PAPER, None, [16, 64, 256], GRID, NoisePlan(1), 48)
    errs = [e for e, _ in study.strong]
    cis = [c for _, c in study.strong]
    for k in range(2):
        assert errs[k + 1] < errs[k] + cis[k] + cis[k + 1]
    assert math.isnan(study.weak[0][0])


def test_adaptive_weak_extends_replicates():
    g = observable_get("paper-g")
    study = collect_study(PAPER, g, [8, 16, 32], SimGrid(1.0, 8), NoisePlan(0), 4, weak_replicates=4,
                          weak_rel_ci=1e-9, weak_max=16)
    assert study.n_replicates == [16, 16, 16]
    # extension reuses the first replicates
    again = collect_samples(PAPER, g, 8, SimGrid(1.0, 8), NoisePlan(0).derive(8), 4)
    assert study.samples[8][:4] == again


def test_rate_estimate_invariants():
    with pytest.raises(ValueError):
        RateEstimate((32, 16, 64), (1, 1, 1), (0, 0, 0), 0, 0, 0)
    with pytest.raises(ValueError):
        RateEstimate((16, 32), (1,), (0, 0), 0, 0, 0)


def test_moment_at_start():
    m, ci = moment_estimate(PAPER, 64, None, NoisePlan(0), 200, 1)
    assert abs(m - 1 / 3) < 3 * ci / 1.96


def test_moment_frozen_dynamics():
    m = ModelSpec("frozen", constant(0.0), constant(0.0), zero_kernel(), zero_kernel())
    nz = NoisePlan(4)
    for r in range(3):
        a, _ = moment_estimate(m, 16, GRID, nz.derive(r), 1, 2)
        b, _ = moment_estimate(m, 16, None, nz.derive(r), 1, 2)
        assert a == b


def test_moment_order_checked():
    with pytest.raises(ValueError):
        moment_estimate(PAPER, 4, None, NoisePlan(0), 2, 5)


def test_histogram_examples():
    h = build_histogram([0, 0, 1, 1], 2, (0, 1))
    np.testing.assert_array_equal(h.mass, [0.5, 0.5])
    h = build_histogram([3.0], 1)
    np.testing.assert_array_equal(h.mass, [1.0])
    with pytest.raises(EmptyInput):
        build_histogram([], 3)
    with pytest.raises(EmptyInput):
        build_histogram([5.0], 3, (0, 1))


def test_histogram_drops_outside():
    h = build_histogram([-5, 0.1, 0.2, 0.9], 3, (0, 1))
    assert h.n_outside == 1 and h.n_samples == 4
    assert h.mass.sum() == pytest.approx(1.0, abs=1e-12)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=200), st.integers(1, 120))
def test_histogram_mass_conserved(xs, bins):
    h = build_histogram(xs, bins)
    assert abs(h.mass.sum() - 1.0) <= 1e-12
    assert h.mass.size == h.edges.size - 1


def test_count_modes():
    x = np.linspace(-3, 3, 60)
    one = 1e4 * np.exp(-x ** 2)
    two = 1e4 * (np.exp(-(x - 1.5) ** 2 * 4) + np.exp(-(x + 1.5) ** 2 * 4))
    assert count_modes(one) == 1
    assert count_modes(two) == 2
    noisy = np.random.default_rng(0).poisson(one)
    assert count_modes(noisy) == 1


def test_writers(tmp_path):
    study = collect_study(PAPER, observable_get("paper-g"), [4, 8, 16], SimGrid(1.0, 4), NoisePlan(0), 8)
    write_rates_csv(tmp_path / "r.csv", study)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "d,strong_err,strong_ci,weak_err,weak_ci"
    assert [int(l.split(",")[0]) for l in lines[1:]] == [4, 8, 16]
    fit = study.strong_rate().fit_dict(seed=0)
    write_fit_json(tmp_path / "f.json", fit)
    import json

    assert set(json.loads((tmp_path / "f.json").read_text())) == {"slope", "intercept", "stderr", "d_list",
                                                                 "n_replicates", "seed"}
    write_histogram_csv(tmp_path / "h.csv", build_histogram([0.0, 1.0], 2))
    assert (tmp_path / "h.csv").read_text().splitlines()[0] == "bin_left,bin_right,mass"


def test_histogram_helpers():
    h = Histogram(np.array([0.0, 1.0, 2.0]), np.array([0.25, 0.75]), 4)
    assert h.mode_center() == 1.5
    np.testing.assert_array_equal(h.centers, [0.5, 1.5])
