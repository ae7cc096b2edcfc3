import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvsim import _compiled
from mvsim.engine import (
    NonFinite,
    ParticleState,
    SimGrid,
    em_step,
    integrate,
    mean_field,
    mean_field_all,
    simulate,
    simulate_coupled,
    system_inputs,
    write_terminal_csv,
    write_trajectory_csv,
)
from mvsim.model import ModelSpec, affine, bump_kernel, constant, gauss_kernel, point_law, registry_get, zero_kernel
from mvsim.rng import NoisePlan

PAPER = registry_get("paper-example")


def _const_model(a, s):
    return ModelSpec("const", constant(a), constant(s), zero_kernel(), zero_kernel())


def test_mean_field_examples():
    k1 = PAPER.kernel1
    assert mean_field(k1, 0, np.full(5, 0.3)) == 1.0
    assert mean_field(k1, 0, np.array([0.0, 0.05])) == pytest.approx(0.875)
    assert mean_field(k1, 0, np.array([0.0, 0.5])) == 0.5
    with pytest.raises(IndexError):
        mean_field(k1, 2, np.array([0.0, 0.5]))


def test_em_step_examples():
    s = em_step(_const_model(1.0, 0.0), ParticleState(0.0, np.zeros(2)), 1 / 64, np.zeros(2))
    np.testing.assert_array_equal(s.x, [1 / 64, 1 / 64])
    assert s.t == 1 / 64
    s = em_step(_const_model(0.0, 1.0), ParticleState(0.0, np.zeros(2)), 0.25, np.array([2.0, -2.0]))
    np.testing.assert_array_equal(s.x, [1.0, -1.0])
    h = 0.01
    s = em_step(PAPER, ParticleState(0.0, np.full(4, 0.2)), h, np.zeros(4))
    np.testing.assert_allclose(s.x, 0.2 + h, rtol=0, atol=1e-15)


def test_em_step_nonfinite():
    with pytest.raises(NonFinite):
        em_step(_const_model(math.inf, 0.0), ParticleState(0.0, np.zeros(2)), 0.1, np.zeros(2))


def test_explicit_euler_growth():
    m = registry_get("decoupled-linear", lam=1.0, s=0.0).with_initial(point_law(1.0))
    for backend in ("numpy", "compiled"):
        st_ = simulate(m, 1, SimGrid(1.0, 64), NoisePlan(0), backend=backend)
        assert st_.x[0] == pytest.approx((1 + 1 / 64) ** 64, rel=1e-14)
        assert st_.t == 1.0


def test_grid_invariants():
    g = SimGrid(1.0, 64)
    assert g.dt * g.n_steps == g.t_end
    assert g.times()[-1] == 1.0
    with pytest.raises(ValueError):
        SimGrid(0.0, 4)
    with pytest.raises(ValueError):
        SimGrid(1.0, 0)


def test_init_prefix_and_range():
    nz = NoisePlan(3)
    a = simulate(PAPER, 3, SimGrid(1.0, 1), nz).x
    b = simulate(PAPER, 3, SimGrid(1.0, 1), nz).x
    np.testing.assert_array_equal(a, b)
    x3, _ = system_inputs(PAPER, 3, SimGrid(), nz, 0)
    x5, _ = system_inputs(PAPER, 5, SimGrid(), nz, 0)
    np.testing.assert_array_equal(x3, x5[:3])
    assert np.all(np.abs(x5) <= 1)


@pytest.mark.parametrize("backend", ["numpy", "compiled"])
def test_decoupled_oracle_bitwise(backend):
    lam, s = 0.7, 0.3
    m = registry_get("decoupled-linear", lam=lam, s=s)
    grid = SimGrid(1.0, 32)
    nz = NoisePlan(9)
    x0, gauss = system_inputs(m, 5, grid, nz, 2)
    out = simulate(m, 5, grid, nz, 2, backend).x
    dt, sq = grid.dt, math.sqrt(grid.dt)
    for i in range(5):
        x = x0[i]
        for k in range(grid.n_steps):
            x = x + (lam * x) * dt + s * sq * gauss[k, i]
        assert out[i] == x
    # five d=1 runs driven by the same coordinates
    for i in range(5):
        alone = integrate(m, x0[i:i + 1], gauss[:, i:i + 1], grid, backend).x[0]
        assert alone == out[i]


def test_backends_agree():
    grid = SimGrid(1.0, 64)
    for model in (PAPER, registry_get("smooth-gauss")):
        x0, gauss = system_inputs(model, 64, grid, NoisePlan(1), 0)
        a = integrate(model, x0, gauss, grid, "numpy").x
        b = integrate(model, x0, gauss, grid, "compiled").x
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


@pytest.mark.parametrize("r", [0, 1, 2, 3])
def test_compiled_bump_matches_reference(r):
    rng = np.random.default_rng(r)
    x = np.concatenate([rng.normal(0.2, 0.15, 300), [0.1, 0.1, 0.2, 0.3]])  # include exact edge gaps
    k = bump_kernel(r, 10.0)
    kind, p = _compiled.encode_kernel(k.form)
    np.testing.assert_allclose(_compiled.mean_field_all(x, kind, p), mean_field_all(k, x), rtol=0, atol=1e-12)


def test_compiled_gauss_affine_match_reference():
    x = np.random.default_rng(0).normal(size=200)
    for k in (gauss_kernel(6.25), affine(0.1, 0.5, -0.3)):
        kind, p = _compiled.encode_kernel(k.form)
        np.testing.assert_allclose(_compiled.mean_field_all(x, kind, p), mean_field_all(k, x), rtol=0, atol=1e-12)


def test_callable_model_uses_numpy():
    from dataclasses import replace

    m = replace(PAPER, drift=replace(PAPER.drift, form=None))
    assert m.compiled_form is None
    with pytest.raises(ValueError):
        simulate(m, 4, SimGrid(1.0, 4), NoisePlan(0), backend="compiled")
    assert simulate(m, 4, SimGrid(1.0, 4), NoisePlan(0)).x.shape == (4,)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 8).flatmap(lambda d: st.permutations(list(range(d)))), st.integers(0, 1000),
       st.sampled_from(["numpy", "compiled"]), st.sampled_from(["paper-example", "smooth-gauss"]))
def test_exchangeability_bitwise(perm, seed, backend, name):
    model = registry_get(name)
    perm = np.array(perm)
    d = perm.size
    grid = SimGrid(1.0, 16)
    x0, gauss = system_inputs(model, d, grid, NoisePlan(seed), 0)
    base = integrate(model, x0, gauss, grid, backend).x
    permuted = integrate(model, x0[perm], gauss[:, perm], grid, backend).x
    np.testing.assert_array_equal(base[perm], permuted)


def test_coupled_prefix_streams():
    grid = SimGrid(1.0, 8)
    nz = NoisePlan(4)
    x_small, g_small = system_inputs(PAPER, 6, grid, nz, 3)
    x_big, g_big = system_inputs(PAPER, 12, grid, nz, 3)
    np.testing.assert_array_equal(x_small, x_big[:6])
    np.testing.assert_array_equal(g_small, g_big[:, :6])
    pair = simulate_coupled(PAPER, 6, grid, nz, 3)
    assert pair.shared_prefix == 6
    np.testing.assert_array_equal(pair.small.x, simulate(PAPER, 6, grid, nz, 3).x)
    np.testing.assert_array_equal(pair.big.x, simulate(PAPER, 12, grid, nz, 3).x)


def test_coupled_decoupled_identical():
    m = registry_get("decoupled-linear")
    pair = simulate_coupled(m, 8, SimGrid(), NoisePlan(0), 1)
    np.testing.assert_array_equal(pair.small.x, pair.big.x[:8])


def test_coupled_gap_small():
    pair = simulate_coupled(PAPER, 16, SimGrid(), NoisePlan(0), 0)
    gap = pair.big.x[:16] - pair.small.x
    assert np.any(gap != 0)
    assert np.sqrt(np.mean(gap ** 2)) < 0.1


@pytest.mark.parametrize("d", [16, 256, 2048])
@pytest.mark.parametrize("n_steps", [32, 64])
def test_no_blowup(d, n_steps):
    reps = 100 if d <= 256 else 10
    worst = max(np.max(np.abs(simulate(PAPER, d, SimGrid(1.0, n_steps), NoisePlan(2), r).x)) for r in range(reps))
    assert worst < 10


def test_csv_dumps(tmp_path):
    grid = SimGrid(1.0, 2)
    st_ = simulate(PAPER, 3, grid, NoisePlan(0), record=True)
    write_terminal_csv(tmp_path / "t.csv", st_)
    write_trajectory_csv(tmp_path / "p.csv", st_, grid)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "particle,x" and len(lines) == 4
    assert float(lines[1].split(",")[1]) == st_.x[0]
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "t,particle,x" and len(lines) == 1 + 3 * 3
    assert lines[-1].startswith("1.0,2,")
    with pytest.raises(ValueError):
        write_trajectory_csv(tmp_path / "q.csv", simulate(PAPER, 3, grid, NoisePlan(0)), grid)
