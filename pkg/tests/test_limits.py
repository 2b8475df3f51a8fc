import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slfv_lab.environment import SmoothNoise, sample_environment
from slfv_lab.hamiltonian import Hamiltonian, dense_spectrum
from slfv_lab.limits import (
    DEFECT_TOL,
    McCheck,
    dual_solve,
    fkpp_distance,
    fkpp_ensemble,
    fkpp_solve,
    generator_diffusivity,
    laplace_duality_check,
    sbm_first_moment_check,
    stability_number,
    variance_comparison,
)
from slfv_lab.torus import Field, TorusGrid, bump, nu0, theta_n


@pytest.fixture(scope="module")
def zero_spec():
    grid = TorusGrid(1, 8)
    return dense_spectrum(Hamiltonian(grid, np.zeros(grid.shape)))


@pytest.fixture(scope="module")
def env_spec():
    grid = TorusGrid(1, 8)
    env = sample_environment(grid, seed=3)
    H = Hamiltonian.from_environment(env)
    return env, H, dense_spectrum(H)


def bump_phi(grid):
    x = grid.points[0]
    return Field(grid, 0.5 * bump(np.minimum(np.abs(x - 0.5), 1) / 0.3))


# ---------------------------------------------------------------- dual equation


def test_dual_zero_phi(zero_spec):
    sol = dual_solve(zero_spec, zero_spec.grid.zeros(), 0.5, 0.01, rank=64)
    assert np.abs(sol.coefficients).max() == 0


def test_dual_riccati_closed_form(zero_spec):
    c, T = 2.0, 1.0
    sol = dual_solve(zero_spec, zero_spec.grid.constant(c), T, 0.01, rank=64)
    exact = c / (1 + c * sol.times / 2)
    assert np.abs(sol.mean() - exact).max() < 1e-4
    assert np.abs(sol.at(0.5).values - c / (1 + c / 4)).max() < 1e-4


def test_dual_step_halving_is_second_order(env_spec):
    _, _, spec = env_spec
    phi = bump_phi(spec.grid)
    defects = [dual_solve(spec, phi, 0.5, dt, rank=64).defect.max() for dt in (0.02, 0.01, 0.005)]
    for a, b in zip(defects, defects[1:]):
        assert 3.5 < a / b < 4.5


def test_dual_defect_within_tolerance(env_spec):
    _, _, spec = env_spec
    sol = dual_solve(spec, bump_phi(spec.grid), 0.5, 0.005, rank=64)
    assert sol.ok and sol.defect.max() <= 10 * DEFECT_TOL
    assert sol.projection_error < 1e-10  # full-rank basis


def test_dual_preconditions(env_spec):
    _, _, spec = env_spec
    grid = spec.grid
    with pytest.raises(ValueError):
        dual_solve(spec, grid.constant(-1.0), 0.1, 0.01, rank=8)
    with pytest.raises(ValueError):
        dual_solve(spec, grid.constant(1.0), 0.1, 0.01, rank=65)
    with pytest.raises(ValueError):
        dual_solve(spec, grid.constant(1.0), 0.105, 0.01, rank=8)


def test_duality_time_derivative(env_spec):
    # d/dt exp(-<Y0, U_t phi>) at 0 equals -<Y0, H phi - phi^2 / 2> exp(-<Y0, phi>), Y0 = Lebesgue
    _, H, spec = env_spec
    phi = bump_phi(spec.grid)
    dt = 1e-4
    sol = dual_solve(spec, phi, 2 * dt, dt, rank=64)
    lhs = np.exp(-sol.mean())
    fd = (-3 * lhs[0] + 4 * lhs[1] - lhs[2]) / (2 * dt)
    rhs = -np.mean(H(phi).values - 0.5 * phi.values**2) * math.exp(-phi.mean())
    assert fd == pytest.approx(rhs, rel=1e-5, abs=1e-8)


# ---------------------------------------------------------------- Monte Carlo reports


def test_mccheck_degenerate_and_z():
    c = McCheck(np.array([0.0, 1.0]), np.array([1.0, 1.2]), np.array([0.0, 0.1]), np.array([1.0, 1.0]))
    assert c.z[0] == 0 and c.z[1] == pytest.approx(2.0)
    assert c.passed
    bad = McCheck(np.array([0.0]), np.array([1.1]), np.array([0.0]), np.array([1.0]))
    assert not bad.passed


def test_laplace_check_trivial_cases(env_spec):
    env, _, spec = env_spec
    grid = spec.grid
    phi = bump_phi(grid)
    sol = dual_solve(spec, phi, 0.1, 0.01, rank=64)
    obs = np.full((50, 1), phi.mean())  # <Y0, phi> with Y0 = Lebesgue
    chk = laplace_duality_check(obs, [0.0], sol)
    assert chk.z[0] == 0 and chk.estimate[0] == pytest.approx(math.exp(-phi.mean()), rel=1e-12)
    zero = dual_solve(spec, grid.zeros(), 0.1, 0.01, rank=64)
    chk0 = laplace_duality_check(np.zeros((10, 2)), [0.0, 0.1], zero)
    assert np.all(chk0.reference == 1) and np.all(chk0.estimate == 1)
    with pytest.raises(ValueError):
        laplace_duality_check(obs, [0.0], sol, env_digest=env.digest, dual_digest="0" * 16)


def test_first_moment_trivial_cases():
    obs = np.full((20, 2), 0.7)
    chk = sbm_first_moment_check(obs, [0.0, 0.5], 0.0, 0.7)
    assert chk.passed and np.all(chk.z == 0)


def test_variance_comparison_identical_samples():
    a = np.random.default_rng(0).standard_normal(500)
    va, vb, z, se = variance_comparison(a, a.copy())
    assert va == vb and z == 0 and se > 0


# ---------------------------------------------------------------- Fisher-KPP


def test_generator_diffusivity_is_theta_limit():
    for d in (1, 2):
        k = np.array([1.0]) if d == 1 else np.array([[1.0, 0.0]])
        ratio = theta_n(k, 4096, d) / (-((2 * math.pi) ** 2))
        assert ratio[0] == pytest.approx(generator_diffusivity(d), rel=1e-6)
        assert generator_diffusivity(d) == nu0(d) / 2


@pytest.mark.parametrize("c", [0.0, 1.0])
def test_kpp_absorbing_constants(c):
    grid = TorusGrid(2, 4)
    run = fkpp_solve(grid.constant(c), 0.01, 2e-4, SmoothNoise.default(2))
    assert np.all(run.states[-1] == c)


def test_kpp_heat_flow_matches_spectral_oracle():
    grid = TorusGrid(2, 8)
    X0 = Field(grid, 0.5 + 0.2 * np.cos(2 * np.pi * grid.points[0]) * np.sin(4 * np.pi * grid.points[1]))
    T = 0.01
    k2 = np.sum(grid.freqs.astype(float) ** 2, axis=0)
    for D in (None, generator_diffusivity(2)):
        Dv = nu0(2) if D is None else D
        exact = np.fft.ifftn(np.fft.fftn(X0.values) * np.exp(-Dv * 4 * math.pi**2 * k2 * T)).real
        errs = []
        for dt in (5e-5, 2.5e-5):
            run = fkpp_solve(X0, T, dt, None, diffusivity=D)
            errs.append(np.abs(run.states[-1] - exact).max())
        assert errs[1] < 1e-4
        assert 1.7 < errs[0] / errs[1] < 2.3  # first order in dt


def test_kpp_logistic_oracle():
    grid = TorusGrid(2, 8)
    beta, x0, T = 0.8, 0.2, 1.0
    run = fkpp_solve(grid.constant(x0), T, 1e-3, grid.constant(beta), check_stability=False)
    exact = x0 * math.exp(beta * T) / (1 - x0 + x0 * math.exp(beta * T))
    assert np.abs(run.states[-1] - exact).max() < 1e-4


def test_kpp_stability_guard():
    grid = TorusGrid(2, 8)
    assert stability_number(2, 64, 1e-3) > 1
    with pytest.raises(ValueError):
        fkpp_solve(grid.constant(0.5), 0.01, 1e-3)
    with pytest.raises(ValueError):
        fkpp_solve(grid.constant(0.5), 0.01, 1e-3, diffusivity=-1.0, check_stability=False)
    with pytest.raises(ValueError):
        fkpp_solve(grid.constant(1.5), 0.01, 5e-5)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.3))
def test_kpp_comparison_principle(seed, lift):
    grid = TorusGrid(2, 4)
    g = np.random.default_rng(seed)
    a = g.random(grid.shape) * 0.7
    b = np.clip(a + lift + 0.3 * g.random(grid.shape), 0, 1)
    ra = fkpp_solve(Field(grid, a), 0.02, 2e-4, SmoothNoise.default(2))
    rb = fkpp_solve(Field(grid, b), 0.02, 2e-4, SmoothNoise.default(2))
    assert np.all(ra.states[-1] <= rb.states[-1] + 1e-12)


def test_kpp_stochastic_d1_and_ensemble_agree():
    grid = TorusGrid(1, 8)
    X0 = grid.constant(0.5)
    T, dt = 0.01, 5e-5
    noise = SmoothNoise.default(1)
    runs = [fkpp_solve(X0, T, dt, noise, seed=5, replica=r) for r in range(3)]
    assert all(0 <= r.states.min() and r.states.max() <= 1 and r.clip_mass >= 0 for r in runs)
    assert not np.array_equal(runs[0].states[-1], runs[1].states[-1])
    obs, clips = fkpp_ensemble(X0, T, dt, 3, 5, [grid.constant(1.0)], noise, batch=2)
    for r in range(3):
        assert obs[r, -1, 0] == pytest.approx(runs[r].states[-1].mean(), abs=1e-14)
    with pytest.raises(ValueError):
        fkpp_solve(X0, T, dt, noise)  # stochastic run without a seed


def test_fkpp_distance_degenerate():
    fine = TorusGrid(2, 16)
    coarse = TorusGrid(2, 8)
    run = fkpp_solve(fine.constant(0.4), 0.01, 1e-5)
    d = fkpp_distance(np.full((3,) + coarse.shape, 0.4), coarse, run)
    assert np.all(d < 1e-14)
