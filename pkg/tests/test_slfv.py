import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slfv_lab import rng
from slfv_lab.environment import environment_from_boxes, expand_boxes, sample_environment
from slfv_lab.slfv import (
    UNIFORMS_PER_EVENT,
    SLFVState,
    ScalingRegime,
    _chunk_size,
    constant_field_qv,
    double_ball_kernel,
    drift_rate,
    event_rate,
    parent_stencil,
    qv_rate,
    simulate,
    simulate_replicas,
    step_event,
)
from slfv_lab.torus import Field, TorusGrid, bump, pi_n


def zero_env(grid):
    return environment_from_boxes(grid, np.zeros((grid.n,) * grid.d))


def test_regime_preconditions():
    with pytest.raises(ValueError):
        ScalingRegime.sparse(1, 8, 1.5)
    with pytest.raises(ValueError):
        ScalingRegime.diffusive(1, 8, 0.5)
    with pytest.raises(ValueError):
        ScalingRegime.diffusive(2, 8, 0.0)
    r = ScalingRegime.sparse(1, 8, 2.0)
    assert r.eta == 3.0 and r.time_factor == 8.0**6 == 262144
    assert r.impact == 8.0**-3 and r.mass_scale == 64.0


def test_event_rates():
    grid = TorusGrid(1, 8)
    reg = ScalingRegime.sparse(1, 8, 2.0)
    total, neu, sel = event_rate(zero_env(grid), reg)
    assert total == 262144 and np.all(sel == 0)
    env = sample_environment(grid, seed=3)
    total, neu, sel = event_rate(env, reg)
    assert np.allclose(neu + sel, total / 8, rtol=0, atol=1e-9)
    assert np.all(sel > 0)
    reg2 = ScalingRegime.diffusive(2, 8, 0.5)
    assert event_rate(zero_env(TorusGrid(2, 8)), reg2)[0] == pytest.approx(8.0 ** (2 + 2 + 0.5))


@pytest.mark.parametrize("d", [1, 2])
def test_parent_kernel_normalized(d):
    n = 8
    # the density of chi_n * chi_n integrates to one
    if d == 1:
        r = np.linspace(-1 / n, 1 / n, 200001)
        mass = np.trapezoid(double_ball_kernel(r, n, 1), r)
    else:
        r = np.linspace(0, 2 / (math.sqrt(math.pi) * n), 200001)
        mass = np.trapezoid(2 * math.pi * r * double_ball_kernel(r, n, 2), r)
    assert mass == pytest.approx(1.0, rel=1e-6)
    offs, w = parent_stencil(TorusGrid(d, n))
    assert w.sum() == pytest.approx(1.0) and np.all(w > 0)


def _forced(d, kind_u, types):
    U = np.full(UNIFORMS_PER_EVENT, 0.3)
    U[3] = kind_u
    U[8], U[9] = types
    return U


@pytest.mark.parametrize("d", [1, 2])
@pytest.mark.parametrize("c", [0.0, 1.0])
def test_absorbing_states(d, c):
    grid = TorusGrid(d, 8)
    env = environment_from_boxes(grid, np.full((8,) * d, 0.5))
    reg = ScalingRegime.diffusive(d, 8, 1.0)
    st_ = SLFVState.from_field(grid.constant(c))
    g = np.random.default_rng(0)
    for _ in range(200):
        st_, rec = step_event(st_, env, reg, generator=g)
        assert rec.offspring == ("a" if c == 1 else "A")
    assert np.all(st_.X == c)
    # selective events are exercised too
    for kind_u in (0.1, 0.9):
        st2, rec = step_event(SLFVState.from_field(grid.constant(c)), env, reg, _forced(d, kind_u, (0.5, 0.5)))
        assert np.all(st2.X == c)


def test_neutral_event_on_constant_field():
    grid = TorusGrid(1, 8)
    reg = ScalingRegime.diffusive(1, 8, 1.0)
    c, u = 0.3, reg.impact
    g = np.random.default_rng(1)
    hits = []
    for _ in range(4000):
        st_, rec = step_event(SLFVState.from_field(grid.constant(c)), zero_env(grid), reg, generator=g)
        assert rec.kind == "neutral"
        vals = np.unique(st_.X)
        new = [v for v in vals if not np.isclose(v, c)]
        assert len(new) == 1
        assert new[0] in (pytest.approx((1 - u) * c), pytest.approx((1 - u) * c + u))
        hits.append(new[0] > c)
    p = np.mean(hits)
    assert abs(p - c) < 3 * math.sqrt(c * (1 - c) / len(hits))


@pytest.mark.parametrize("d", [1, 2])
def test_compiled_kernel_matches_reference(d):
    # replay the uniforms drawn by simulate through the reference step_event
    grid = TorusGrid(d, 8)
    env = sample_environment(grid, seed=2, c_n=2.5 if d == 2 else None)
    reg = ScalingRegime.diffusive(d, 8, 1.0) if d == 1 else ScalingRegime.diffusive(2, 8, 0.5)
    x = grid.points
    X0 = Field(grid, 0.5 + 0.4 * np.cos(2 * np.pi * x[0]))
    env_ok = environment_from_boxes(grid, np.clip(env.s_boxes * 0.5, -0.9, 0.9))
    events = 300
    path = simulate(env_ok, reg, X0, 1.0, [1.0], seed=9, replica=4, max_events=events, log_events=events)
    g = rng.stream(9, rng.SLFV, 4)
    U = g.random((_chunk_size(reg.time_factor, 1.0), UNIFORMS_PER_EVENT))
    st_ = SLFVState.from_field(X0)
    for e in range(events):
        st_, rec = step_event(st_, env_ok, reg, U[e])
        assert rec.offspring == ("a" if path.event_log[e, 10] == 1 else "A")
    assert np.array_equal(st_.X, path.final)
    assert path.truncated and path.events == events


def test_zero_horizon_path():
    grid = TorusGrid(1, 8)
    reg = ScalingRegime.sparse(1, 8, 2.0)
    X0 = reg.initial_state(grid)
    path = simulate(zero_env(grid), reg, X0, 0.0, [0.0], [grid.constant(1.0)], seed=1)
    assert path.events == 0
    assert path.observables[0, 0] == pytest.approx(X0.mean())
    assert path.scaled[0, 0] == pytest.approx(1.0)


def test_simulate_preconditions():
    grid = TorusGrid(1, 8)
    reg = ScalingRegime.sparse(1, 8, 2.0)
    with pytest.raises(ValueError):
        simulate(zero_env(grid), reg, grid.constant(1.5), 0.1, [0.1])
    with pytest.raises(ValueError):
        simulate(zero_env(grid), reg, grid.constant(0.5), 0.1, [0.2])
    with pytest.raises(ValueError):
        simulate(zero_env(TorusGrid(1, 16)), reg, grid.constant(0.5), 0.1, [0.1])
    with pytest.raises(ValueError):
        simulate_replicas(zero_env(grid), reg, grid.constant(0.5), 0.1, [0.1], [], 0)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_state_stays_in_unit_interval_and_jumps_bounded(seed):
    grid = TorusGrid(1, 8)
    env = sample_environment(grid, seed=seed)
    reg = ScalingRegime.sparse(1, 8, 2.0)
    phi = pi_n(Field(grid, bump(np.minimum(grid.points[0], 1 - grid.points[0]) / 0.4)))
    X0 = Field(grid, np.random.default_rng(seed).random(grid.shape))
    path = simulate(env, reg, X0, 0.002, [0.001, 0.002], [phi, grid.constant(1.0)], seed=seed)
    assert 0 <= path.final.min() and path.final.max() <= 1
    # one event changes <X, phi> by at most u n^{-d} ||phi||_inf, up to the grid count of the ball
    slack = (2 * grid.m // 2 + 1) / grid.m
    bound = reg.impact * grid.n**-1 * np.array([np.abs(phi.values).max(), 1.0]) * slack
    assert np.all(path.jump_max <= bound * (1 + 1e-12))


def test_replicas_are_reproducible():
    grid = TorusGrid(1, 8)
    reg = ScalingRegime.sparse(1, 8, 2.0)
    env = sample_environment(grid, seed=1)
    args = (env, reg, reg.initial_state(grid), 0.01, [0.005, 0.01], [grid.constant(1.0)], 5)
    a = simulate_replicas(*args, seed=3)
    b = simulate_replicas(*args, seed=3)
    assert np.array_equal(a.observables, b.observables)
    assert a.env_digest == env.digest


def test_one_event_generator():
    # E[change of <X, phi>] and E[change^2] over one event equal drift and QV rates / time factor
    grid = TorusGrid(1, 8)
    boxes = 0.6 * np.where(np.arange(8) % 3 == 0, -1.0, 1.0)
    env = environment_from_boxes(grid, boxes)
    reg = ScalingRegime.diffusive(1, 8, 1.0)
    x = grid.points[0]
    X0 = 0.5 + 0.35 * np.sin(2 * np.pi * x) * np.cos(6 * np.pi * x)
    phi = 1.0 + 0.5 * np.cos(2 * np.pi * x)
    s = expand_boxes(grid, env.selection(reg.selection_multiplier))
    drift = drift_rate(X0, phi, s, grid, reg) / reg.time_factor
    qv = qv_rate(X0, phi, s, grid, reg) / reg.time_factor
    g = np.random.default_rng(2024)
    reps = 20_000
    dF = np.empty(reps)
    for i in range(reps):
        st_, _ = step_event(SLFVState(X0.copy()), env, reg, generator=g)
        dF[i] = np.mean((st_.X - X0) * phi)
    se_m = dF.std(ddof=1) / math.sqrt(reps)
    se_q = (dF**2).std(ddof=1) / math.sqrt(reps)
    assert abs(dF.mean() - drift) < 3 * se_m
    assert abs(np.mean(dF**2) - qv) < 3 * se_q


def test_neutral_martingale_and_constant_field_qv():
    grid = TorusGrid(1, 8)
    reg = ScalingRegime.sparse(1, 8, 2.0)
    x0, T = 0.5, 0.005
    ens = simulate_replicas(zero_env(grid), reg, grid.constant(x0), T, [0.0, T], [grid.constant(1.0)], 2000, seed=4)
    v = ens.observables[:, -1, 0]
    assert abs(v.mean() - x0) < 3 * v.std(ddof=1) / math.sqrt(len(v))
    # drift term vanishes identically for phi = 1 and s = 0
    X = np.random.default_rng(0).random(grid.shape)
    assert abs(drift_rate(X, np.ones(grid.shape), np.zeros(grid.shape), grid, reg)) < 1e-9 * reg.time_factor * reg.impact
    var = v.var(ddof=1)
    c = v - v.mean()
    se = math.sqrt((np.mean(c**4) - var**2) / len(v))
    # QV at the frozen initial value overestimates slightly as x(1-x) decays; T is short
    assert abs(var - constant_field_qv(reg, x0, T)) < 3 * se
