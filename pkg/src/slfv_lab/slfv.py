"""Event-driven simulation of the spatial Lambda-Fleming-Viot process with random selection.

Events arrive as a Poisson process of rate ``time_factor`` (the two intensities
``(1 - |s|)`` and ``|s|`` add up to one per unit area).  Each event:

* centre ``x`` uniform on the torus; the event is selective with probability
  ``|s(x)|``, with ``s`` constant on the cubes ``Q_n``;
* one (neutral) or two (selective) parental locations uniform in ``B_n(x)``;
  a parent is of type ``a`` with probability ``Pi_n^2 X(y)``, evaluated at the
  grid point nearest to ``y`` with the double-convolution kernel
  ``chi_n * chi_n`` sampled on the grid and normalized;
* offspring type: neutral copies the parent, ``s < 0`` needs both parents ``a``,
  ``s > 0`` needs at least one;
* every grid point in the closed ball ``B_n(x)`` moves to
  ``(1 - u) X + u 1{offspring = a}``.

Each event consumes a fixed block of ``UNIFORMS_PER_EVENT`` uniforms so replays
are deterministic regardless of the branch taken.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from . import rng
from .environment import Environment, expand_boxes
from .torus import Field, TorusGrid, chi_symbol, multiply_array

log = logging.getLogger(__name__)

__all__ = [
    "ScalingRegime",
    "SLFVState",
    "EventRecord",
    "SimPath",
    "Ensemble",
    "EventBudgetExceeded",
    "event_rate",
    "parent_stencil",
    "double_ball_kernel",
    "step_event",
    "simulate",
    "simulate_replicas",
    "drift_rate",
    "qv_rate",
    "martingale_diagnostics",
    "constant_field_qv",
    "UNIFORMS_PER_EVENT",
    "NEUTRAL",
    "SEL_NEG",
    "SEL_POS",
]

UNIFORMS_PER_EVENT = 10
NEUTRAL, SEL_NEG, SEL_POS = 0, 1, 2
KIND_NAMES = ("neutral", "selective-negative", "selective-positive")
CLAMP_TOL = 1e-12


class EventBudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class ScalingRegime:
    """Time speed-up, impact and selection scaling of one of the two regimes."""

    kind: str
    d: int
    n: int
    eta: float
    rho: float | None = None

    @classmethod
    def sparse(cls, d: int, n: int, rho: float) -> "ScalingRegime":
        if rho <= 1.5 * d:
            raise ValueError(f"sparse regime needs rho > 3d/2 = {1.5 * d}, got {rho}")
        return cls("sparse", d, n, rho + 2 - d, rho)

    @classmethod
    def diffusive(cls, d: int, n: int, eta: float = 1.0) -> "ScalingRegime":
        if d == 1 and eta != 1:
            raise ValueError("diffusive regime in d=1 requires eta = 1")
        if eta <= 0:
            raise ValueError("diffusive regime requires eta > 0")
        return cls("diffusive", d, n, float(eta))

    @property
    def time_factor(self) -> float:
        return float(self.n) ** (self.d + 2 + self.eta)

    @property
    def impact(self) -> float:
        return float(self.n) ** (-self.eta)

    @property
    def selection_multiplier(self) -> float:
        return float(self.n) ** (self.d / 2 - 2) if self.kind == "sparse" else 1.0

    @property
    def mass_scale(self) -> float:
        """Factor ``n^rho`` turning ``X`` into ``Y`` (1 in the diffusive regime)."""
        return float(self.n) ** self.rho if self.kind == "sparse" else 1.0

    def initial_state(self, grid: TorusGrid, profile: Field | None = None) -> Field:
        if self.kind != "sparse":
            raise ValueError("default initial state only exists in the sparse regime")
        base = grid.constant(1.0) if profile is None else profile
        return base / self.mass_scale


def event_rate(env: Environment, regime: ScalingRegime) -> tuple[float, np.ndarray, np.ndarray]:
    """Total rate and per-cube neutral / selective rates (time factor included)."""
    s = env.selection(regime.selection_multiplier)
    area = float(env.n) ** (-env.d)
    sel = regime.time_factor * np.abs(s) * area
    neu = regime.time_factor * (1.0 - np.abs(s)) * area
    return regime.time_factor, neu, sel


# --------------------------------------------------------------------------
# parental kernel


def double_ball_kernel(r, n: int, d: int):
    """Density of ``chi_n * chi_n`` at distance ``r`` (integrates to one)."""
    r = np.abs(np.asarray(r, dtype=float))
    if d == 1:
        return n * np.clip(1.0 - n * r, 0.0, None)
    R = 1.0 / (math.sqrt(math.pi) * n)
    rr = np.minimum(r, 2 * R)
    lens = 2 * R**2 * np.arccos(rr / (2 * R)) - 0.5 * rr * np.sqrt(np.clip(4 * R**2 - rr**2, 0, None))
    return float(n) ** (2 * d) * np.where(r < 2 * R, lens, 0.0)


def parent_stencil(grid: TorusGrid) -> tuple[np.ndarray, np.ndarray]:
    """Grid offsets within ``2 r_n`` and normalized kernel weights for ``Pi_n^2`` at a grid point."""
    reach = int(math.floor(2 * grid.radius / grid.h)) + 1
    ax = np.arange(-reach, reach + 1)
    offs = np.array(np.meshgrid(*([ax] * grid.d), indexing="ij")).reshape(grid.d, -1).T
    w = double_ball_kernel(np.sqrt(np.sum((offs * grid.h) ** 2, axis=1)), grid.n, grid.d)
    keep = w > 0
    offs, w = offs[keep], w[keep]
    return np.ascontiguousarray(offs, dtype=np.int64), w / w.sum()


# --------------------------------------------------------------------------
# state and records


@dataclass
class SLFVState:
    X: np.ndarray  # grid values in [0, 1], modified in place
    t: float = 0.0
    events: int = 0

    @classmethod
    def from_field(cls, f: Field) -> "SLFVState":
        v = np.array(f.values, dtype=float)
        if v.min() < 0 or v.max() > 1:
            raise ValueError("initial state must take values in [0, 1]")
        return cls(v)


@dataclass(frozen=True)
class EventRecord:
    time: float
    center: tuple[float, ...]
    kind: str
    parents: tuple[tuple[float, ...], ...]
    parent_types: tuple[str, ...]
    offspring: str
    touched: int


# --------------------------------------------------------------------------
# numba kernel


@numba.njit(cache=True)
def _pi2_at(X, d, N, g0, g1, offs, w):
    acc = 0.0
    if d == 1:
        for k in range(w.shape[0]):
            acc += w[k] * X[(g0 + offs[k, 0]) % N]
    else:
        for k in range(w.shape[0]):
            acc += w[k] * X[((g0 + offs[k, 0]) % N) * N + (g1 + offs[k, 1]) % N]
    return acc


@numba.njit(cache=True)
def _parent(U, base, d, x0, x1, r):
    if d == 1:
        return x0 + r * (2.0 * U[base] - 1.0), 0.0
    rad = r * math.sqrt(U[base])
    ang = 2.0 * math.pi * U[base + 1]
    return x0 + rad * math.cos(ang), x1 + rad * math.sin(ang)


@numba.njit(cache=True)
def _run_chunk(
    X, d, N, n, r, u, rate, s_box, offs, w, U, t, t_end,
    ck_times, ck_ptr, phis, obs, snaps, take_snaps,
    jump_max, kinds, clamps, log_arr, log_ptr, events_done, max_events,
):
    h = 1.0 / N
    size = X.shape[0]
    nphi = phis.shape[0]
    nck = ck_times.shape[0]
    touched = np.empty(size, dtype=np.int64)
    used = 0
    done = False
    for e in range(U.shape[0]):
        Ue = U[e]
        t_new = t - math.log(1.0 - Ue[0]) / rate
        while ck_ptr < nck and ck_times[ck_ptr] < t_new:
            for i in range(nphi):
                acc = 0.0
                for z in range(size):
                    acc += X[z] * phis[i, z]
                obs[ck_ptr, i] = acc / size
            if take_snaps:
                for z in range(size):
                    snaps[ck_ptr, z] = X[z]
            ck_ptr += 1
        used = e + 1
        if t_new > t_end:
            done = True
            t = t_end
            break
        if events_done >= max_events:
            done = True
            break
        t = t_new
        x0 = Ue[1]
        x1 = Ue[2] if d == 2 else 0.0
        b0 = int(math.floor(x0 * n + 0.5)) % n
        b = b0
        if d == 2:
            b = b0 * n + int(math.floor(x1 * n + 0.5)) % n
        s = s_box[b]
        kind = 0
        if Ue[3] < abs(s):
            kind = 1 if s < 0 else 2
        # parental probabilities at the grid points nearest to the parents
        y0, y1 = _parent(Ue, 4, d, x0, x1, r)
        g0 = int(math.floor(y0 / h + 0.5)) % N
        g1 = int(math.floor(y1 / h + 0.5)) % N if d == 2 else 0
        p0 = _pi2_at(X, d, N, g0, g1, offs, w)
        if p0 < 0.0 or p0 > 1.0:
            if p0 < -1e-12 or p0 > 1.0 + 1e-12:
                clamps[0] += 1
            p0 = min(max(p0, 0.0), 1.0)
        a0 = Ue[8] < p0
        a1 = False
        z0, z1 = 0.0, 0.0
        p1 = 0.0
        if kind != 0:
            z0, z1 = _parent(Ue, 6, d, x0, x1, r)
            q0 = int(math.floor(z0 / h + 0.5)) % N
            q1 = int(math.floor(z1 / h + 0.5)) % N if d == 2 else 0
            p1 = _pi2_at(X, d, N, q0, q1, offs, w)
            if p1 < 0.0 or p1 > 1.0:
                if p1 < -1e-12 or p1 > 1.0 + 1e-12:
                    clamps[0] += 1
                p1 = min(max(p1, 0.0), 1.0)
            a1 = Ue[9] < p1
        if kind == 0:
            off = a0
        elif kind == 1:
            off = a0 and a1
        else:
            off = a0 or a1
        target = 1.0 if off else 0.0
        # grid points in the closed ball around the centre
        cnt = 0
        lo0 = int(math.ceil((x0 - r) / h - 1e-9))
        hi0 = int(math.floor((x0 + r) / h + 1e-9))
        if d == 1:
            for j in range(lo0, hi0 + 1):
                if abs(j * h - x0) <= r * (1 + 1e-12):
                    touched[cnt] = j % N
                    cnt += 1
        else:
            lo1 = int(math.ceil((x1 - r) / h - 1e-9))
            hi1 = int(math.floor((x1 + r) / h + 1e-9))
            for j in range(lo0, hi0 + 1):
                dx = j * h - x0
                for k in range(lo1, hi1 + 1):
                    dy = k * h - x1
                    if dx * dx + dy * dy <= r * r * (1 + 1e-12):
                        touched[cnt] = (j % N) * N + k % N
                        cnt += 1
        for i in range(nphi):
            dphi = 0.0
            for c in range(cnt):
                z = touched[c]
                dphi += u * (target - X[z]) * phis[i, z]
            dphi = abs(dphi) / size
            if dphi > jump_max[i]:
                jump_max[i] = dphi
        for c in range(cnt):
            z = touched[c]
            X[z] = (1.0 - u) * X[z] + u * target
        kinds[kind] += 1
        if log_ptr < log_arr.shape[0]:
            L = log_arr[log_ptr]
            L[0] = t
            L[1] = x0
            L[2] = x1
            L[3] = kind
            L[4] = y0
            L[5] = y1
            L[6] = z0
            L[7] = z1
            L[8] = 1.0 if a0 else 0.0
            L[9] = (1.0 if a1 else 0.0) if kind != 0 else -1.0
            L[10] = target
            L[11] = cnt
            L[12] = p0
            L[13] = p1
            log_ptr += 1
        events_done += 1
    return t, ck_ptr, used, done, log_ptr, events_done


LOG_FIELDS = (
    "time", "x0", "x1", "kind", "y0_0", "y0_1", "y1_0", "y1_1",
    "type0", "type1", "offspring", "touched", "p0", "p1",
)


# --------------------------------------------------------------------------
# single event (reference implementation)


def _touched_points(grid: TorusGrid, x: np.ndarray) -> np.ndarray:
    r, h, N = grid.radius, grid.h, grid.N
    axes = []
    for xi in x:
        lo = math.ceil((xi - r) / h - 1e-9)
        hi = math.floor((xi + r) / h + 1e-9)
        axes.append(np.arange(lo, hi + 1))
    pts = np.array(np.meshgrid(*axes, indexing="ij")).reshape(grid.d, -1).T
    keep = np.sum((pts * h - x) ** 2, axis=1) <= r * r * (1 + 1e-12)
    return pts[keep] % N


def step_event(
    state: SLFVState,
    env: Environment,
    regime: ScalingRegime,
    uniforms: np.ndarray | None = None,
    generator: np.random.Generator | None = None,
) -> tuple[SLFVState, EventRecord]:
    """Apply one event in place; mirrors the compiled kernel line by line."""
    grid = env.grid
    if uniforms is None:
        uniforms = (generator or np.random.default_rng()).random(UNIFORMS_PER_EVENT)
    U = np.asarray(uniforms, dtype=float)
    d, N, n, h, r, u = grid.d, grid.N, grid.n, grid.h, grid.radius, regime.impact
    s_box = env.selection(regime.selection_multiplier).ravel()
    offs, w = parent_stencil(grid)
    X = state.X.reshape(-1)
    t = state.t - math.log(1.0 - U[0]) / regime.time_factor
    x = U[1 : 1 + d].copy()
    b = np.floor(x * n + 0.5).astype(int) % n
    s = s_box[int(np.ravel_multi_index(tuple(b), (n,) * d))]
    kind = NEUTRAL
    if U[3] < abs(s):
        kind = SEL_NEG if s < 0 else SEL_POS

    def parent(base):
        if d == 1:
            return np.array([x[0] + r * (2 * U[base] - 1)])
        rad, ang = r * math.sqrt(U[base]), 2 * math.pi * U[base + 1]
        return x + rad * np.array([math.cos(ang), math.sin(ang)])

    def prob(y):
        g = np.floor(y / h + 0.5).astype(int)
        idx = (g + offs) % N
        flat = np.ravel_multi_index(tuple(idx.T), grid.shape)
        p = float(np.sum(w * X[flat]))
        if p < -CLAMP_TOL or p > 1 + CLAMP_TOL:
            log.warning("parental probability %.3g outside [0, 1]; clamped", p)
        return min(max(p, 0.0), 1.0)

    ys = [parent(4)]
    types = [U[8] < prob(ys[0])]
    if kind != NEUTRAL:
        ys.append(parent(6))
        types.append(U[9] < prob(ys[1]))
    if kind == NEUTRAL:
        off = types[0]
    elif kind == SEL_NEG:
        off = types[0] and types[1]
    else:
        off = types[0] or types[1]
    pts = _touched_points(grid, x)
    flat = np.ravel_multi_index(tuple(pts.T), grid.shape)
    X[flat] = (1 - u) * X[flat] + u * (1.0 if off else 0.0)
    state.t = t
    state.events += 1
    name = lambda a: "a" if a else "A"  # noqa: E731
    rec = EventRecord(
        t, tuple(x), KIND_NAMES[kind], tuple(tuple(y) for y in ys),
        tuple(name(a) for a in types), name(off), len(flat),
    )
    return state, rec


# --------------------------------------------------------------------------
# paths


@dataclass
class SimPath:
    times: np.ndarray  # checkpoint times
    observables: np.ndarray  # (checkpoints, phis) values of <X_t, phi>
    mass_scale: float
    events: int
    kinds: np.ndarray
    jump_max: np.ndarray  # largest per-event change of <X, phi>
    clamps: int
    truncated: bool
    snapshots: np.ndarray | None = None
    event_log: np.ndarray | None = None
    final: np.ndarray | None = None

    @property
    def scaled(self) -> np.ndarray:
        """``<Y_t, phi> = n^rho <X_t, phi>`` in the sparse regime."""
        return self.mass_scale * self.observables


def _chunk_size(rate: float, remaining: float) -> int:
    expected = rate * max(remaining, 0.0)
    return int(min(1 << 16, max(64, expected + 6 * math.sqrt(expected) + 64)))


def simulate(
    env: Environment,
    regime: ScalingRegime,
    X0: Field,
    T: float,
    checkpoints: Sequence[float],
    phis: Sequence[Field] = (),
    seed: int = 0,
    replica: int = 0,
    snapshots: bool = False,
    max_events: int | None = None,
    log_events: int = 0,
    strict_budget: bool = False,
) -> SimPath:
    """Run one replica up to time ``T``, recording ``<X_t, phi>`` at the checkpoints."""
    grid = env.grid
    if regime.d != grid.d or regime.n != grid.n:
        raise ValueError("regime does not match the environment grid")
    if X0.grid != grid:
        raise ValueError("initial state lives on another grid")
    ck = np.asarray(sorted(float(c) for c in checkpoints), dtype=float)
    if len(ck) and (ck[0] < 0 or ck[-1] > T):
        raise ValueError("checkpoints must lie in [0, T]")
    state = SLFVState.from_field(X0)
    X = state.X.reshape(-1)
    s_box = np.ascontiguousarray(env.selection(regime.selection_multiplier).ravel())
    offs, w = parent_stencil(grid)
    phi_arr = np.ascontiguousarray(
        np.array([p.values.ravel() for p in phis]).reshape(len(phis), grid.size)
    )
    obs = np.zeros((len(ck), len(phis)))
    snaps = np.zeros((len(ck), grid.size)) if snapshots else np.zeros((0, 1))
    jump_max = np.zeros(len(phis))
    kinds = np.zeros(3, dtype=np.int64)
    clamps = np.zeros(1, dtype=np.int64)
    log_arr = np.zeros((log_events, len(LOG_FIELDS)))
    budget = np.iinfo(np.int64).max if max_events is None else int(max_events)
    g = rng.stream(seed, rng.SLFV, replica)
    t, ptr, lptr, done, events = 0.0, 0, 0, False, 0
    while not done:
        U = g.random((_chunk_size(regime.time_factor, T - t), UNIFORMS_PER_EVENT))
        t, ptr, used, done, lptr, events = _run_chunk(
            X, grid.d, grid.N, grid.n, grid.radius, regime.impact, regime.time_factor,
            s_box, offs, w, U, t, float(T), ck, ptr, phi_arr, obs, snaps, snapshots,
            jump_max, kinds, clamps, log_arr, lptr, events, budget,
        )
    truncated = events >= budget and t < T
    if truncated:
        msg = f"event budget {budget} exhausted at t={t:.6g} < T={T}"
        if strict_budget:
            raise EventBudgetExceeded(msg)
        log.warning(msg)
    if ptr < len(ck):
        # truncated run: record the state reached for the remaining checkpoints
        for i in range(ptr, len(ck)):
            obs[i] = phi_arr @ X / grid.size
            if snapshots:
                snaps[i] = X
    if clamps[0]:
        log.warning("%d parental probabilities clamped into [0, 1]", int(clamps[0]))
    return SimPath(
        ck, obs, regime.mass_scale, int(events), kinds, jump_max, int(clamps[0]), bool(truncated),
        snaps.reshape((len(ck),) + grid.shape) if snapshots else None,
        log_arr[:lptr] if log_events else None,
        X.reshape(grid.shape).copy(),
    )


@dataclass
class Ensemble:
    """Replicated paths sharing environment, regime and initial state."""

    times: np.ndarray
    observables: np.ndarray  # (replicas, checkpoints, phis)
    mass_scale: float
    events: np.ndarray
    kinds: np.ndarray
    jump_max: np.ndarray
    snapshots: np.ndarray | None
    truncated: int
    env_digest: str

    @property
    def replicas(self) -> int:
        return self.observables.shape[0]

    @property
    def scaled(self) -> np.ndarray:
        return self.mass_scale * self.observables


def _one(args):
    env, regime, X0, T, ck, phis, seed, rep, snaps, budget = args
    return simulate(env, regime, X0, T, ck, phis, seed, rep, snaps, budget)


def simulate_replicas(
    env: Environment,
    regime: ScalingRegime,
    X0: Field,
    T: float,
    checkpoints: Sequence[float],
    phis: Sequence[Field],
    replicas: int,
    seed: int = 0,
    snapshots: bool = False,
    max_events: int | None = None,
    workers: int = 1,
) -> Ensemble:
    """Independent replicas keyed by ``(seed, replica)``; results ordered by replica id."""
    if replicas < 1:
        raise ValueError("replica count must be positive")
    jobs = [(env, regime, X0, T, checkpoints, phis, seed, r, snapshots, max_events) for r in range(replicas)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as ex:
            paths = list(ex.map(_one, jobs, chunksize=max(1, replicas // (4 * workers))))
    else:
        paths = [_one(j) for j in jobs]
    return Ensemble(
        paths[0].times,
        np.array([p.observables for p in paths]),
        paths[0].mass_scale,
        np.array([p.events for p in paths]),
        np.array([p.kinds for p in paths]),
        np.array([p.jump_max for p in paths]),
        np.array([p.snapshots for p in paths]) if snapshots else None,
        sum(p.truncated for p in paths),
        env.digest,
    )


# --------------------------------------------------------------------------
# martingale problem


def _ops(grid: TorusGrid):
    n, d = grid.n, grid.d
    P = chi_symbol(n, d, 1)
    P3 = chi_symbol(n, d, 3)
    P4 = chi_symbol(n, d, 4)
    return (lambda v: multiply_array(v, grid, P)), (lambda v: multiply_array(v, grid, P3)), (
        lambda v: multiply_array(v, grid, P4)
    )


def drift_rate(X: np.ndarray, phi: np.ndarray, s: np.ndarray, grid: TorusGrid, regime: ScalingRegime) -> float:
    """Generator applied to ``<X, phi>`` (time factor included)."""
    pi, pi3, pi4 = _ops(grid)
    p3 = pi3(X)
    lin = np.mean((pi4(X) - X) * phi)
    sel = np.mean(pi(s * (p3 - p3**2)) * phi)
    return regime.time_factor * regime.impact * grid.n ** (-grid.d) * (lin + sel)


def qv_rate(X: np.ndarray, phi: np.ndarray, s: np.ndarray, grid: TorusGrid, regime: ScalingRegime) -> float:
    """Predictable quadratic variation rate of ``<X, phi>`` (time factor included)."""
    pi, pi3, _ = _ops(grid)
    p3 = pi3(X)
    pphi = pi(phi)
    pxphi = pi(X * phi)
    A = pphi**2 - 2 * pphi * pxphi
    val = np.mean((1 + s) * p3 * A) + np.mean(pxphi**2) - np.mean(s * p3**2 * A)
    return regime.time_factor * regime.impact**2 * grid.n ** (-2 * grid.d) * val


@dataclass(frozen=True)
class MartingaleReport:
    times: np.ndarray
    mean: np.ndarray  # mean of M_t
    se: np.ndarray
    z_mean: np.ndarray
    variance: np.ndarray  # empirical Var(M_t)
    variance_se: np.ndarray
    qv: np.ndarray  # mean predictable QV from snapshots
    z_variance: np.ndarray


def martingale_diagnostics(
    ens: Ensemble, env: Environment, regime: ScalingRegime, phi: Field, phi_index: int = 0,
    min_replicas: int = 1000,
) -> MartingaleReport:
    """Residual martingale ``M_t = <X_t, phi> - <X_0, phi> - int drift`` and its variance vs the QV."""
    if ens.replicas < min_replicas:
        raise ValueError(f"need at least {min_replicas} replicas, got {ens.replicas}")
    if ens.snapshots is None:
        raise ValueError("martingale diagnostics need field snapshots at the checkpoints")
    if ens.env_digest != env.digest:
        raise ValueError("ensemble was simulated in another environment")
    grid = env.grid
    s = expand_boxes(grid, env.selection(regime.selection_multiplier))
    phv = phi.values
    R, K = ens.replicas, len(ens.times)
    drift = np.zeros((R, K))
    qv = np.zeros((R, K))
    for r in range(R):
        for k in range(K):
            X = ens.snapshots[r, k]
            drift[r, k] = drift_rate(X, phv, s, grid, regime)
            qv[r, k] = qv_rate(X, phv, s, grid, regime)
    t = ens.times
    dt = np.diff(t)
    cum = lambda a: np.concatenate([np.zeros((R, 1)), np.cumsum(0.5 * (a[:, 1:] + a[:, :-1]) * dt, axis=1)], axis=1)  # noqa: E731
    obs = ens.observables[:, :, phi_index]
    M = obs - obs[:, :1] - cum(drift)
    mean = M.mean(axis=0)
    se = M.std(axis=0, ddof=1) / math.sqrt(R)
    var = M.var(axis=0, ddof=1)
    c = M - mean
    var_se = np.sqrt(np.maximum(np.mean(c**4, axis=0) - var**2, 0.0) / R)
    Q = cum(qv).mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        zm = np.where(se > 0, mean / se, 0.0)
        zv = np.where(var_se > 0, (var - Q) / var_se, 0.0)
    return MartingaleReport(t, mean, se, zm, var, var_se, Q, zv)


def constant_field_qv(regime: ScalingRegime, x: float, T: float) -> float:
    """Predictable QV of ``<X, 1>`` over ``[0, T]`` for a neutral process frozen at the constant ``x``.

    For constant ``X = x`` the rate reduces to ``time_factor u^2 n^{-2d} x (1 - x)``.
    """
    return regime.time_factor * regime.impact**2 * regime.n ** (-2 * regime.d) * x * (1 - x) * T
