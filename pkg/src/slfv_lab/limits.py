"""Limit objects: the rough super-Brownian dual equation and the Fisher-KPP equation."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import rng
from .environment import SmoothNoise
from .hamiltonian import Spectrum
from .torus import Field, TorusGrid, chi_symbol, multiply_array, nu0

log = logging.getLogger(__name__)

__all__ = [
    "DualSolution",
    "KPPRun",
    "McCheck",
    "dual_solve",
    "laplace_duality_check",
    "sbm_first_moment_check",
    "fkpp_solve",
    "fkpp_ensemble",
    "fkpp_distance",
    "variance_comparison",
    "generator_diffusivity",
    "stability_number",
    "BLOWUP",
    "DEFECT_TOL",
]

BLOWUP = 1e6
DEFECT_TOL = 1e-4  # per-step mild-equation defect, relative to max(1, ||phi||_2)


@dataclass(frozen=True)
class DualSolution:
    """Trajectory of ``U_t phi`` solving ``dU = H U - U^2 / 2`` in mild form."""

    times: np.ndarray
    coefficients: np.ndarray  # (steps + 1, rank) in the eigenbasis
    spectrum: Spectrum
    rank: int
    dt: float
    projection_error: float  # ||phi - P_r phi||_{L^2}
    defect: np.ndarray  # mild-equation residual at each time
    tol: float = DEFECT_TOL

    @property
    def ok(self) -> bool:
        """Defect within ten times the stepping tolerance."""
        return bool(self.defect.max() <= 10 * self.tol)

    def field(self, i: int) -> Field:
        return self.spectrum.synthesize(self.coefficients[i])

    def mean(self) -> np.ndarray:
        """``<Lebesgue, U_t phi>`` along the trajectory."""
        m = self.spectrum.vectors[: self.rank].mean(axis=1)
        return self.coefficients @ m

    def at(self, t: float) -> Field:
        i = int(round(t / self.dt))
        if abs(i * self.dt - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"t={t} is not on the time grid")
        return self.field(i)


def _square_coef(spec: Spectrum, rank: int, a: np.ndarray) -> np.ndarray:
    u = a @ spec.vectors[:rank]
    return spec.vectors[:rank] @ (u * u) / spec.grid.size


def dual_solve(
    spec: Spectrum, phi: Field, T: float, dt: float, rank: int = 24, tol: float = DEFECT_TOL
) -> DualSolution:
    """Exponential-integrator midpoint stepping of the mild dual equation.

    ``U_mid = e^{dt H/2} (U - dt U^2 / 4)`` and
    ``U_next = e^{dt H} U - (dt/2) e^{dt H/2} U_mid^2``, all in the eigenbasis.
    """
    if np.any(phi.values < 0):
        raise ValueError("the dual equation needs phi >= 0")
    if rank > len(spec):
        raise ValueError(f"rank {rank} exceeds the {len(spec)} computed pairs")
    steps = int(round(T / dt))
    if steps < 0 or abs(steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("T must be a non-negative multiple of dt")
    lam = spec.values[:rank]
    e1, eh = np.exp(lam * dt), np.exp(lam * dt / 2)
    a = spec.coefficients(phi, rank)
    proj_err = (phi - spec.synthesize(a)).norm(2)
    coefs = np.empty((steps + 1, rank))
    coefs[0] = a
    for k in range(steps):
        mid = eh * (a - 0.25 * dt * _square_coef(spec, rank, a))
        a = e1 * a - 0.5 * dt * eh * _square_coef(spec, rank, mid)
        coefs[k + 1] = a
        if np.abs(a).max() > BLOWUP:
            raise FloatingPointError(f"dual solution blew up at t={(k + 1) * dt:.4g}")
    times = dt * np.arange(steps + 1)
    defect = _mild_defect(spec, rank, times, coefs)
    scale = max(1.0, phi.norm(2))
    if defect.max() > 10 * tol * scale:
        log.warning("dual defect %.3g above 10 x tolerance", defect.max())
    return DualSolution(times, coefs, spec, rank, dt, proj_err, defect / scale, tol)


def _mild_defect(spec: Spectrum, rank: int, times: np.ndarray, coefs: np.ndarray) -> np.ndarray:
    # U_t - e^{tH} U_0 + 1/2 int_0^t e^{(t-s)H} U_s^2 ds, integral by the trapezoid rule
    lam = spec.values[:rank]
    sq = np.array([_square_coef(spec, rank, a) for a in coefs])
    out = np.zeros(len(times))
    for k in range(1, len(times)):
        t = times[k]
        w = np.exp(np.outer(t - times[: k + 1], lam)) * sq[: k + 1]
        integral = np.trapezoid(w, times[: k + 1], axis=0)
        r = coefs[k] - np.exp(lam * t) * coefs[0] + 0.5 * integral
        out[k] = float(np.sqrt(np.sum(r**2)))
    return out


@dataclass(frozen=True)
class McCheck:
    """Monte Carlo statistic against a reference, per checkpoint."""

    times: np.ndarray
    estimate: np.ndarray
    se: np.ndarray
    reference: np.ndarray

    @property
    def z(self) -> np.ndarray:
        diff = self.estimate - self.reference
        # a degenerate sample (e.g. t=0) is compared exactly, up to roundoff
        scale = 1e-12 * np.maximum(1.0, np.abs(self.reference))
        exact = np.where(np.abs(diff) <= scale, 0.0, np.inf)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.se > scale, diff / self.se, exact)

    @property
    def relative_error(self) -> np.ndarray:
        return np.abs(self.estimate - self.reference) / np.maximum(np.abs(self.reference), 1e-300)

    @property
    def passed(self) -> bool:
        return bool(np.all(np.abs(self.z) < 3.0))


def laplace_duality_check(
    scaled_obs: np.ndarray, times: np.ndarray, dual: DualSolution, y0_mass: float = 1.0,
    env_digest: str | None = None, dual_digest: str | None = None,
) -> McCheck:
    """Compare ``E exp(-<Y_t, Pi_n phi>)`` with ``exp(-<Y0, U_t phi>)`` (``Y0`` uniform of given mass).

    ``scaled_obs`` holds ``<Y_t, Pi_n phi>`` per replica and checkpoint.
    """
    if env_digest is not None and dual_digest is not None and env_digest != dual_digest:
        raise ValueError("paths and dual solution come from different environments")
    R = scaled_obs.shape[0]
    e = np.exp(-scaled_obs)
    idx = [int(round(t / dual.dt)) for t in times]
    ref = np.exp(-y0_mass * dual.mean()[idx])
    return McCheck(np.asarray(times), e.mean(axis=0), e.std(axis=0, ddof=1) / math.sqrt(R), ref)


def sbm_first_moment_check(
    scaled_obs: np.ndarray, times: np.ndarray, eigenvalue: float, initial: float
) -> McCheck:
    """``E <Y_t, Pi_n e_k>`` against ``exp(lambda_k t) <Y0, e_k>``."""
    R = scaled_obs.shape[0]
    ref = np.exp(eigenvalue * np.asarray(times)) * initial
    return McCheck(
        np.asarray(times), scaled_obs.mean(axis=0), scaled_obs.std(axis=0, ddof=1) / math.sqrt(R), ref
    )


# --------------------------------------------------------------------------
# Fisher-KPP


@dataclass(frozen=True)
class KPPRun:
    grid: TorusGrid
    times: np.ndarray
    states: np.ndarray  # (checkpoints, *grid.shape)
    dt: float
    stochastic: bool
    seed: int | None
    clip_mass: float  # total |clipping correction| integrated over the run

    def field(self, i: int) -> Field:
        return Field(self.grid, self.states[i])


def generator_diffusivity(d: int) -> float:
    """Diffusivity of the continuum limit of ``A_n``.

    ``theta_n(k) -> -(2 pi)^2 (nu0 / 2) |k|^2`` because ``D^2 chi_hat(0) = -(2 pi)^2 nu0 / 4``
    enters four times; the SLFV therefore diffuses at rate ``nu0 / 2``, not ``nu0``.
    """
    return nu0(d) / 2


def stability_number(d: int, N: int, dt: float, diffusivity: float | None = None) -> float:
    D = nu0(d) if diffusivity is None else diffusivity
    return D * dt * (2 * math.pi * N / 2) ** 2


def _potential(xi_bar, grid: TorusGrid) -> np.ndarray:
    if isinstance(xi_bar, SmoothNoise):
        return xi_bar.field(grid).values
    if xi_bar is None:
        return np.zeros(grid.shape)
    return np.asarray(xi_bar.values, dtype=float)


def _kpp_run(X0, grid, T, dt, pot, ck, streams, check_stability, diffusivity=None):
    """Step a batch ``(B, *grid.shape)`` and return states at the checkpoints and clip mass."""
    d, N = grid.d, grid.N
    if X0.min() < 0 or X0.max() > 1:
        raise ValueError("initial state must take values in [0, 1]")
    D = nu0(d) if diffusivity is None else float(diffusivity)
    if D < 0:
        raise ValueError("diffusivity must be non-negative")
    if check_stability and stability_number(d, N, dt, D) > 1:
        raise ValueError(
            f"dt={dt:g} violates D dt (pi N)^2 <= 1 (value {stability_number(d, N, dt, D):.3g})"
        )
    steps = int(round(T / dt))
    if abs(steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("T must be a multiple of dt")
    ck_steps = [int(round(c / dt)) for c in ck]
    if ck_steps and (ck_steps[0] < 0 or ck_steps[-1] > steps):
        raise ValueError("checkpoints must lie in [0, T]")
    k2 = np.sum(grid.rfreqs.astype(float) ** 2, axis=0)
    implicit = 1.0 / (1.0 + dt * D * 4 * math.pi**2 * k2)
    axes = tuple(range(1, d + 1))
    noise_scale = math.sqrt(dt / grid.h**d)
    X = np.array(X0, dtype=float)
    B = X.shape[0]
    out = np.empty((len(ck), *X.shape))
    clip = np.zeros(B)
    ci = 0
    for step in range(steps + 1):
        while ci < len(ck_steps) and ck_steps[ci] == step:
            out[ci] = X
            ci += 1
        if step == steps:
            break
        rhs = X + dt * pot * X * (1.0 - X)
        if streams is not None:
            amp = np.sqrt(np.clip(X * (1.0 - X), 0.0, None))
            z = np.stack([g.standard_normal(grid.shape) for g in streams])
            rhs = rhs + amp * noise_scale * z
        X = np.fft.irfftn(np.fft.rfftn(rhs, axes=axes) * implicit, s=grid.shape, axes=axes)
        Xc = np.clip(X, 0.0, 1.0)
        clip += np.abs(Xc - X).reshape(B, -1).mean(axis=1)
        X = Xc
    return out, clip


def fkpp_solve(
    X0: Field,
    T: float,
    dt: float,
    xi_bar: Field | SmoothNoise | None = None,
    checkpoints: Sequence[float] | None = None,
    seed: int | None = None,
    replica: int = 0,
    stochastic: bool | None = None,
    check_stability: bool = True,
    diffusivity: float | None = None,
) -> KPPRun:
    """Semi-implicit spectral stepping of ``dX = D Lap X + xi_bar X (1 - X) [+ sqrt(X(1-X)) noise]``.

    ``D`` defaults to ``nu0(d)``; pass ``generator_diffusivity(d)`` for the limit of ``A_n``.

    The noise is space-time white noise (stochastic by default iff d=1), added
    explicitly as per-point Gaussian increments of variance ``dt / h^d``; the
    state is then clipped into ``[0, 1]`` and the clipped amount accumulated.
    """
    grid = X0.grid
    stochastic = (grid.d == 1) if stochastic is None else stochastic
    if stochastic and seed is None:
        raise ValueError("stochastic runs need a seed")
    ck = [0.0, T] if checkpoints is None else sorted(float(c) for c in checkpoints)
    streams = [rng.stream(seed, rng.SPDE, replica)] if stochastic else None
    out, clip = _kpp_run(
        X0.values[None], grid, T, dt, _potential(xi_bar, grid), ck, streams, check_stability, diffusivity
    )
    if clip[0] > 0:
        log.debug("KPP clipping removed total mass %.3g", clip[0])
    return KPPRun(grid, np.asarray(ck), out[:, 0], dt, stochastic, seed, float(clip[0]))


def fkpp_ensemble(
    X0: Field,
    T: float,
    dt: float,
    replicas: int,
    seed: int,
    phis: Sequence[Field],
    xi_bar: Field | SmoothNoise | None = None,
    checkpoints: Sequence[float] | None = None,
    batch: int = 256,
    diffusivity: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Stochastic KPP replicas stepped in batches; replica ``r`` equals ``fkpp_solve(..., replica=r)``.

    Returns ``<X_t, phi>`` of shape ``(replicas, checkpoints, phis)`` and the clip mass per replica.
    """
    if replicas < 1:
        raise ValueError("replica count must be positive")
    grid = X0.grid
    ck = [0.0, T] if checkpoints is None else sorted(float(c) for c in checkpoints)
    pot = _potential(xi_bar, grid)
    P = np.array([p.values.ravel() for p in phis])
    obs = np.empty((replicas, len(ck), len(phis)))
    clips = np.empty(replicas)
    for lo in range(0, replicas, batch):
        hi = min(replicas, lo + batch)
        streams = [rng.stream(seed, rng.SPDE, r) for r in range(lo, hi)]
        X = np.broadcast_to(X0.values, (hi - lo,) + grid.shape)
        out, clip = _kpp_run(X, grid, T, dt, pot, ck, streams, True, diffusivity)
        obs[lo:hi] = np.einsum("kbx,px->bkp", out.reshape(len(ck), hi - lo, -1), P) / grid.size
        clips[lo:hi] = clip
    return obs, clips


def subsample(values: np.ndarray, fine: TorusGrid, coarse: TorusGrid) -> np.ndarray:
    """Restrict values from a fine grid to a coarser grid whose points are a subset."""
    if fine.N % coarse.N:
        raise ValueError("coarse grid points are not a subset of the fine grid")
    step = fine.N // coarse.N
    sl = tuple(slice(None, None, step) for _ in range(fine.d))
    return values[sl]


def fkpp_distance(slfv_fields: np.ndarray, grid: TorusGrid, kpp: KPPRun, index: int = -1) -> np.ndarray:
    """``||Pi_n X^n_t - X^KPP_t||_{L^2}`` for each SLFV replica field at one checkpoint."""
    ref = subsample(kpp.states[index], kpp.grid, grid)
    sym = chi_symbol(grid.n, grid.d, 1)
    out = []
    for X in slfv_fields:
        diff = multiply_array(np.asarray(X).reshape(grid.shape), grid, sym) - ref
        out.append(float(np.sqrt(np.mean(diff**2))))
    return np.array(out)


def variance_comparison(a: np.ndarray, b: np.ndarray) -> tuple[float, float, float, float]:
    """Sample variances of two independent samples, the z-score of their difference and its SE."""

    def var_se(x):
        x = np.asarray(x, dtype=float)
        v = x.var(ddof=1)
        m4 = np.mean((x - x.mean()) ** 4)
        return v, math.sqrt(max(m4 - v * v, 0.0) / len(x))

    va, sa = var_se(a)
    vb, sb = var_se(b)
    se = math.sqrt(sa * sa + sb * sb)
    return va, vb, (va - vb) / se, se
