"""Quenched selection environments, the renormalization constant and enhanced-noise diagnostics."""
from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import hadamard

from . import rng
from .besov import besov_norm, resonant
from .torus import (
    Field,
    TorusGrid,
    chi_hat_radial,
    cutoffs,
    multiply_array,
    pi_n,
    resolvent,
)

log = logging.getLogger(__name__)

__all__ = [
    "Environment",
    "SmoothNoise",
    "EnhancedNoiseReport",
    "CacheIntegrityError",
    "box_index",
    "expand_boxes",
    "sample_environment",
    "coupled_environment",
    "environment_from_boxes",
    "smooth_environment",
    "renormalization_constant",
    "renormalization_sum",
    "CnCache",
    "resonant_at",
    "enhanced_noise_report",
]

DISTRIBUTIONS = ("rademacher", "uniform")
REGIMES = ("white-noise", "smooth")
DEFAULT_CN_FACTOR = 16
CN_TOL = 1e-6


class CacheIntegrityError(RuntimeError):
    """A cached renormalization constant does not match its stored digest."""


# --------------------------------------------------------------------------
# boxes


def box_index(grid: TorusGrid) -> np.ndarray:
    """Index of the cube ``Q_n(b/n)`` containing grid point ``j`` along one axis.

    The cube around lattice point ``b/n`` is ``[b/n - 1/(2n), b/n + 1/(2n))``.
    """
    j = np.arange(grid.N)
    return ((j + grid.m // 2) // grid.m) % grid.n


def expand_boxes(grid: TorusGrid, boxes: np.ndarray) -> np.ndarray:
    """Piecewise-constant grid values from per-cube values of shape ``(n,)*d``."""
    bi = box_index(grid)
    return boxes[np.ix_(*([bi] * grid.d))]


def _draw(g: np.random.Generator, distribution: str, shape) -> np.ndarray:
    if distribution == "rademacher":
        return 2.0 * g.integers(0, 2, size=shape).astype(float) - 1.0
    if distribution == "uniform":
        return g.uniform(-math.sqrt(3.0), math.sqrt(3.0), size=shape)
    raise ValueError(f"unknown distribution {distribution!r}; expected one of {DISTRIBUTIONS}")


# --------------------------------------------------------------------------
# environment


@dataclass(frozen=True, eq=False)
class Environment:
    """Selection data for one realization.

    ``s`` is the raw selection coefficient, ``xi_e = n^{d/2} s`` and
    ``xi = xi_e + c_n 1_{d=2}`` in the white-noise regime.  In the smooth regime
    ``xi_e = xi = n^2 s``.
    """

    grid: TorusGrid
    regime: str
    boxes: np.ndarray  # Z_n per cube (white noise) or cube-averaged xi_bar (smooth)
    c_n: float = 0.0
    distribution: str = "rademacher"
    seed: int | None = None
    coupled: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        b = np.array(self.boxes, dtype=float).reshape((self.grid.n,) * self.grid.d)
        b.flags.writeable = False
        object.__setattr__(self, "boxes", b)
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")

    @property
    def d(self) -> int:
        return self.grid.d

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def s_boxes(self) -> np.ndarray:
        n, d = self.n, self.d
        if self.regime == "smooth":
            return np.clip(self.boxes / n**2, -1.0, 1.0)
        shift = n ** (-d / 2) * self.c_n if d == 2 else 0.0
        return self.boxes - shift

    @property
    def xi_boxes(self) -> np.ndarray:
        """``xi^n`` per cube."""
        if self.regime == "smooth":
            return self.n**2 * self.s_boxes
        return self.n ** (self.d / 2) * self.s_boxes + (self.c_n if self.d == 2 else 0.0)

    @property
    def xi_e_boxes(self) -> np.ndarray:
        if self.regime == "smooth":
            return self.xi_boxes
        return self.n ** (self.d / 2) * self.s_boxes

    @property
    def s(self) -> Field:
        return Field(self.grid, expand_boxes(self.grid, self.s_boxes))

    @property
    def xi(self) -> Field:
        return Field(self.grid, expand_boxes(self.grid, self.xi_boxes))

    @property
    def xi_e(self) -> Field:
        return Field(self.grid, expand_boxes(self.grid, self.xi_e_boxes))

    @property
    def potential(self) -> Field:
        """Potential of the Hamiltonian, ``xi^n - c_n 1_{d=2}`` (equal to ``xi_e``)."""
        return self.xi_e

    def selection(self, multiplier: float = 1.0) -> np.ndarray:
        """Effective per-cube selection coefficient used by the particle system."""
        s = multiplier * self.s_boxes
        if np.any(np.abs(s) >= 1.0):
            raise ValueError(
                f"selection coefficient reaches |s| = {np.abs(s).max():.3g} >= 1"
            )
        return s

    @property
    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.d},{self.n},{self.grid.m},{self.regime},{self.c_n!r}".encode())
        h.update(np.ascontiguousarray(self.boxes).tobytes())
        return h.hexdigest()[:16]


def environment_from_boxes(
    grid: TorusGrid, boxes, c_n: float = 0.0, regime: str = "white-noise", **kw
) -> Environment:
    return Environment(grid, regime, np.asarray(boxes, dtype=float), c_n=c_n, **kw)


def _check_white_noise(z: np.ndarray, strict: bool = True) -> None:
    bad = np.abs(z) >= 2.0
    if strict and np.any(bad):
        raise ValueError("box variables must lie in (-2, 2)")


def sample_environment(
    grid: TorusGrid,
    regime: str = "white-noise",
    distribution: str = "rademacher",
    seed: int = 0,
    smooth: "SmoothNoise | None" = None,
    c_n: float | None = None,
    cache: "CnCache | None" = None,
) -> Environment:
    """Sample a quenched environment; deterministic in ``(grid, regime, distribution, seed)``."""
    if regime == "smooth":
        return smooth_environment(grid, smooth or SmoothNoise.default(grid.d), seed=seed)
    if regime != "white-noise":
        raise ValueError(f"unknown regime {regime!r}")
    g = rng.stream(seed, rng.ENV, grid.d, grid.n)
    z = _draw(g, distribution, (grid.n,) * grid.d)
    _check_white_noise(z)
    if grid.d == 2 and c_n is None:
        c_n = cache.get(grid.n) if cache is not None else renormalization_constant(grid.n)
    return Environment(
        grid, regime, z, c_n=float(c_n or 0.0), distribution=distribution, seed=seed
    )


def coupled_environment(
    grid: TorusGrid,
    seed: int,
    base: int = 8,
    distribution: str = "rademacher",
    c_n: float | None = None,
) -> Environment:
    """Environment at scale ``n`` obtained by hierarchical refinement from scale ``base``.

    Each cube at scale ``2k`` splits its parent's value as
    ``(Z_parent + sum_i H[c, i] W_i) / 2^{d/2}`` with ``H`` a Hadamard matrix and
    ``W_i`` Rademacher draws keyed by the parent cube.  Second moments stay 1 and
    the integral of ``xi^n`` over every parent cube is preserved, so the fields at
    different ``n`` are additively nested.  Values within a level are no longer
    independent and ``|Z| < 2`` can fail after four refinements; the check is skipped.
    """
    d, n = grid.d, grid.n
    if n < base or n % base or (n // base) & (n // base - 1):
        raise ValueError(f"n={n} must be base * 2^k with base={base}")
    z = _draw(rng.stream(seed, rng.ENV, d, base), distribution, (base,) * d)
    H = hadamard(2**d).astype(float)
    k = base
    while k < n:
        child = np.empty((2 * k,) * d)
        for idx in np.ndindex(*z.shape):
            flat = int(np.ravel_multi_index(idx, z.shape))
            w = 2.0 * rng.stream(seed, rng.REFINE, d, k, flat).integers(0, 2, size=2**d - 1) - 1.0
            vals = (z[idx] + H[:, 1:] @ w) / 2 ** (d / 2)
            for c, off in enumerate(np.ndindex(*((2,) * d))):
                child[tuple(2 * i + o for i, o in zip(idx, off))] = vals[c]
        z, k = child, 2 * k
    if d == 2 and c_n is None:
        c_n = renormalization_constant(n)
    return Environment(
        grid,
        "white-noise",
        z,
        c_n=float(c_n or 0.0),
        distribution=distribution,
        seed=seed,
        coupled=True,
        meta={"base": base, "max_abs_z": float(np.abs(z).max())},
    )


# --------------------------------------------------------------------------
# smooth regime


@dataclass(frozen=True)
class SmoothNoise:
    """Trigonometric polynomial ``sum a_i cos(2 pi k_i.x + phase_i)``, scaled to unit sup norm."""

    modes: tuple[tuple[tuple[int, ...], float, float], ...]

    @classmethod
    def default(cls, d: int) -> "SmoothNoise":
        if d == 1:
            modes = (((1,), 1.0, 0.0), ((2,), 0.6, 1.1), ((3,), 0.4, 2.3), ((4,), 0.3, 0.4), ((5,), 0.2, 4.0))
        else:
            modes = (
                ((1, 0), 1.0, 0.0),
                ((0, 1), 0.8, 1.3),
                ((1, 1), 0.5, 2.1),
                ((2, -1), 0.4, 0.7),
                ((0, 3), 0.3, 3.9),
            )
        return cls(modes)

    def scale(self, d: int) -> float:
        return _smooth_scale(self, d)

    def evaluate(self, points: Sequence[np.ndarray], cube: int | None = None) -> np.ndarray:
        """Values at ``points``; with ``cube=n`` the average over the cube of side ``1/n``."""
        out = np.zeros(np.shape(points[0]))
        for k, a, ph in self.modes:
            arg = 2 * np.pi * sum(ki * x for ki, x in zip(k, points)) + ph
            damp = 1.0 if cube is None else float(np.prod(np.sinc(np.asarray(k) / cube)))
            out += a * damp * np.cos(arg)
        return out / self.scale(len(points))

    def field(self, grid: TorusGrid) -> Field:
        return Field(grid, self.evaluate(grid.points))


@lru_cache(maxsize=16)
def _smooth_scale(noise: SmoothNoise, d: int) -> float:
    x = np.arange(512) / 512.0
    pts = np.meshgrid(*([x] * d), indexing="ij")
    out = np.zeros(pts[0].shape)
    for k, a, ph in noise.modes:
        out += a * np.cos(2 * np.pi * sum(ki * xi for ki, xi in zip(k, pts)) + ph)
    return float(np.abs(out).max())


def smooth_environment(grid: TorusGrid, noise: SmoothNoise, seed: int | None = None) -> Environment:
    """Smooth-regime environment with ``xi_bar`` averaged over each cube."""
    lattice = np.meshgrid(*([np.arange(grid.n) / grid.n] * grid.d), indexing="ij")
    boxes = noise.evaluate(lattice, cube=grid.n)
    env = Environment(grid, "smooth", boxes, seed=seed, meta={"modes": noise.modes})
    env.selection()
    return env


# --------------------------------------------------------------------------
# renormalization constant


def renormalization_sum(n: int, K: int) -> tuple[float, float]:
    """Partial sums of ``c_n`` over ``|k|_inf <= K`` and ``|k|_inf <= K/2``."""
    half = K // 2
    k2 = np.arange(K + 1, dtype=float)
    w2 = np.where(k2 == 0, 1.0, 2.0)
    sinc2 = np.sinc(k2 / n)
    full = 0.0
    inner = 0.0
    step = max(1, 2_000_000 // (K + 1))
    for start in range(0, K + 1, step):
        k1 = np.arange(start, min(start + step, K + 1), dtype=float)[:, None]
        w1 = np.where(k1 == 0, 1.0, 2.0)
        r = np.sqrt(k1**2 + k2**2) / n
        ch = chi_hat_radial(r, 2)
        denom = -(n**2) * (ch**4 - 1.0) + 1.0
        term = w1 * w2 * ch**2 * np.sinc(k1 / n) * sinc2 / denom
        full += float(term.sum())
        mask = (k1 <= half) & (k2 <= half)
        inner += float(term[np.broadcast_to(mask, term.shape)].sum())
    return full, inner


@lru_cache(maxsize=64)
def _cn(n: int, K: int) -> tuple[float, float]:
    full, inner = renormalization_sum(n, K)
    # summand ~ |k|^-4 beyond n, so the tail past K is about (S(K) - S(K/2)) / 15
    tail = (full - inner) / 15.0
    return full, tail


def renormalization_constant(
    n: int, K: int | None = None, tol: float = CN_TOL, with_tail: bool = False
):
    """``c_n = sum_k chi_hat^2(k/n) chi_hat_Q(k/n) / (-theta_n(k) + 1)`` in d=2."""
    K = DEFAULT_CN_FACTOR * n if K is None else int(K)
    value, tail = _cn(int(n), K)
    log.debug("c_%d = %.12f (K=%d, tail estimate %.2e)", n, value, K, tail)
    if abs(tail) > tol:
        raise ValueError(f"c_{n}: tail estimate {tail:.2e} exceeds {tol:.0e}; increase K")
    return (value, tail) if with_tail else value


def _cn_digest(d: int, n: int, K: int, value: str) -> str:
    return hashlib.sha256(f"{d},{n},{K},{value}".encode()).hexdigest()[:16]


class CnCache:
    """CSV table of ``c_n`` keyed by ``(d, n, K)`` with a per-row digest."""

    header = ("d", "n", "K", "c_n", "digest")

    def __init__(self, path: str | Path, factor: int = DEFAULT_CN_FACTOR):
        self.path = Path(path)
        self.factor = factor

    def _rows(self) -> dict[tuple[int, int, int], float]:
        if not self.path.exists():
            return {}
        out = {}
        with open(self.path, newline="") as fh:
            for row in csv.DictReader(fh):
                d, n, K = int(row["d"]), int(row["n"]), int(row["K"])
                if _cn_digest(d, n, K, row["c_n"]) != row["digest"]:
                    raise CacheIntegrityError(f"c_n cache row (d={d}, n={n}, K={K}) fails its digest")
                out[(d, n, K)] = float(row["c_n"])
        return out

    def get(self, n: int) -> float:
        K = self.factor * n
        rows = self._rows()
        if (2, n, K) in rows:
            return rows[(2, n, K)]
        value = renormalization_constant(n, K)
        rows[(2, n, K)] = value
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header)
            for (d, nn, kk), v in sorted(rows.items()):
                s = f"{v:.17g}"
                w.writerow((d, nn, kk, s, _cn_digest(d, nn, kk, s)))
        return value


# --------------------------------------------------------------------------
# enhanced noise


def resonant_at(env: Environment, index: tuple[int, ...], lam: float = 1.0) -> float:
    """``(xi^n o Pi_n^2 X_{n, lam})`` at one grid point."""
    xi = env.xi
    X = resolvent(xi, env.n, lam)
    return float(resonant(xi, pi_n(X, 2)).values[index])


@dataclass(frozen=True)
class EnhancedNoiseReport:
    n: int
    kappa: float
    lambdas: tuple[float, ...]
    q_norms: tuple[float, ...]  # n ||Q_n X_{n,lambda}||_inf
    y_norms: tuple[float, ...]  # lambda^{-kappa/4} ||Y_{n,lambda}||_{C^{-kappa/2}}
    resonant_norms: tuple[float, ...]  # same weight, resonant product without the c_n offset
    xi_negative: float  # sup_zeta n^{-zeta} ||xi||_{C^{-(1-zeta)-kappa/2}}
    xi_sup: float  # n^{-1} ||xi||_inf
    xi_holder: float  # n^{-1-kappa} ||xi||_{C^kappa_{1/(2 kappa)}}
    offset: float  # c_n

    @property
    def total(self) -> float:
        lam_part = max(q + y for q, y in zip(self.q_norms, self.y_norms))
        return self.xi_negative + self.xi_sup + self.xi_holder + lam_part


def enhanced_noise_report(
    env: Environment, lambdas: Sequence[float] = (1.0, 10.0, 100.0), kappa: float = 0.25
) -> EnhancedNoiseReport:
    """Components of the enhanced-noise norm for one environment (d=2)."""
    if env.d != 2:
        raise ValueError("the enhanced noise is defined in d=2")
    if env.regime != "white-noise":
        raise ValueError("enhanced noise needs a white-noise environment")
    if not 0 < kappa < 0.5:
        raise ValueError("kappa must lie in (0, 1/2)")
    if env.c_n == 0.0 and np.any(env.boxes):
        raise ValueError("environment carries no c_n")
    grid, n = env.grid, env.n
    xi = env.xi
    # n^{-zeta} 2^{(zeta-1-kappa/2) j} is monotone in zeta, so the sup sits at an endpoint
    neg = max(besov_norm(xi, -1.0 - kappa / 2), besov_norm(xi, -kappa / 2) / n)
    sup = xi.norm(math.inf) / n
    hol = besov_norm(xi, kappa, p=1.0 / (2 * kappa)) / n ** (1 + kappa)
    _, Q = cutoffs(n)
    qs, ys, rs = [], [], []
    for lam in lambdas:
        if lam < 1:
            raise ValueError("lambda must be >= 1")
        X = resolvent(xi, n, lam)
        qs.append(n * float(np.abs(multiply_array(X.values, grid, Q)).max()))
        r = resonant(xi, pi_n(X, 2))
        w = lam ** (-kappa / 4)
        ys.append(w * besov_norm(r - env.c_n, -kappa / 2))
        rs.append(w * besov_norm(r, -kappa / 2))
    return EnhancedNoiseReport(
        n, kappa, tuple(lambdas), tuple(qs), tuple(ys), tuple(rs), neg, sup, hol, env.c_n
    )
