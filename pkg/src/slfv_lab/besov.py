"""Littlewood-Paley blocks, Besov norms, paraproducts and commutators on the torus grid.

Block ``j`` is the multiplier ``rho_j(D)``.  The profile is a C-infinity radial
step ``theta`` equal to 1 on ``[0, 3/4]`` and 0 beyond ``4/3``;
``rho_{-1} = theta``, ``rho_j = theta(2^{-j-1}.) - theta(2^{-j}.)`` and the top
block ``J`` absorbs everything above, so the blocks telescope to exactly one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import rng
from .torus import Field, TorusGrid, chi_symbol, multiply_array, resolvent_symbol, theta_symbol

__all__ = [
    "DyadicPartition",
    "BesovProfile",
    "partition",
    "lp_blocks",
    "lp_block",
    "besov_profile",
    "besov_norm",
    "lp_norm",
    "paraproducts",
    "paraproduct_less",
    "resonant",
    "commutator_pi",
    "commutator_resonant",
    "commutator_resolvent",
    "sobolev_slobodeckij_norm",
    "calibration_corpus",
    "schauder_ratios",
    "SchauderRatios",
]


def _flat(t):
    # exp(-1/t) glued at 0, the usual C-infinity building block
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def theta(r):
    """Smooth radial step: 1 for ``r <= 3/4``, 0 for ``r >= 4/3``."""
    r = np.abs(np.asarray(r, dtype=float))
    t = (r - 0.75) / (4.0 / 3.0 - 0.75)
    a, b = _flat(1.0 - t), _flat(t)
    return a / (a + b)


@dataclass(frozen=True, eq=False)
class DyadicPartition:
    grid: TorusGrid
    J: int
    symbols: np.ndarray  # (J + 2, *half-spectrum shape); row a holds block j = a - 1

    @property
    def indices(self) -> range:
        return range(-1, self.J + 1)

    def symbol(self, j: int) -> np.ndarray:
        self._check(j)
        return self.symbols[j + 1]

    def _check(self, j: int) -> None:
        if not -1 <= j <= self.J:
            raise IndexError(f"block index {j} outside [-1, {self.J}]")


@lru_cache(maxsize=32)
def partition(grid: TorusGrid) -> DyadicPartition:
    """Dyadic partition adapted to the grid, with ``2^J <= N/3``."""
    J = int(math.floor(math.log2(grid.N / 3.0)))
    r = np.sqrt(np.sum(grid.rfreqs.astype(float) ** 2, axis=0))
    rows = [theta(r)]
    for j in range(J):
        rows.append(theta(r / 2.0 ** (j + 1)) - theta(r / 2.0**j))
    rows.append(1.0 - theta(r / 2.0**J))
    sym = np.array(rows)
    sym.flags.writeable = False
    return DyadicPartition(grid, J, sym)


def lp_blocks(f: Field) -> np.ndarray:
    """All blocks of ``f`` as an array of shape ``(J + 2, *grid.shape)``."""
    grid = f.grid
    part = partition(grid)
    axes = tuple(range(1, grid.d + 1))
    fh = np.fft.rfftn(f.values)
    return np.fft.irfftn(part.symbols * fh, s=grid.shape, axes=axes)


def lp_block(f: Field, j: int) -> Field:
    part = partition(f.grid)
    part._check(j)
    fh = np.fft.rfftn(f.values)
    return Field(f.grid, np.fft.irfftn(part.symbol(j) * fh, s=f.grid.shape, axes=tuple(range(f.grid.d))))


def lp_norm(values: np.ndarray, p: float, axes=None) -> np.ndarray:
    """``L^p`` norm on the unit torus, computed as a grid mean."""
    a = np.abs(values)
    if math.isinf(p):
        return a.max(axis=axes)
    return np.mean(a**p, axis=axes) ** (1.0 / p)


@dataclass(frozen=True)
class BesovProfile:
    blocks: np.ndarray  # ||Delta_j f||_{L^p} for j = -1..J
    alpha: float
    p: float
    q: float

    @property
    def indices(self) -> np.ndarray:
        return np.arange(-1, len(self.blocks) - 1)

    def weighted(self) -> np.ndarray:
        return 2.0 ** (self.alpha * self.indices) * self.blocks

    def norm(self) -> float:
        w = self.weighted()
        if math.isinf(self.q):
            return float(w.max())
        return float(np.sum(w**self.q) ** (1.0 / self.q))

    def rows(self) -> list[tuple[int, float]]:
        return [(int(j), float(b)) for j, b in zip(self.indices, self.blocks)]


def besov_profile(f: Field, alpha: float, p: float = math.inf, q: float = math.inf) -> BesovProfile:
    if p < 1 or q < 1:
        raise ValueError("Besov exponents must satisfy p, q >= 1")
    b = lp_blocks(f)
    axes = tuple(range(1, f.grid.d + 1))
    return BesovProfile(np.asarray(lp_norm(b, p, axes)), alpha, p, q)


def besov_norm(f: Field, alpha: float, p: float = math.inf, q: float = math.inf) -> float:
    """``||f||_{B^alpha_{p,q}}``; ``q = inf`` gives the ``C^alpha_p`` norm."""
    return besov_profile(f, alpha, p, q).norm()


# --------------------------------------------------------------------------
# paraproducts


def _check_grids(*fields: Field) -> TorusGrid:
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise ValueError("fields live on different grids")
    return g


def _less(fb: np.ndarray, gb: np.ndarray) -> np.ndarray:
    # sum_i S_{i-1} f * Delta_i g with S_{i-1} = sum_{j <= i-2} Delta_j
    low = np.cumsum(fb, axis=0)
    out = np.zeros(fb.shape[1:])
    for a in range(2, fb.shape[0]):
        out += low[a - 2] * gb[a]
    return out


def _resonant(fb: np.ndarray, gb: np.ndarray) -> np.ndarray:
    out = np.zeros(fb.shape[1:])
    last = fb.shape[0] - 1
    for a in range(fb.shape[0]):
        near = gb[max(a - 1, 0) : min(a + 1, last) + 1].sum(axis=0)
        out += fb[a] * near
    return out


def paraproducts(f: Field, g: Field) -> tuple[Field, Field, Field]:
    """Bony decomposition ``f g = f<g + f o g + f>g``, block by block."""
    grid = _check_grids(f, g)
    fb, gb = lp_blocks(f), lp_blocks(g)
    return (
        Field(grid, _less(fb, gb)),
        Field(grid, _resonant(fb, gb)),
        Field(grid, _less(gb, fb)),
    )


def paraproduct_less(f: Field, g: Field) -> Field:
    grid = _check_grids(f, g)
    return Field(grid, _less(lp_blocks(f), lp_blocks(g)))


def resonant(f: Field, g: Field) -> Field:
    grid = _check_grids(f, g)
    return Field(grid, _resonant(lp_blocks(f), lp_blocks(g)))


def commutator_pi(f: Field, g: Field, n: int) -> Field:
    """``Pi_n^2 (f < g) - f < Pi_n^2 g``."""
    grid = _check_grids(f, g)
    grid.check_resolution()
    pi2 = chi_symbol(n, grid.d, 2)
    lhs = multiply_array(paraproduct_less(f, g).values, grid, pi2)
    rhs = paraproduct_less(f, Field(grid, multiply_array(g.values, grid, pi2))).values
    return Field(grid, lhs - rhs)


def commutator_resonant(f: Field, g: Field, h: Field) -> Field:
    """``f o (g < h) - g (f o h)``."""
    return resonant(f, paraproduct_less(g, h)) - g * resonant(f, h)


def commutator_resolvent(f: Field, g: Field, n: int, lam: float) -> Field:
    """``R (f < g) - f < R g`` with ``R = (-A_n + lambda)^{-1}``."""
    if lam <= 0:
        raise ValueError(f"resolvent requires lambda > 0, got {lam}")
    grid = _check_grids(f, g)
    rs = resolvent_symbol(n, grid.d, float(lam))
    lhs = multiply_array(paraproduct_less(f, g).values, grid, rs)
    rhs = paraproduct_less(f, Field(grid, multiply_array(g.values, grid, rs))).values
    return Field(grid, lhs - rhs)


# --------------------------------------------------------------------------


def sobolev_slobodeckij_norm(f: Field, zeta: float, p: float = 2.0) -> float:
    """``||f||_{L^p} + (int int |f(x)-f(y)|^p / |x-y|^{d + zeta p})^{1/p}`` by grid quadrature.

    Distances are periodic (minimal image); the diagonal ``x = y`` is omitted.
    """
    if not 0 < zeta < 1:
        raise ValueError("zeta must lie in (0, 1)")
    grid = f.grid
    d, N, h = grid.d, grid.N, grid.h
    v = f.values
    ax = np.arange(N)
    dist1 = np.minimum(ax, N - ax) * h
    total = 0.0
    axes = tuple(range(d))
    for off in np.ndindex(*grid.shape):
        if not any(off):
            continue
        r2 = sum(dist1[o] ** 2 for o in off)
        diff = np.roll(v, shift=off, axis=axes) - v
        total += np.mean(np.abs(diff) ** p) / r2 ** ((d + zeta * p) / 2.0)
    semi = (total * h**d) ** (1.0 / p)
    return float(lp_norm(v, p) + semi)


# --------------------------------------------------------------------------
# two-scale Schauder ratios


def calibration_corpus(grid: TorusGrid, size: int, alpha: float, seed: int = 0) -> list[Field]:
    """Random fields with ``||Delta_j f|| ~ 2^{-alpha j}`` up to the grid band, unit ``C^alpha`` norm.

    Field ``i`` has Gaussian Fourier coefficients of modulus ``|k|^{-alpha-d/2}``
    drawn from a stream keyed by ``(seed, i, d, N)``; the law is the same on every grid.
    """
    k = np.sqrt(np.sum(grid.rfreqs.astype(float) ** 2, axis=0))
    amp = np.where(k > 0, np.maximum(k, 1.0) ** (-alpha - grid.d / 2), 0.0)
    out = []
    for i in range(size):
        g = rng.stream(seed, rng.TEST, i, grid.d, grid.N)
        c = amp * (g.standard_normal(k.shape) + 1j * g.standard_normal(k.shape))
        f = Field(grid, np.fft.irfftn(c, s=grid.shape, axes=tuple(range(grid.d))))
        out.append(f / besov_norm(f, alpha))
    return out


@dataclass(frozen=True)
class SchauderRatios:
    n: int
    low: float  # sup over f, 2^j <= kappa0 n of 2^{(alpha-2)j} ||Delta_j A_n f|| / ||f||_{C^alpha}
    high: float  # sup over f, 2^j > kappa0 n of ||Delta_j A_n f|| / (n^2 2^{-alpha j} ||f||_{C^alpha})


def schauder_ratios(
    fields: list[Field], n: int, alpha: float, p: float = math.inf, kappa0: float = 1.0
) -> SchauderRatios:
    """Block ratios of the semidiscrete Laplacian on both sides of the scale ``kappa0 n``."""
    grid = fields[0].grid
    sym = theta_symbol(n, grid.d)
    axes = tuple(range(1, grid.d + 1))
    j = np.arange(-1, partition(grid).J + 1)
    low_mask = (2.0**j <= kappa0 * n) & (j >= 0)
    high_mask = 2.0**j > kappa0 * n
    low = high = 0.0
    for f in fields:
        norm = besov_norm(f, alpha, p)
        b = lp_norm(lp_blocks(Field(grid, multiply_array(f.values, grid, sym))), p, axes)
        if low_mask.any():
            low = max(low, float(np.max(2.0 ** ((alpha - 2) * j[low_mask]) * b[low_mask]) / norm))
        if high_mask.any():
            high = max(high, float(np.max(b[high_mask] / (n**2 * 2.0 ** (-alpha * j[high_mask]))) / norm))
    return SchauderRatios(n, low, high)
