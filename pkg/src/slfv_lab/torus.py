"""Torus grids, fields and Fourier multipliers.

Grid points sit at ``j * h`` for ``j = 0..N-1`` along each axis, ``h = 1/N`` and
``N = m * n``.  Fourier coefficients follow the torus convention
``f_hat(k) = int exp(-2 pi i k.x) f(x) dx``, approximated by ``fft(values) / N**d``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable

import numpy as np
from scipy.special import j1

__all__ = [
    "TorusGrid",
    "Field",
    "MultiplierSymbol",
    "ResolutionError",
    "chi_hat",
    "chi_hat_radial",
    "chi_hat_cube",
    "nu0",
    "theta_n",
    "bump",
    "apply_multiplier",
    "pi_n",
    "pi_n_realspace",
    "a_n",
    "a_n_realspace",
    "cutoffs",
    "resolvent",
    "semigroup",
    "ball_radius",
    "ball_offsets",
    "identity_symbol",
    "chi_symbol",
    "theta_symbol",
    "resolvent_symbol",
    "semigroup_symbol",
]

# smallest admissible n: the ball and the cube of volume n^-d fit inside (-1/2, 1/2)^d
MIN_SCALE = 2


class ResolutionError(ValueError):
    """The grid does not resolve the ball of volume n^-d."""


def ball_radius(n: int, d: int) -> float:
    """Radius of the Euclidean ball of volume ``n**-d``."""
    if d == 1:
        return 1.0 / (2 * n)
    if d == 2:
        return 1.0 / (math.sqrt(math.pi) * n)
    raise ValueError(f"unsupported dimension {d}")


@dataclass(frozen=True)
class TorusGrid:
    d: int
    n: int
    m: int = 8

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.d}")
        if self.n < MIN_SCALE:
            raise ValueError(f"scale n={self.n} below c(d)={MIN_SCALE}")
        if self.m < 1 or self.N % 2:
            raise ValueError(f"N = m*n must be even (m={self.m}, n={self.n})")

    @property
    def N(self) -> int:
        return self.m * self.n

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    @property
    def size(self) -> int:
        return self.N**self.d

    @property
    def radius(self) -> float:
        return ball_radius(self.n, self.d)

    def check_resolution(self) -> None:
        if self.radius < 2 * self.h:
            raise ResolutionError(
                f"ball radius {self.radius:.3g} < 2h = {2 * self.h:.3g}; increase m"
            )

    @cached_property
    def points(self) -> tuple[np.ndarray, ...]:
        x = np.arange(self.N) * self.h
        return tuple(np.meshgrid(*([x] * self.d), indexing="ij"))

    @cached_property
    def freqs(self) -> np.ndarray:
        """Integer frequencies, shape ``(d, N, ..., N)``, in ``{-N/2, ..., N/2-1}``."""
        k = np.fft.fftfreq(self.N, 1.0 / self.N)
        return np.array(np.meshgrid(*([k] * self.d), indexing="ij"))

    @cached_property
    def rfreqs(self) -> np.ndarray:
        """Frequencies of the half-spectrum used by ``rfftn``."""
        k = np.fft.fftfreq(self.N, 1.0 / self.N)
        kr = np.fft.rfftfreq(self.N, 1.0 / self.N)
        axes = [k] * (self.d - 1) + [kr]
        return np.array(np.meshgrid(*axes, indexing="ij"))

    def field(self, values) -> "Field":
        return Field(self, np.asarray(values, dtype=float).reshape(self.shape))

    def constant(self, c: float) -> "Field":
        return Field(self, np.full(self.shape, float(c)))

    def zeros(self) -> "Field":
        return self.constant(0.0)

    def mode(self, k, phase: str = "cos") -> "Field":
        """Real trigonometric mode ``cos(2 pi k.x)`` or ``sin(2 pi k.x)``."""
        k = np.atleast_1d(np.asarray(k, dtype=float))
        arg = 2 * np.pi * sum(ki * xi for ki, xi in zip(k, self.points))
        return Field(self, np.cos(arg) if phase == "cos" else np.sin(arg))

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        """Grid inner product approximating ``int f g dx`` on the unit torus."""
        return float(np.vdot(f, g).real) / self.size


@dataclass(frozen=True, eq=False)
class Field:
    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True).reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @cached_property
    def spectrum(self) -> np.ndarray:
        s = np.fft.fftn(self.values) / self.grid.size
        s.flags.writeable = False
        return s

    @classmethod
    def from_spectrum(cls, grid: TorusGrid, spectrum: np.ndarray) -> "Field":
        v = np.fft.ifftn(np.asarray(spectrum) * grid.size)
        return cls(grid, v.real)

    def mean(self) -> float:
        return float(self.values.mean())

    def norm(self, p: float = 2) -> float:
        a = np.abs(self.values)
        if math.isinf(p):
            return float(a.max())
        return float(np.mean(a**p) ** (1.0 / p))

    def inner(self, other: "Field") -> float:
        return self.grid.inner(self.values, other.values)

    def _other(self, other):
        if isinstance(other, Field):
            if other.grid != self.grid:
                raise ValueError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return Field(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return Field(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return Field(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.grid, -self.values)

    def __truediv__(self, c):
        return Field(self.grid, self.values / c)


# --------------------------------------------------------------------------
# characteristic functions of the unit-volume ball and cube


def chi_hat_radial(r, d: int):
    """Fourier transform of the normalized indicator of the unit-volume ball at ``|k| = r``."""
    r = np.abs(np.asarray(r, dtype=float))
    if d == 1:
        return np.sinc(r)
    if d == 2:
        # disc of radius pi^{-1/2}: 2 J1(z)/z with z = 2 pi R |k|
        z = 2.0 * math.sqrt(math.pi) * r
        out = np.ones_like(z)
        nz = z > 1e-8
        out[nz] = 2.0 * j1(z[nz]) / z[nz]
        small = ~nz
        out[small] = 1.0 - z[small] ** 2 / 8.0
        return out if out.ndim else float(out)
    raise ValueError(f"unsupported dimension {d}")


def _norm_last(k, d: int):
    k = np.asarray(k, dtype=float)
    if d == 1:
        return np.abs(k)
    if k.shape[-1] != d:
        raise ValueError(f"expected trailing axis of length {d}, got shape {k.shape}")
    return np.sqrt(np.sum(k**2, axis=-1))


def chi_hat(k, d: int):
    """``chi_hat`` at frequency vectors ``k`` (trailing axis of length d when d=2)."""
    return chi_hat_radial(_norm_last(k, d), d)


def chi_hat_cube(k, d: int):
    """Fourier transform of the normalized indicator of the unit cube."""
    k = np.asarray(k, dtype=float)
    if d == 1:
        return np.sinc(k)
    return np.prod(np.sinc(k), axis=-1)


def nu0(d: int) -> float:
    if d == 1:
        return 1.0 / 3.0
    if d == 2:
        return 1.0 / math.pi
    raise ValueError(f"unsupported dimension {d}")


def theta_n(k, n: int, d: int):
    """Symbol of the semidiscrete Laplacian, ``n^2 (chi_hat(k/n)^4 - 1)``."""
    r = _norm_last(k, d) / n
    return n**2 * (chi_hat_radial(r, d) ** 4 - 1.0)


def _smoothstep(t):
    # degree-7 smoothstep, C^3 at both ends
    t = np.clip(t, 0.0, 1.0)
    return t**4 * (35 - 84 * t + 70 * t**2 - 20 * t**3)


def bump(r):
    """Radial cutoff profile: 1 on ``|x| <= 1/2``, 0 on ``|x| >= 1``."""
    r = np.abs(np.asarray(r, dtype=float))
    return 1.0 - _smoothstep(2.0 * r - 1.0)


# --------------------------------------------------------------------------
# multiplier symbols


@dataclass(frozen=True, eq=False)
class MultiplierSymbol:
    """Rule ``k -> a(k)`` evaluated on integer frequency arrays of shape ``(d, ...)``."""

    rule: Callable[[np.ndarray], np.ndarray]
    tag: str
    real_even: bool = True
    params: dict = field(default_factory=dict)

    def __call__(self, k: np.ndarray) -> np.ndarray:
        return np.asarray(self.rule(np.asarray(k, dtype=float)))

    def __mul__(self, other: "MultiplierSymbol") -> "MultiplierSymbol":
        a, b = self, other
        return MultiplierSymbol(
            lambda k: a(k) * b(k), f"({a.tag})*({b.tag})", a.real_even and b.real_even
        )

    def __add__(self, other: "MultiplierSymbol") -> "MultiplierSymbol":
        a, b = self, other
        return MultiplierSymbol(
            lambda k: a(k) + b(k), f"({a.tag})+({b.tag})", a.real_even and b.real_even
        )

    def __pow__(self, p: int) -> "MultiplierSymbol":
        a = self
        return MultiplierSymbol(lambda k: a(k) ** p, f"({a.tag})^{p}", a.real_even)

    def on_grid(self, grid: TorusGrid, half: bool = False) -> np.ndarray:
        return _symbol_values(self, grid, half)


@lru_cache(maxsize=128)
def _symbol_values(symbol: MultiplierSymbol, grid: TorusGrid, half: bool) -> np.ndarray:
    k = grid.rfreqs if half else grid.freqs
    a = np.broadcast_to(symbol(k), k.shape[1:]).astype(complex if not symbol.real_even else float)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"symbol {symbol.tag} is not finite on the grid")
    a.flags.writeable = False
    return a


def _radius(k):
    return np.sqrt(np.sum(np.asarray(k, dtype=float) ** 2, axis=0))


@lru_cache(maxsize=None)
def identity_symbol() -> MultiplierSymbol:
    return MultiplierSymbol(lambda k: np.ones(k.shape[1:]), "identity")


@lru_cache(maxsize=None)
def chi_symbol(n: int, d: int, power: int = 1) -> MultiplierSymbol:
    return MultiplierSymbol(
        lambda k: chi_hat_radial(_radius(k) / n, d) ** power,
        f"chi_hat^{power}(k/{n})",
        params={"n": n, "power": power},
    )


@lru_cache(maxsize=None)
def theta_symbol(n: int, d: int) -> MultiplierSymbol:
    return MultiplierSymbol(
        lambda k: n**2 * (chi_hat_radial(_radius(k) / n, d) ** 4 - 1.0),
        f"theta_{n}",
        params={"n": n},
    )


@lru_cache(maxsize=None)
def resolvent_symbol(n: int, d: int, lam: float) -> MultiplierSymbol:
    th = theta_symbol(n, d)
    return MultiplierSymbol(
        lambda k: 1.0 / (-th(k) + lam), f"resolvent_{n}(lambda={lam})", params={"lam": lam}
    )


@lru_cache(maxsize=None)
def semigroup_symbol(n: int, d: int, t: float) -> MultiplierSymbol:
    th = theta_symbol(n, d)
    return MultiplierSymbol(lambda k: np.exp(t * th(k)), f"semigroup_{n}(t={t})", params={"t": t})


@lru_cache(maxsize=None)
def cutoffs(n: int) -> tuple[MultiplierSymbol, MultiplierSymbol]:
    """Large-scale projection ``P = bump(k/n)`` and its complement ``Q = 1 - P``."""
    p = MultiplierSymbol(lambda k: bump(_radius(k) / n), f"P_{n}")
    q = MultiplierSymbol(lambda k: 1.0 - bump(_radius(k) / n), f"Q_{n}")
    return p, q


# --------------------------------------------------------------------------
# spectral application


def multiply_array(values: np.ndarray, grid: TorusGrid, symbol: MultiplierSymbol) -> np.ndarray:
    """Apply ``symbol(D)`` to raw grid values (real input)."""
    axes = tuple(range(grid.d))
    if symbol.real_even:
        a = symbol.on_grid(grid, half=True)
        return np.fft.irfftn(np.fft.rfftn(values, axes=axes) * a, s=grid.shape, axes=axes)
    a = symbol.on_grid(grid)
    return np.fft.ifftn(np.fft.fftn(values, axes=axes) * a, axes=axes).real


def apply_multiplier(f: Field, a: MultiplierSymbol) -> Field:
    return Field(f.grid, multiply_array(f.values, f.grid, a))


def pi_n(f: Field, power: int = 1) -> Field:
    """Ball average ``Pi_n^power f`` computed spectrally."""
    f.grid.check_resolution()
    return apply_multiplier(f, chi_symbol(f.grid.n, f.grid.d, power))


def ball_offsets(grid: TorusGrid, radius: float | None = None) -> np.ndarray:
    """Integer grid offsets whose points lie in the closed ball of the given radius."""
    r = grid.radius if radius is None else radius
    reach = int(math.floor(r / grid.h + 1e-9))
    ax = np.arange(-reach, reach + 1)
    offs = np.array(np.meshgrid(*([ax] * grid.d), indexing="ij")).reshape(grid.d, -1).T
    keep = np.sum((offs * grid.h) ** 2, axis=1) <= r * r * (1 + 1e-12)
    return offs[keep]


def pi_n_realspace(f: Field) -> Field:
    """Ball average as the mean over grid points within the ball radius of each point."""
    grid = f.grid
    grid.check_resolution()
    offs = ball_offsets(grid)
    acc = np.zeros(grid.shape)
    for o in offs:
        acc += np.roll(f.values, shift=tuple(-o), axis=tuple(range(grid.d)))
    return Field(grid, acc / len(offs))


def a_n(f: Field) -> Field:
    f.grid.check_resolution()
    return apply_multiplier(f, theta_symbol(f.grid.n, f.grid.d))


def a_n_realspace(f: Field) -> Field:
    """``n^2 (Pi_n^4 f - f)`` assembled from four applications of the spectral ball average."""
    g = f
    for _ in range(4):
        g = pi_n(g)
    return (g - f) * float(f.grid.n**2)


def resolvent(f: Field, n: int, lam: float) -> Field:
    """``(-A_n + lambda)^{-1} f``."""
    if lam <= 0:
        raise ValueError(f"resolvent requires lambda > 0, got {lam}")
    return apply_multiplier(f, resolvent_symbol(n, f.grid.d, lam))


def semigroup(f: Field, n: int, t: float) -> Field:
    """``exp(t A_n) f``."""
    if t < 0:
        raise ValueError(f"semigroup requires t >= 0, got {t}")
    return apply_multiplier(f, semigroup_symbol(n, f.grid.d, t))
