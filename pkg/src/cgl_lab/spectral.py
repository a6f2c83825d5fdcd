"""Torus discretisation, Fourier transforms, Sobolev geometry and the bump mask.

Fields live on the d-torus ``[0, 2*pi)^d`` sampled on a uniform ``n^d`` grid.
Coefficients are normalised so that ``u(x) = sum_k uhat[k] exp(i<k, x>)``, and
only the symmetric box ``|k_i| <= n/2 - 1`` is retained (the Nyquist row is
always zero).  With this convention ``||1||_{L^2} = (2*pi)^(d/2)``.

Internally every routine works on coefficient arrays whose *trailing* ``d``
axes are the grid axes, so a leading batch axis (ensembles, Gramian columns)
is handled for free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyPlateau, FrequencyOutOfBox, GridMismatch, InvalidGrid, ValidationError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid with ``n`` points per direction on the ``d``-torus."""

    d: int
    n: int

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise InvalidGrid(f"dimension must be 1, 2 or 3, got {self.d}")
        if self.n < 8 or self.n & (self.n - 1):
            raise InvalidGrid(f"n must be a power of two >= 8, got {self.n}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n**self.d

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(-self.d, 0))

    @property
    def kmax(self) -> int:
        return self.n // 2 - 1

    @property
    def spacing(self) -> float:
        return TWO_PI / self.n

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.d

    @property
    def volume(self) -> float:
        return TWO_PI**self.d

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Integer wavenumbers, shape ``(d, n, ..., n)``, in FFT order."""
        k1 = np.fft.fftfreq(self.n, 1.0 / self.n).astype(int)
        return np.array(np.meshgrid(*([k1] * self.d), indexing="ij"))

    @cached_property
    def k2(self) -> np.ndarray:
        return np.sum(self.wavenumbers.astype(float) ** 2, axis=0)

    @cached_property
    def in_box(self) -> np.ndarray:
        return np.all(np.abs(self.wavenumbers) <= self.kmax, axis=0)

    @cached_property
    def points(self) -> np.ndarray:
        """Physical coordinates, shape ``(d, n, ..., n)``."""
        x1 = self.spacing * np.arange(self.n)
        return np.array(np.meshgrid(*([x1] * self.d), indexing="ij"))

    def mode_box(self) -> list[tuple[int, ...]]:
        """All retained frequencies as integer tuples."""
        ks = self.wavenumbers[:, self.in_box]
        return [tuple(int(v) for v in col) for col in ks.T]

    def contains(self, k: Sequence[int]) -> bool:
        return len(k) == self.d and all(abs(int(v)) <= self.kmax for v in k)

    def index(self, k: Sequence[int]) -> tuple[int, ...]:
        """Array index of frequency ``k`` in FFT layout."""
        if not self.contains(k):
            raise FrequencyOutOfBox(f"frequency {tuple(k)} outside mode box |k_i| <= {self.kmax}")
        return tuple(int(v) % self.n for v in k)


def make_grid(d: int, n: int) -> TorusGrid:
    return TorusGrid(int(d), int(n))


# ---------------------------------------------------------------------------
# raw array transforms (batch friendly)


def to_physical(coeffs: np.ndarray, grid: TorusGrid) -> np.ndarray:
    return np.fft.ifftn(coeffs, axes=grid.axes) * grid.size


def to_spectral(values: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Forward transform followed by truncation to the mode box."""
    c = np.fft.fftn(values, axes=grid.axes) / grid.size
    return c * grid.in_box


class Dealiaser:
    """Zero-padded transforms for products of band-limited fields.

    A product of ``degree`` box-limited factors is projected back onto the box
    without aliasing when the padded size exceeds ``(degree + 1) * kmax``; the
    padding factor used here is ``ceil((degree + 1) / 2)``.
    """

    def __init__(self, grid: TorusGrid, degree: int):
        self.grid = grid
        self.degree = degree
        self.factor = max(1, math.ceil((degree + 1) / 2))
        self.m = grid.n * self.factor
        km = grid.kmax
        self._base = np.r_[0 : km + 1, grid.n - km : grid.n]
        self._pad = np.r_[0 : km + 1, self.m - km : self.m]
        self._ix_base = np.ix_(*([self._base] * grid.d))
        self._ix_pad = np.ix_(*([self._pad] * grid.d))

    @cached_property
    def points(self) -> np.ndarray:
        x1 = TWO_PI * np.arange(self.m) / self.m
        return np.array(np.meshgrid(*([x1] * self.grid.d), indexing="ij"))

    def physical(self, coeffs: np.ndarray) -> np.ndarray:
        """Values of a box-limited field on the padded grid."""
        lead = coeffs.shape[: coeffs.ndim - self.grid.d]
        big = np.zeros(lead + (self.m,) * self.grid.d, dtype=complex)
        big[(Ellipsis,) + self._ix_pad] = coeffs[(Ellipsis,) + self._ix_base]
        return np.fft.ifftn(big, axes=self.grid.axes) * self.m**self.grid.d

    def project(self, values: np.ndarray) -> np.ndarray:
        """Box projection of padded-grid samples."""
        big = np.fft.fftn(values, axes=self.grid.axes) / self.m**self.grid.d
        lead = values.shape[: values.ndim - self.grid.d]
        out = np.zeros(lead + self.grid.shape, dtype=complex)
        out[(Ellipsis,) + self._ix_base] = big[(Ellipsis,) + self._ix_pad]
        return out

    def mean(self, values: np.ndarray) -> np.ndarray:
        """Exact integral of a padded-grid polynomial of degree < padded size."""
        return np.mean(values, axis=self.grid.axes) * self.grid.volume


@lru_cache(maxsize=64)
def dealiaser(grid: TorusGrid, degree: int) -> Dealiaser:
    return Dealiaser(grid, degree)


# ---------------------------------------------------------------------------
# fields


class SpectralField:
    """Immutable complex field on a :class:`TorusGrid`.

    Stored as Fourier coefficients on the mode box; ``values`` gives the
    physical samples.
    """

    __slots__ = ("grid", "_coeffs", "_values")

    def __init__(self, grid: TorusGrid, coeffs: np.ndarray):
        c = np.array(coeffs, dtype=complex)
        if c.shape != grid.shape:
            raise GridMismatch(f"coefficient shape {c.shape} does not match grid {grid.shape}")
        c *= grid.in_box
        c.setflags(write=False)
        self.grid = grid
        self._coeffs = c
        self._values = None

    # constructors -----------------------------------------------------
    @classmethod
    def from_physical(cls, grid: TorusGrid, values) -> "SpectralField":
        v = np.asarray(values, dtype=complex)
        if v.shape != grid.shape:
            raise GridMismatch(f"value shape {v.shape} does not match grid {grid.shape}")
        return cls(grid, to_spectral(v, grid))

    @classmethod
    def zeros(cls, grid: TorusGrid) -> "SpectralField":
        return cls(grid, np.zeros(grid.shape, complex))

    @classmethod
    def constant(cls, grid: TorusGrid, value: complex) -> "SpectralField":
        c = np.zeros(grid.shape, complex)
        c[(0,) * grid.d] = value
        return cls(grid, c)

    @classmethod
    def exponential(cls, grid: TorusGrid, k: Sequence[int], amp: complex = 1.0) -> "SpectralField":
        """``amp * exp(i<k, x>)``."""
        c = np.zeros(grid.shape, complex)
        c[grid.index(k)] += amp
        return cls(grid, c)

    @classmethod
    def cos_mode(cls, grid: TorusGrid, k: Sequence[int], amp: complex = 1.0) -> "SpectralField":
        c = np.zeros(grid.shape, complex)
        c[grid.index(k)] += amp / 2
        c[grid.index([-v for v in k])] += amp / 2
        return cls(grid, c)

    @classmethod
    def sin_mode(cls, grid: TorusGrid, k: Sequence[int], amp: complex = 1.0) -> "SpectralField":
        c = np.zeros(grid.shape, complex)
        c[grid.index(k)] += amp / 2j
        c[grid.index([-v for v in k])] -= amp / 2j
        return cls(grid, c)

    @classmethod
    def random(cls, grid: TorusGrid, rng, kcut: int | None = None, real: bool = False) -> "SpectralField":
        """Random band-limited field with decaying spectrum (tests, demos)."""
        kcut = grid.kmax if kcut is None else kcut
        mask = np.all(np.abs(grid.wavenumbers) <= kcut, axis=0)
        c = (rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)) * mask
        c /= 1.0 + grid.k2
        f = cls(grid, c)
        return f.real_part() if real else f

    # accessors --------------------------------------------------------
    @property
    def coeffs(self) -> np.ndarray:
        return self._coeffs

    @property
    def values(self) -> np.ndarray:
        if self._values is None:
            v = to_physical(self._coeffs, self.grid)
            v.setflags(write=False)
            self._values = v
        return self._values

    def coefficient(self, k: Sequence[int]) -> complex:
        return complex(self._coeffs[self.grid.index(k)])

    def is_real(self, tol: float = 1e-12) -> bool:
        flipped = np.conj(_negate_frequencies(self._coeffs, self.grid))
        scale = max(np.max(np.abs(self._coeffs)), 1e-300)
        return bool(np.max(np.abs(self._coeffs - flipped)) <= tol * scale)

    def real_part(self) -> "SpectralField":
        return SpectralField(self.grid, 0.5 * (self._coeffs + np.conj(_negate_frequencies(self._coeffs, self.grid))))

    def imag_part(self) -> "SpectralField":
        return SpectralField(self.grid, -0.5j * (self._coeffs - np.conj(_negate_frequencies(self._coeffs, self.grid))))

    def conj(self) -> "SpectralField":
        return SpectralField(self.grid, np.conj(_negate_frequencies(self._coeffs, self.grid)))

    # arithmetic -------------------------------------------------------
    def _check(self, other: "SpectralField"):
        if not isinstance(other, SpectralField):
            return NotImplemented
        if other.grid != self.grid:
            raise GridMismatch("fields live on different grids")
        return None

    def __add__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return SpectralField(self.grid, self._coeffs + other._coeffs)

    def __sub__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return SpectralField(self.grid, self._coeffs - other._coeffs)

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        return SpectralField(self.grid, self._coeffs * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / scalar)

    def __neg__(self):
        return SpectralField(self.grid, -self._coeffs)

    def __repr__(self):
        return f"SpectralField(d={self.grid.d}, n={self.grid.n}, L2={sobolev_norm(self, 0):.4g})"


def _negate_frequencies(c: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Array with ``out[k] = c[-k]`` (FFT layout)."""
    out = c
    for ax in grid.axes:
        out = np.roll(np.flip(out, axis=ax), 1, axis=ax)
    return out


def _same_grid(u: SpectralField, v: SpectralField) -> None:
    if u.grid != v.grid:
        raise GridMismatch("fields live on different grids")


def real_inner_product(u: SpectralField, v: SpectralField) -> float:
    """``Re int u conj(v) dx`` by the uniform-grid rule."""
    _same_grid(u, v)
    return float(np.real(np.sum(u.values * np.conj(v.values))) * u.grid.cell_volume)


def coeff_inner(a: np.ndarray, b: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Real L^2 product of coefficient arrays (batched over leading axes)."""
    return np.real(np.sum(a * np.conj(b), axis=grid.axes)) * grid.volume


def coeff_sobolev_norm(c: np.ndarray, grid: TorusGrid, s: float) -> np.ndarray:
    w = (1.0 + grid.k2) ** s
    return np.sqrt(np.sum(w * np.abs(c) ** 2, axis=grid.axes) * grid.volume)


def sobolev_norm(u: SpectralField, s: float) -> float:
    return float(coeff_sobolev_norm(u.coeffs, u.grid, s))


def gradient_norm_sq(c: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """``||grad u||^2_{L^2}``."""
    return np.sum(grid.k2 * np.abs(c) ** 2, axis=grid.axes) * grid.volume


def frequency_mask(grid: TorusGrid, freqs: Iterable[Sequence[int]]) -> np.ndarray:
    """Boolean array selecting ``+-freqs`` in FFT layout."""
    m = np.zeros(grid.shape, bool)
    for k in freqs:
        k = tuple(int(v) for v in k)
        if len(k) != grid.d:
            raise FrequencyOutOfBox(f"frequency {k} has wrong dimension for d={grid.d}")
        m[grid.index(k)] = True
        m[grid.index(tuple(-v for v in k))] = True
    return m


def project_subspace(u: SpectralField, freqs: Iterable[Sequence[int]]) -> SpectralField:
    """Orthogonal projection onto span{cos<l,x>, sin<l,x>, their i-multiples : l in freqs}."""
    return SpectralField(u.grid, u.coeffs * frequency_mask(u.grid, freqs))


# ---------------------------------------------------------------------------
# localisation mask


def _smooth_step(t: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.asarray(t, dtype=float)

    def f(s):
        out = np.zeros_like(s)
        pos = s > 0
        out[pos] = np.exp(-1.0 / s[pos])
        return out

    a, b = f(t), f(1.0 - t)
    return a / (a + b)


@dataclass(frozen=True)
class BumpProfile:
    """Description of the cut-off ``chi``.

    ``kind="constant"`` gives ``chi == M``.  ``kind="plateau"`` gives ``chi == M``
    on the box ``prod_i [a_i, b_i]`` decaying smoothly to zero over a layer
    of thickness ``width`` around it.  A single interval is reused for every
    direction.
    """

    kind: str = "plateau"
    plateau: tuple = ((np.pi / 2, 3 * np.pi / 2),)
    width: float = 0.3
    M: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "plateau"):
            raise ValidationError(f"unknown mask kind {self.kind!r}")
        if self.M <= 0:
            raise ValidationError("mask maximum M must be positive")
        if self.kind == "plateau":
            if self.width <= 0:
                raise ValidationError("transition width must be positive")
            for a, b in self.plateau:
                if b < a or (b - a) + 2 * self.width > TWO_PI:
                    raise ValidationError(f"plateau [{a}, {b}] with width {self.width} does not fit the torus")

    def intervals(self, d: int) -> list[tuple[float, float]]:
        iv = [tuple(map(float, p)) for p in self.plateau]
        if len(iv) == 1:
            iv = iv * d
        if len(iv) != d:
            raise ValidationError(f"plateau needs 1 or {d} intervals, got {len(iv)}")
        return iv

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """``chi`` at coordinates of shape ``(d, ...)``."""
        d = points.shape[0]
        if self.kind == "constant":
            return np.full(points.shape[1:], float(self.M))
        out = np.full(points.shape[1:], float(self.M))
        w = self.width
        for i, (a, b) in enumerate(self.intervals(d)):
            y = np.mod(points[i] - (a - w), TWO_PI)
            out = out * _smooth_step(y / w) * _smooth_step((b - a + 2 * w - y) / w)
        return out


class LocalizationMask:
    """Sampled cut-off ``chi`` with its plateau and discrete interior.

    ``plateau`` marks grid points with ``chi == M``; ``interior`` keeps the
    plateau points whose 2d grid neighbours are all in the plateau.
    """

    def __init__(self, grid: TorusGrid, profile: BumpProfile):
        self.grid = grid
        self.profile = profile
        self.M = float(profile.M)
        self.values = profile.evaluate(grid.points)
        self.values.setflags(write=False)
        self.plateau = self.values == self.M
        if not self.plateau.any():
            raise EmptyPlateau("no grid point lies on the plateau of chi")
        inner = self.plateau.copy()
        for ax in range(grid.d):
            inner &= np.roll(self.plateau, 1, axis=ax) & np.roll(self.plateau, -1, axis=ax)
        self.interior = inner
        self._fine = {}

    @property
    def is_constant(self) -> bool:
        return self.profile.kind == "constant"

    @cached_property
    def chi(self) -> SpectralField:
        return SpectralField.from_physical(self.grid, self.values)

    @cached_property
    def spectral_tail(self) -> float:
        """Relative L^2 weight of chi's Fourier content beyond half the mode box."""
        c = np.fft.fftn(self.values) / self.grid.size
        far = np.any(np.abs(self.grid.wavenumbers) > self.grid.kmax // 2, axis=0)
        total = np.sum(np.abs(c) ** 2)
        return float(np.sqrt(np.sum(np.abs(c[far]) ** 2) / total))

    def _fine_values(self, dz: Dealiaser, power: int) -> np.ndarray:
        key = (dz.m, power)
        if key not in self._fine:
            self._fine[key] = self.profile.evaluate(dz.points) ** power
        return self._fine[key]

    def multiply(self, coeffs: np.ndarray, power: int = 1) -> np.ndarray:
        """Box projection of ``chi**power * u`` for coefficient arrays."""
        if self.is_constant:
            return coeffs * self.M**power
        dz = dealiaser(self.grid, 3)
        return dz.project(self._fine_values(dz, power) * dz.physical(coeffs))

    def apply(self, u: SpectralField, power: int = 1) -> SpectralField:
        return SpectralField(u.grid, self.multiply(u.coeffs, power))


def make_mask(grid: TorusGrid, profile: BumpProfile | dict | None = None) -> LocalizationMask:
    if profile is None:
        profile = BumpProfile()
    elif isinstance(profile, dict):
        profile = BumpProfile(**profile)
    return LocalizationMask(grid, profile)


def constant_mask(grid: TorusGrid, M: float = 1.0) -> LocalizationMask:
    return LocalizationMask(grid, BumpProfile(kind="constant", M=M))
