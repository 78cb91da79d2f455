"""Periodic-box Fourier representation of scalar and vector fields.

Coefficients are stored as full complex arrays of shape ``(n,) * d`` in
numpy FFT order, normalized so that the zero coefficient is the spatial
mean. Nonlinear products are evaluated on a zero-padded grid through real
FFTs and truncated back to the resolved band ``|j_i| < n/2`` (the Nyquist
plane is dropped by every product and odd derivative).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

DEALIAS_RULES = ("one-half", "two-thirds", "none")


class NegativeOrderOnNonzeroMean(ValueError):
    """A negative-order multiplier was applied to a field with nonzero mean."""


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on ``[0, L)^d``.

    Parameters
    ----------
    d : int
        Spatial dimension, 2 or 3.
    n : int
        Points per axis; even and at least 8.
    box_length : float
        Side length ``L`` of the box.
    dealias : str
        ``"one-half"`` (2x padding), ``"two-thirds"`` (3/2 padding) or ``"none"``.
    """

    d: int
    n: int
    box_length: float = 2 * math.pi
    dealias: str = "one-half"

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError(f"d must satisfy d ∈ {{2,3}}, got {self.d}")
        if int(self.n) != self.n or self.n < 8 or self.n % 2:
            raise ValueError(f"n must be an even integer >= 8, got {self.n}")
        if not (math.isfinite(self.box_length) and self.box_length > 0):
            raise ValueError(f"box_length must be finite and positive, got {self.box_length}")
        if self.dealias not in DEALIAS_RULES:
            raise ValueError(f"dealias must be one of {DEALIAS_RULES}, got {self.dealias!r}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n**self.d

    @property
    def volume(self) -> float:
        return self.box_length**self.d

    @property
    def cell_volume(self) -> float:
        return (self.box_length / self.n) ** self.d

    @property
    def k_min(self) -> float:
        return 2 * math.pi / self.box_length

    @cached_property
    def index(self) -> tuple[np.ndarray, ...]:
        """Integer mode indices per axis, broadcastable to ``shape``."""
        j = np.fft.fftfreq(self.n, 1.0 / self.n).astype(int)
        out = []
        for axis in range(self.d):
            s = [1] * self.d
            s[axis] = self.n
            out.append(j.reshape(s))
        return tuple(out)

    @cached_property
    def k(self) -> tuple[np.ndarray, ...]:
        """Wavenumber components ``(2π/L) j``, broadcastable to ``shape``."""
        return tuple(self.k_min * j.astype(float) for j in self.index)

    @cached_property
    def k_odd(self) -> tuple[np.ndarray, ...]:
        # Nyquist entries zeroed so first derivatives keep fields real
        h = self.n // 2
        return tuple(np.where(j == -h, 0.0, kk) for j, kk in zip(self.index, self.k))

    @cached_property
    def k_squared(self) -> np.ndarray:
        return sum(np.broadcast_to(kk, self.shape) ** 2 for kk in self.k)

    @cached_property
    def k_magnitude(self) -> np.ndarray:
        return np.sqrt(self.k_squared)

    @cached_property
    def resolved(self) -> np.ndarray:
        """Boolean mask of modes with every ``|j_i| < n/2``."""
        h = self.n // 2
        mask = np.ones(self.shape, dtype=bool)
        for j in self.index:
            mask &= j != -h
        return mask

    @cached_property
    def k_max(self) -> float:
        return float(self.k_magnitude[self.resolved].max())

    def padded_size(self, degree: int = 2) -> int:
        if self.dealias == "none":
            return self.n
        if self.dealias == "two-thirds":
            m = math.ceil(1.5 * self.n)
        else:
            m = max(2 * self.n, math.ceil((degree + 1) * self.n / 2))
        return m + (m % 2)

    def coordinates(self) -> tuple[np.ndarray, ...]:
        x = np.arange(self.n) * (self.box_length / self.n)
        return tuple(np.meshgrid(*([x] * self.d), indexing="ij"))


def make_grid(d: int, n: int, L: float = 2 * math.pi, dealias: str = "one-half") -> GridSpec:
    return GridSpec(d=d, n=n, box_length=float(L), dealias=dealias)


# ---------------------------------------------------------------------------
# raw-array transforms (trailing d axes are spatial, leading axes are batch)


def _axes(d):
    return tuple(range(-d, 0))


def _coarse_fine(n, m):
    h = n // 2
    coarse = np.r_[0:h, h + 1 : n]
    fine = np.r_[0:h, m - h + 1 : m]
    return coarse, fine


def to_physical(coeffs: np.ndarray, grid: GridSpec, size: int | None = None) -> np.ndarray:
    """Sample coefficients on a grid of ``size`` points per axis (default ``n``)."""
    d, n = grid.d, grid.n
    m = n if size is None else size
    if m == n:
        vals = sfft.ifftn(coeffs, axes=_axes(d)).real
        return vals * float(n**d)
    h = n // 2
    lead = coeffs.shape[:-d]
    coarse, fine = _coarse_fine(n, m)
    half = np.zeros(lead + (m,) * (d - 1) + (m // 2 + 1,), dtype=complex)
    src = np.ix_(*([coarse] * (d - 1) + [np.arange(h)]))
    dst = np.ix_(*([fine] * (d - 1) + [np.arange(h)]))
    half[(Ellipsis,) + dst] = coeffs[(Ellipsis,) + src]
    return sfft.irfftn(half, s=(m,) * d, axes=_axes(d)) * float(m**d)


def _half_to_full(half: np.ndarray, d: int, n: int) -> np.ndarray:
    h = n // 2
    full = np.zeros(half.shape[:-1] + (n,), dtype=complex)
    full[..., : h + 1] = half
    tail = half[..., 1:h][..., ::-1]
    neg = (-np.arange(n)) % n
    for axis in range(-d, -1):
        tail = np.take(tail, neg, axis=axis)
    full[..., h + 1 :] = np.conj(tail)
    return full


def to_spectral(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Inverse of :func:`to_physical` for real samples on any ``m >= n`` grid.

    When ``m > n`` only the resolved band is kept.
    """
    d, n = grid.d, grid.n
    m = values.shape[-1]
    if m == n:
        return sfft.fftn(values, axes=_axes(d)) / float(n**d)
    h = n // 2
    spec = sfft.rfftn(values, axes=_axes(d)) / float(m**d)
    coarse, fine = _coarse_fine(n, m)
    half = np.zeros(values.shape[:-d] + (n,) * (d - 1) + (h + 1,), dtype=complex)
    src = np.ix_(*([fine] * (d - 1) + [np.arange(h)]))
    dst = np.ix_(*([coarse] * (d - 1) + [np.arange(h)]))
    half[(Ellipsis,) + dst] = spec[(Ellipsis,) + src]
    return _half_to_full(half, d, n)


def truncate(coeffs: np.ndarray, grid: GridSpec) -> np.ndarray:
    return np.where(grid.resolved, coeffs, 0.0)


def hermitian_defect(coeffs: np.ndarray, d: int) -> float:
    """Relative size of ``c_{-k} - conj(c_k)``."""
    flipped = coeffs
    n = coeffs.shape[-1]
    neg = (-np.arange(n)) % n
    for axis in range(-d, 0):
        flipped = np.take(flipped, neg, axis=axis)
    scale = np.abs(coeffs).max()
    if scale == 0:
        return 0.0
    return float(np.abs(flipped - np.conj(coeffs)).max() / scale)


def lambda_multiplier(grid: GridSpec, s: float) -> np.ndarray:
    """Symbol ``|k|^s`` with the zero mode set to 0 (or 1 when ``s == 0``)."""
    if s == 0:
        return np.ones(grid.shape)
    kmag = grid.k_magnitude
    with np.errstate(divide="ignore"):
        mult = np.where(kmag > 0, kmag, 1.0) ** s
    mult = mult.copy()
    mult[(0,) * grid.d] = 0.0
    return mult


# ---------------------------------------------------------------------------
# field types


@dataclass(frozen=True, eq=False)
class SpectralScalar:
    grid: GridSpec
    coeffs: np.ndarray

    def __post_init__(self):
        if self.coeffs.shape != self.grid.shape:
            raise GridMismatch(
                f"coefficient array has shape {self.coeffs.shape}, grid expects {self.grid.shape}"
            )

    def physical(self) -> np.ndarray:
        return to_physical(self.coeffs, self.grid)

    @property
    def mean(self) -> complex:
        return self.coeffs[(0,) * self.grid.d]

    def coeff_norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.coeffs) ** 2)))

    def _check(self, other):
        if isinstance(other, SpectralScalar) and other.grid != self.grid:
            raise GridMismatch("fields live on different grids")

    def __add__(self, other):
        self._check(other)
        c = other.coeffs if isinstance(other, SpectralScalar) else other
        return SpectralScalar(self.grid, self.coeffs + c)

    def __sub__(self, other):
        self._check(other)
        c = other.coeffs if isinstance(other, SpectralScalar) else other
        return SpectralScalar(self.grid, self.coeffs - c)

    def __mul__(self, a):
        if isinstance(a, SpectralScalar):
            return pointwise_product(self, a)
        return SpectralScalar(self.grid, self.coeffs * a)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralScalar(self.grid, -self.coeffs)


@dataclass(frozen=True, eq=False)
class SpectralVector:
    components: tuple[SpectralScalar, ...]

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        grids = {c.grid for c in self.components}
        if len(grids) != 1:
            raise GridMismatch("vector components must share one grid")
        if len(self.components) != self.grid.d:
            raise GridMismatch(f"expected {self.grid.d} components, got {len(self.components)}")

    @property
    def grid(self) -> GridSpec:
        return self.components[0].grid

    def __getitem__(self, i) -> SpectralScalar:
        return self.components[i]

    def __len__(self):
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    def stack(self) -> np.ndarray:
        return np.stack([c.coeffs for c in self.components])

    @classmethod
    def from_array(cls, grid: GridSpec, arr: np.ndarray) -> "SpectralVector":
        return cls(tuple(SpectralScalar(grid, a) for a in arr))


# ---------------------------------------------------------------------------
# operations


def transform_forward(samples: np.ndarray, grid: GridSpec) -> SpectralScalar:
    samples = np.asarray(samples, dtype=float)
    if samples.shape != grid.shape:
        raise GridMismatch(f"samples have shape {samples.shape}, grid expects {grid.shape}")
    return SpectralScalar(grid, to_spectral(samples, grid))


def transform_inverse(f: SpectralScalar) -> np.ndarray:
    return to_physical(f.coeffs, f.grid)


def partial_derivative(f: SpectralScalar, axis: int) -> SpectralScalar:
    """Derivative along ``axis`` (0-based)."""
    if not 0 <= axis < f.grid.d:
        raise IndexError(f"axis {axis} out of range for d={f.grid.d}")
    return SpectralScalar(f.grid, 1j * f.grid.k_odd[axis] * f.coeffs)


def apply_lambda(f: SpectralScalar, s: float) -> SpectralScalar:
    """Fourier multiplier ``|k|^s``; the zero mode is mapped to 0 for ``s != 0``."""
    if s < 0:
        norm = f.coeff_norm()
        if abs(f.mean) > 1e-13 * norm:
            raise NegativeOrderOnNonzeroMean(
                f"Λ^{s} needs a mean-zero field, |mean| = {abs(f.mean):.3e}"
            )
    return SpectralScalar(f.grid, f.coeffs * lambda_multiplier(f.grid, s))


def multiply(*factors: SpectralScalar) -> SpectralScalar:
    """Dealiased product of any number of fields, truncated to the resolved band."""
    grid = factors[0].grid
    for f in factors[1:]:
        if f.grid != grid:
            raise GridMismatch("fields live on different grids")
    m = grid.padded_size(len(factors))
    prod = to_physical(factors[0].coeffs, grid, m)
    for f in factors[1:]:
        prod = prod * to_physical(f.coeffs, grid, m)
    return SpectralScalar(grid, to_spectral(prod, grid))


def pointwise_product(f: SpectralScalar, g: SpectralScalar, order: int = 2) -> SpectralScalar:
    """Product ``f g`` computed on a grid padded for nonlinearity ``order``."""
    if f.grid != g.grid:
        raise GridMismatch("fields live on different grids")
    grid = f.grid
    m = grid.padded_size(order)
    prod = to_physical(f.coeffs, grid, m) * to_physical(g.coeffs, grid, m)
    return SpectralScalar(grid, to_spectral(prod, grid))


def inner_product_l2(f: SpectralScalar, g: SpectralScalar) -> float:
    """``∫ f g dx`` over the box via Parseval."""
    if f.grid != g.grid:
        raise GridMismatch("fields live on different grids")
    return float(f.grid.volume * np.sum((f.coeffs * np.conj(g.coeffs)).real))


def l2_coeffs(coeffs: np.ndarray, grid: GridSpec) -> float:
    """``‖f‖²_{L²}`` from raw coefficients (batch axes are summed too)."""
    return float(grid.volume * np.sum(np.abs(coeffs) ** 2))
