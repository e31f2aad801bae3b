"""Periodic fields on the unit cell [0,1)^3 and their spectral kernels.

Fields are stored as normalized Fourier coefficients ``c_k = fftn(values) / N``
so that the k=0 coefficient is the cell mean and the node mean-square norm
equals the coefficient sum of squares. Vector fields have shape ``(3, n, n, n)``
and symmetric strain fields use the orthonormal Mandel layout ``(6, n, n, n)``
with ordering (11, 22, 33, 23, 13, 12) and off-diagonal entries scaled by sqrt(2),
so the Frobenius product of two strains is the plain dot product of their
Mandel vectors.

Low-level kernels take raw arrays with arbitrary leading batch axes; the
``SpectralField``/``StrainField`` wrappers are what the public operations use.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .errors import GridMismatch, InvalidInput

SQRT2 = np.sqrt(2.0)
MANDEL_PAIRS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))
MANDEL_WEIGHTS = np.array([1.0, 1.0, 1.0, SQRT2, SQRT2, SQRT2])
AXES = (-3, -2, -1)
FFT_WORKERS = 1


@dataclass(frozen=True)
class CellGrid:
    """Uniform n^3 lattice on the unit torus with wavenumbers -n/2..n/2-1."""

    n_per_axis: int

    def __post_init__(self):
        n = self.n_per_axis
        if not isinstance(n, (int, np.integer)) or n < 4 or n % 2:
            raise InvalidInput(f"n_per_axis must be an even integer >= 4, got {n!r}")

    @property
    def shape(self) -> tuple[int, int, int]:
        n = self.n_per_axis
        return (n, n, n)

    @property
    def size(self) -> int:
        return self.n_per_axis ** 3

    @cached_property
    def nodes(self) -> np.ndarray:
        """Node coordinates, shape (3, n, n, n)."""
        t = np.arange(self.n_per_axis) / self.n_per_axis
        return np.array(np.meshgrid(t, t, t, indexing="ij"))

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Integer wavenumbers per axis in FFT order."""
        return np.fft.fftfreq(self.n_per_axis, d=1.0 / self.n_per_axis).round().astype(int)

    @cached_property
    def kvec(self) -> np.ndarray:
        """Integer wavevectors, shape (3, n, n, n)."""
        k = self.wavenumbers
        return np.array(np.meshgrid(k, k, k, indexing="ij"))

    @cached_property
    def nyquist_mask(self) -> np.ndarray:
        """True where any wavenumber component equals -n/2."""
        return np.any(self.kvec == -self.n_per_axis // 2, axis=0)

    @cached_property
    def active_mask(self) -> np.ndarray:
        """Modes carried by the discrete trial space (Nyquist planes excluded)."""
        return ~self.nyquist_mask

    @cached_property
    def deriv_wavevector(self) -> np.ndarray:
        """Real vector 2*pi*k with the Nyquist component zeroed, shape (3, n, n, n)."""
        k = self.kvec.astype(float)
        k[k == -self.n_per_axis // 2] = 0.0
        return 2.0 * np.pi * k

    def shifted_wavevector(self, chi) -> np.ndarray:
        """2*pi*k + chi, the multiplier (divided by i) of sym-grad + i X_chi."""
        chi = np.asarray(chi, dtype=float).reshape(3, 1, 1, 1)
        return self.deriv_wavevector + chi

    def fft(self, values: np.ndarray) -> np.ndarray:
        return sfft.fftn(values, axes=AXES, norm="forward", workers=FFT_WORKERS)

    def ifft(self, coeffs: np.ndarray) -> np.ndarray:
        return sfft.ifftn(coeffs, axes=AXES, norm="forward", workers=FFT_WORKERS)

    def check(self, other: "CellGrid") -> None:
        if other.n_per_axis != self.n_per_axis:
            raise GridMismatch(f"grid {other.n_per_axis}^3 does not match {self.n_per_axis}^3")


# ---------------------------------------------------------------- raw kernels

def sym_outer(u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Mandel vector of sym(u w^T) for 3-vector arrays u, w (component axis -4)."""
    u0, u1, u2 = u[..., 0, :, :, :], u[..., 1, :, :, :], u[..., 2, :, :, :]
    w0, w1, w2 = w[..., 0, :, :, :], w[..., 1, :, :, :], w[..., 2, :, :, :]
    return np.stack(
        [
            u0 * w0,
            u1 * w1,
            u2 * w2,
            (u1 * w2 + u2 * w1) / SQRT2,
            (u0 * w2 + u2 * w0) / SQRT2,
            (u0 * w1 + u1 * w0) / SQRT2,
        ],
        axis=-4,
    )


def sym_outer_adjoint(e: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Adjoint of ``u -> sym_outer(u, w)`` for the Frobenius/Euclidean pairing."""
    wc = np.conj(w)
    w0, w1, w2 = wc[..., 0, :, :, :], wc[..., 1, :, :, :], wc[..., 2, :, :, :]
    e0, e1, e2 = e[..., 0, :, :, :], e[..., 1, :, :, :], e[..., 2, :, :, :]
    e3, e4, e5 = (e[..., i, :, :, :] / SQRT2 for i in (3, 4, 5))
    return np.stack(
        [
            e0 * w0 + e5 * w1 + e4 * w2,
            e5 * w0 + e1 * w1 + e3 * w2,
            e4 * w0 + e3 * w1 + e2 * w2,
        ],
        axis=-4,
    )


def mandel_to_matrix(e: np.ndarray) -> np.ndarray:
    """Mandel vectors (axis -4 of length 6) to symmetric 3x3 matrices (axes -5,-4)."""
    out = np.empty(e.shape[:-4] + (3, 3) + e.shape[-3:], dtype=e.dtype)
    for idx, (i, j) in enumerate(MANDEL_PAIRS):
        val = e[..., idx, :, :, :] / MANDEL_WEIGHTS[idx]
        out[..., i, j, :, :, :] = val
        out[..., j, i, :, :, :] = val
    return out


def matrix_to_mandel(m: np.ndarray) -> np.ndarray:
    """Symmetric part of 3x3 matrices (axes -5,-4) as Mandel vectors."""
    return np.stack(
        [MANDEL_WEIGHTS[idx] * 0.5 * (m[..., i, j, :, :, :] + m[..., j, i, :, :, :])
         for idx, (i, j) in enumerate(MANDEL_PAIRS)],
        axis=-4,
    )


def sym_to_mandel_small(m: np.ndarray) -> np.ndarray:
    """Mandel vector of a single symmetric 3x3 matrix."""
    m = np.asarray(m)
    return np.array([MANDEL_WEIGHTS[idx] * 0.5 * (m[i, j] + m[j, i])
                     for idx, (i, j) in enumerate(MANDEL_PAIRS)])


def mandel_to_sym_small(e: np.ndarray) -> np.ndarray:
    out = np.empty((3, 3), dtype=np.result_type(e, float))
    for idx, (i, j) in enumerate(MANDEL_PAIRS):
        out[i, j] = out[j, i] = e[idx] / MANDEL_WEIGHTS[idx]
    return out


def inner(a: np.ndarray, b: np.ndarray) -> complex:
    """L^2(Y) inner product <a, b> = integral of a . conj(b), from coefficients."""
    return complex(np.vdot(b, a))


def batch_inner(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-batch inner products over the last four axes."""
    return np.einsum("...ixyz,...ixyz->...", a, np.conj(b))


def batch_norm(a: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("...ixyz,...ixyz->...", a.real, a.real)
                   + np.einsum("...ixyz,...ixyz->...", a.imag, a.imag))


# ---------------------------------------------------------------- field types

@dataclass(frozen=True, eq=False)
class _GridField:
    grid: CellGrid
    coeffs: np.ndarray
    representation: str = field(default="spectral")

    ncomp = 0

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != (self.ncomp,) + self.grid.shape:
            raise GridMismatch(f"expected shape {(self.ncomp,) + self.grid.shape}, got {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def from_values(cls, grid: CellGrid, values):
        return cls(grid, grid.fft(np.asarray(values, dtype=complex)), "physical")

    @classmethod
    def from_coeffs(cls, grid: CellGrid, coeffs):
        return cls(grid, coeffs, "spectral")

    @cached_property
    def values(self) -> np.ndarray:
        v = self.grid.ifft(self.coeffs)
        v.setflags(write=False)
        return v

    def mean(self) -> np.ndarray:
        return self.coeffs[(slice(None), 0, 0, 0)].copy()

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def node_norm(self) -> float:
        """Root node mean-square of the physical values."""
        return float(np.sqrt(np.mean(np.abs(self.values) ** 2) * self.ncomp))

    def inner(self, other: "_GridField") -> complex:
        self.grid.check(other.grid)
        return inner(self.coeffs, other.coeffs)

    def _like(self, coeffs):
        return type(self)(self.grid, coeffs)

    def __add__(self, other):
        self.grid.check(other.grid)
        return self._like(self.coeffs + other.coeffs)

    def __sub__(self, other):
        self.grid.check(other.grid)
        return self._like(self.coeffs - other.coeffs)

    def __mul__(self, alpha):
        return self._like(self.coeffs * alpha)

    __rmul__ = __mul__

    def __neg__(self):
        return self._like(-self.coeffs)


class SpectralField(_GridField):
    """Complex 3-vector field on the cell."""

    ncomp = 3

    @classmethod
    def constant(cls, grid: CellGrid, c) -> "SpectralField":
        coeffs = np.zeros((3,) + grid.shape, dtype=complex)
        coeffs[:, 0, 0, 0] = c
        return cls(grid, coeffs)

    @classmethod
    def zeros(cls, grid: CellGrid) -> "SpectralField":
        return cls(grid, np.zeros((3,) + grid.shape, dtype=complex))


class StrainField(_GridField):
    """Complex symmetric 3x3 field, stored in Mandel form (symmetric by construction)."""

    ncomp = 6

    def matrix_values(self) -> np.ndarray:
        """Nodal 3x3 matrices, shape (3, 3, n, n, n)."""
        return mandel_to_matrix(self.values)

    @classmethod
    def from_matrix_values(cls, grid: CellGrid, m) -> "StrainField":
        return cls.from_values(grid, matrix_to_mandel(np.asarray(m, dtype=complex)))


def random_field(grid: CellGrid, rng: np.random.Generator, kmax: int | None = None,
                 mean_zero: bool = False) -> SpectralField:
    """Random complex field with coefficients on active modes, |k|_inf <= kmax."""
    c = rng.standard_normal((3,) + grid.shape) + 1j * rng.standard_normal((3,) + grid.shape)
    mask = grid.active_mask.copy()
    if kmax is not None:
        mask &= np.max(np.abs(grid.kvec), axis=0) <= kmax
    c = c * mask
    if mean_zero:
        c[:, 0, 0, 0] = 0.0
    return SpectralField(grid, c / max(np.linalg.norm(c), 1e-300))


def random_strain(grid: CellGrid, rng: np.random.Generator) -> StrainField:
    c = rng.standard_normal((6,) + grid.shape) + 1j * rng.standard_normal((6,) + grid.shape)
    return StrainField(grid, c * grid.active_mask / np.sqrt(c.size))


# ---------------------------------------------------------------- operations

def sym_gradient(u: SpectralField) -> StrainField:
    """sym(grad u) via the 2*pi*i*k multipliers (Nyquist derivative set to zero)."""
    g = u.grid
    return StrainField(g, sym_outer(u.coeffs, 1j * g.deriv_wavevector))


def sym_gradient_adjoint(s: StrainField) -> SpectralField:
    """L^2 adjoint of ``sym_gradient``."""
    g = s.grid
    return SpectralField(g, sym_outer_adjoint(s.coeffs, 1j * g.deriv_wavevector))


def x_chi_apply(u: SpectralField, chi) -> StrainField:
    """Nodewise sym(u chi^T)."""
    chi = np.asarray(chi, dtype=float).reshape(3, 1, 1, 1)
    return StrainField(u.grid, sym_outer(u.coeffs, np.broadcast_to(chi, (3,) + u.grid.shape)))


def fiber_strain(u: SpectralField, chi) -> StrainField:
    """(sym grad + i X_chi) u."""
    g = u.grid
    return StrainField(g, sym_outer(u.coeffs, 1j * g.shifted_wavevector(chi)))


@dataclass(frozen=True)
class FieldNorms:
    l2: float
    h1: float
    fiber_h1: float


def gradient_norm_sq(coeffs: np.ndarray, grid: CellGrid, chi=None) -> np.ndarray:
    """||(grad + i chi) u||^2 (full gradient) from coefficients; chi=None means chi=0."""
    q = grid.deriv_wavevector if chi is None else grid.shifted_wavevector(chi)
    q2 = np.sum(q ** 2, axis=0)
    return np.einsum("...ixyz,xyz->...", np.abs(coeffs) ** 2, q2)


def norms(u: SpectralField, chi=(0.0, 0.0, 0.0)) -> FieldNorms:
    l2sq = float(np.sum(np.abs(u.coeffs) ** 2))
    h1sq = l2sq + float(gradient_norm_sq(u.coeffs, u.grid))
    fib = fiber_strain(u, chi).norm()
    return FieldNorms(np.sqrt(l2sq), np.sqrt(h1sq), fib)
