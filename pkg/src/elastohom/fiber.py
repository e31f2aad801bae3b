"""Matrix-free fiber operator (sym grad + i X_chi)^* A (sym grad + i X_chi) and its solvers.

The discrete trial space is the span of Fourier modes with every wavenumber
component strictly inside (-n/2, n/2); the Nyquist planes carry no derivative
and would otherwise add spurious near-kernel modes, so every operator here
projects them out on input and output.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from .coefficients import ElasticityTensorField
from .errors import EmptySpectrumList, IncompatibleRHS, InvalidInput, NoConvergence
from .grid import (
    CellGrid,
    SpectralField,
    StrainField,
    batch_inner,
    batch_norm,
    sym_outer,
    sym_outer_adjoint,
)

COMPAT_RTOL = 1e-10


@dataclass(frozen=True)
class SolverConfig:
    cg_tol: float = 1e-10
    max_iter: int = 5000
    preconditioner: str = "constant_coefficient"

    def __post_init__(self):
        if not 0 < self.cg_tol <= 1e-4:
            raise InvalidInput(f"cg_tol must lie in (0, 1e-4], got {self.cg_tol}")
        if self.max_iter < 1:
            raise InvalidInput("max_iter must be >= 1")
        if self.preconditioner not in ("none", "constant_coefficient"):
            raise InvalidInput(f"unknown preconditioner {self.preconditioner!r}")


@dataclass
class SolveInfo:
    iterations: int = 0
    residual: float = 0.0


# ---------------------------------------------------------------- kernels

def unit_vector_outer(q: np.ndarray) -> np.ndarray:
    """Real 6x3 map c -> Mandel(sym(c q^T)) per mode, shape (3, 6, n, n, n) (column first)."""
    cols = []
    for a in range(3):
        e = np.zeros((3,) + q.shape[1:])
        e[a] = 1.0
        cols.append(sym_outer(e, q))
    return np.array(cols)


def symbol_matrix(mandel0: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Per-mode 3x3 symbol B(q)^T A0 B(q) of the constant-coefficient operator, (3,3,n,n,n)."""
    b = unit_vector_outer(q)
    return np.einsum("aIxyz,IJ,bJxyz->abxyz", b, mandel0, b)


def contract(mandel: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Nodal Mandel contraction sum_J m[I,J] e[..., J] for batched physical strains."""
    out = np.empty(np.broadcast_shapes(e.shape, (6,) + mandel.shape[2:]), dtype=np.result_type(e, mandel))
    for i in range(6):
        acc = mandel[i, 0] * e[..., 0, :, :, :]
        for j in range(1, 6):
            acc = acc + mandel[i, j] * e[..., j, :, :, :]
        out[..., i, :, :, :] = acc
    return out


class CellKernels:
    """Coefficient-space building blocks for a fixed tensor field.

    All methods act on raw coefficient arrays with arbitrary leading batch axes.
    For a constant tensor the stress is formed directly in coefficient space,
    which makes constant-coefficient identities hold to round-off.
    """

    def __init__(self, A: ElasticityTensorField):
        self.A = A
        self.grid = A.grid
        self.mask = A.grid.active_mask
        self.grad_w = 1j * A.grid.deriv_wavevector
        self.constant = A.is_constant
        self._m0 = A.mandel[:, :, 0, 0, 0].copy() if self.constant else None

    def stress(self, e_hat: np.ndarray) -> np.ndarray:
        """Coefficients of A e given coefficients of the strain e."""
        if self.constant:
            return np.einsum("IJ,...Jxyz->...Ixyz", self._m0, e_hat)
        g = self.grid
        return g.fft(contract(self.A.mandel, g.ifft(e_hat)))

    def chi_w(self, chi) -> np.ndarray:
        c = 1j * np.asarray(chi, dtype=float).reshape(3, 1, 1, 1)
        return np.broadcast_to(c, (3,) + self.grid.shape)

    def G(self, u):
        return sym_outer(u, self.grad_w)

    def Gt(self, s):
        return sym_outer_adjoint(s, self.grad_w) * self.mask

    def X(self, u, chi):
        """i X_chi u (the factor i included)."""
        return sym_outer(u, self.chi_w(chi))

    def Xt(self, s, chi):
        return sym_outer_adjoint(s, self.chi_w(chi)) * self.mask

    def cell_apply(self, u):
        return self.Gt(self.stress(self.G(u * self.mask)))

    @cached_property
    def cell_precond_inverse(self) -> np.ndarray:
        """Per-mode inverse symbol of the mean-coefficient cell operator; zero on k=0 and Nyquist."""
        S = symbol_matrix(self.A.mean_mandel, self.grid.deriv_wavevector)
        return _batched_inverse(S, ~self.mask | _zero_mode(self.grid))


def _zero_mode(grid: CellGrid) -> np.ndarray:
    z = np.zeros(grid.shape, dtype=bool)
    z[0, 0, 0] = True
    return z


def _batched_inverse(S: np.ndarray, singular: np.ndarray) -> np.ndarray:
    """Invert (..., 3, 3, n, n, n) per mode, writing zeros where ``singular``."""
    Sm = np.moveaxis(S, (-5, -4), (-2, -1)).copy()  # (..., n, n, n, 3, 3)
    Sm[..., singular, :, :] = np.eye(3)
    inv = np.linalg.inv(Sm)
    inv[..., singular, :, :] = 0.0
    return np.moveaxis(inv, (-2, -1), (-5, -4))


def apply_blocks(P: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Per-mode 3x3 action: out_a = sum_b P[..., a, b, grid] r[..., b, grid]."""
    return np.einsum("...abxyz,...bxyz->...axyz", P, r)


# ---------------------------------------------------------------- Krylov solvers

def pcg(apply: Callable, b: np.ndarray, precond: Callable, tol: float, max_iter: int,
        x0: np.ndarray | None = None) -> tuple[np.ndarray, SolveInfo]:
    """Batched preconditioned CG; each leading index is an independent HPD system."""
    bnorm = batch_norm(b)
    target = tol * bnorm
    x = np.zeros_like(b) if x0 is None else x0.copy()
    info = SolveInfo()
    expand = (...,) + (None,) * 4
    for _restart in range(4):
        r = b - apply(x) if (x0 is not None or _restart) else b.copy()
        rn = batch_norm(r)
        if np.all(rn <= target):
            info.residual = float(np.max(rn / np.where(bnorm > 0, bnorm, 1.0)))
            return x, info
        z = precond(r)
        p = z.copy()
        rz = batch_inner(r, z).real
        active = rn > target
        for _ in range(max_iter):
            Ap = apply(p)
            pAp = batch_inner(p, Ap).real
            alpha = np.where(active & (pAp > 0), rz / np.where(pAp > 0, pAp, 1.0), 0.0)
            x += alpha[expand] * p
            r -= alpha[expand] * Ap
            info.iterations += 1
            rn = batch_norm(r)
            active = rn > target
            if not np.any(active):
                break
            z = precond(r)
            rz_new = batch_inner(r, z).real
            beta = np.where(active & (rz != 0), rz_new / np.where(rz != 0, rz, 1.0), 0.0)
            p = z + beta[expand] * p
            rz = rz_new
            if info.iterations >= max_iter:
                break
        true_r = batch_norm(b - apply(x))
        info.residual = float(np.max(true_r / np.where(bnorm > 0, bnorm, 1.0)))
        if np.all(true_r <= target):
            return x, info
        if info.iterations >= max_iter:
            break
    raise NoConvergence(f"CG stalled at relative residual {info.residual:.2e} after {info.iterations} iterations")


def gmres(apply: Callable, b: np.ndarray, precond: Callable, tol: float, max_iter: int,
          restart: int = 60) -> tuple[np.ndarray, SolveInfo]:
    """Right-preconditioned restarted GMRES for one (non-Hermitian) system."""
    bnorm = float(np.linalg.norm(b))
    info = SolveInfo()
    x = np.zeros_like(b)
    if bnorm == 0:
        return x, info
    while True:
        r = b - apply(x)
        beta = float(np.linalg.norm(r))
        info.residual = beta / bnorm
        if beta <= tol * bnorm:
            return x, info
        if info.iterations >= max_iter:
            raise NoConvergence(f"GMRES stalled at relative residual {info.residual:.2e}")
        V = [r / beta]
        Z = []
        H = np.zeros((restart + 1, restart), dtype=complex)
        e1 = np.zeros(restart + 1, dtype=complex)
        e1[0] = beta
        y = np.zeros(0)
        for j in range(restart):
            zj = precond(V[j])
            Z.append(zj)
            w = apply(zj)
            for _ in range(2):  # classical Gram-Schmidt, twice
                for i in range(j + 1):
                    h = np.vdot(V[i], w)
                    H[i, j] += h
                    w = w - h * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            info.iterations += 1
            y, *_ = np.linalg.lstsq(H[: j + 2, : j + 1], e1[: j + 2], rcond=None)
            res = np.linalg.norm(H[: j + 2, : j + 1] @ y - e1[: j + 2])
            if res <= 0.5 * tol * bnorm or H[j + 1, j].real <= 1e-300 or info.iterations >= max_iter:
                break
            V.append(w / H[j + 1, j])
        for i, yi in enumerate(y):
            x = x + yi * Z[i]


# ---------------------------------------------------------------- fiber operator

class FiberOperator:
    """A_chi = (sym grad + i X_chi)^* A (sym grad + i X_chi) on L^2(Y; C^3)."""

    def __init__(self, A: ElasticityTensorField, chi, kernels: CellKernels | None = None):
        self.A = A
        self.grid = A.grid
        self.chi = np.asarray(chi, dtype=float).reshape(3)
        self.kern = kernels if kernels is not None else CellKernels(A)
        self.w = 1j * self.grid.shifted_wavevector(self.chi)

    @property
    def chi_norm(self) -> float:
        return float(np.linalg.norm(self.chi))

    def strain(self, u: np.ndarray) -> np.ndarray:
        return sym_outer(u * self.kern.mask, self.w)

    def strain_adjoint(self, s: np.ndarray) -> np.ndarray:
        return sym_outer_adjoint(s, self.w) * self.kern.mask

    def apply_coeffs(self, u: np.ndarray) -> np.ndarray:
        return self.strain_adjoint(self.kern.stress(self.strain(u)))

    def apply(self, u: SpectralField) -> SpectralField:
        self.grid.check(u.grid)
        return SpectralField(self.grid, self.apply_coeffs(u.coeffs))

    def form(self, u: SpectralField, v: SpectralField) -> complex:
        """a_chi(u, v)."""
        return complex(np.vdot(self.strain(v.coeffs), self.kern.stress(self.strain(u.coeffs))))

    @cached_property
    def symbol(self) -> np.ndarray:
        """Per-mode 3x3 symbol of the mean-coefficient fiber operator."""
        return symbol_matrix(self.A.mean_mandel, self.grid.shifted_wavevector(self.chi))

    def shifted_precond(self, alpha: float, shift, cfg: SolverConfig) -> Callable:
        """Preconditioner approximating (alpha A_chi + shift)^-1; ``shift`` may be an array of shifts."""
        mask = self.kern.mask
        if cfg.preconditioner == "none":
            return lambda r: r * mask
        shift = np.asarray(shift)
        S = alpha * self.symbol + shift[(...,) + (None,) * 5] * np.eye(3)[:, :, None, None, None]
        P = _batched_inverse(S, ~mask)
        return lambda r: apply_blocks(P, r)

    def solve_shifted(self, alpha: float, shift, rhs: np.ndarray, cfg: SolverConfig,
                      hermitian: bool | None = None) -> tuple[np.ndarray, SolveInfo]:
        """Solve (alpha A_chi + shift) u = rhs on the active modes."""
        shift_arr = np.asarray(shift, dtype=complex)
        rhs = rhs * self.kern.mask
        if hermitian is None:
            hermitian = bool(np.all(shift_arr.imag == 0))
        precond = self.shifted_precond(alpha, shift_arr if not hermitian else shift_arr.real, cfg)
        expand = (...,) + (None,) * 4
        s = shift_arr.real if hermitian else shift_arr

        def apply(u):
            return alpha * self.apply_coeffs(u) + s[expand] * u

        if hermitian:
            return pcg(apply, rhs, precond, cfg.cg_tol, cfg.max_iter)
        if rhs.ndim != 4:
            raise InvalidInput("non-Hermitian shifted solves take one right-hand side")
        return gmres(apply, rhs, precond, cfg.cg_tol, cfg.max_iter)


def solve_resolvent(op: FiberOperator, z: complex, f: SpectralField, cfg: SolverConfig) -> SpectralField:
    """u with (1/|chi|^2) A_chi u - z u = f."""
    if op.chi_norm == 0:
        raise InvalidInput("the resolvent problem needs chi != 0")
    op.grid.check(f.grid)
    t2 = op.chi_norm ** 2
    z = complex(z)
    u, _ = op.solve_shifted(1.0 / t2, -z, f.coeffs, cfg, hermitian=(z.imag == 0 and z.real < 0))
    return SpectralField(op.grid, u)


def resolvent_residual(op: FiberOperator, z: complex, u: SpectralField, f: SpectralField) -> float:
    r = op.apply_coeffs(u.coeffs) / op.chi_norm ** 2 - z * u.coeffs - f.coeffs * op.kern.mask
    return float(np.linalg.norm(r) / max(np.linalg.norm(f.coeffs), 1e-300))


def solve_cell_coeffs(kern: CellKernels, r: np.ndarray, cfg: SolverConfig,
                      scale: float | np.ndarray | None = None,
                      compat_tol: float = COMPAT_RTOL) -> tuple[np.ndarray, SolveInfo]:
    """Mean-zero u with int A sym grad u : conj(sym grad v) = <r, v> for all v (batched)."""
    r = r * kern.mask
    mean = r[..., :, 0, 0, 0]
    mean_size = np.sqrt(np.sum(np.abs(mean) ** 2, axis=-1))
    if scale is None:
        scale = batch_norm(r)
    if np.any(mean_size > compat_tol * np.maximum(scale, 1e-300)):
        worst = float(np.max(mean_size / np.maximum(scale, 1e-300)))
        raise IncompatibleRHS(f"right-hand side does not annihilate constants (relative {worst:.2e})")
    r = r.copy()
    r[..., :, 0, 0, 0] = 0.0
    if cfg.preconditioner == "none":
        zm = kern.mask & ~_zero_mode(kern.grid)
        precond = lambda x: x * zm  # noqa: E731
    else:
        P = kern.cell_precond_inverse
        precond = lambda x: apply_blocks(P, x)  # noqa: E731

    def apply(u):
        out = kern.cell_apply(u)
        out[..., :, 0, 0, 0] = 0.0
        return out

    u, info = pcg(apply, r, precond, cfg.cg_tol, cfg.max_iter)
    u[..., :, 0, 0, 0] = 0.0
    return u, info


def solve_cell(A: ElasticityTensorField, strain_part: StrainField | None,
               vector_part: SpectralField | None, cfg: SolverConfig,
               kernels: CellKernels | None = None) -> SpectralField:
    """Solve the mean-zero cell problem with right-hand side v -> <s, sym grad v> + <w, v>."""
    kern = kernels if kernels is not None else CellKernels(A)
    r = np.zeros((3,) + A.grid.shape, dtype=complex)
    scale = 0.0
    if strain_part is not None:
        A.grid.check(strain_part.grid)
        t = kern.Gt(strain_part.coeffs)
        r = r + t
        scale += np.linalg.norm(t)
    if vector_part is not None:
        A.grid.check(vector_part.grid)
        r = r + vector_part.coeffs
        scale += np.linalg.norm(vector_part.coeffs)
    u, _ = solve_cell_coeffs(kern, r, cfg, scale=scale)
    return SpectralField(A.grid, u)


def distance_to_spectrum(z: complex, eigs) -> float:
    eigs = np.asarray(list(eigs), dtype=float)
    if eigs.size == 0:
        raise EmptySpectrumList("no eigenvalues supplied")
    return float(np.min(np.abs(complex(z) - eigs)))


def korn_constant(grid: CellGrid) -> float:
    """Smallest C with ||u||_H1 <= C ||sym grad u|| on discrete mean-zero fields."""
    q = grid.deriv_wavevector
    S = symbol_matrix(np.eye(6), q)
    lam = np.linalg.eigvalsh(np.moveaxis(S, (0, 1), (-2, -1)))[..., 0]
    weight = 1.0 + np.sum(q ** 2, axis=0)
    ok = grid.active_mask & ~_zero_mode(grid)
    return float(1.0 / np.sqrt(np.min(lam[ok] / weight[ok])))
