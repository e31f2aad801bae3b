"""Cell correctors, the homogenized tensor and its quasimomentum-dependent 3x3 form.

The orthonormal basis of symmetric matrices (three diagonal units, three
off-diagonal units scaled by 1/sqrt 2) coincides with the Mandel unit vectors,
so the 6x6 matrices here are in that basis and Frobenius geometry is preserved.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coefficients import ElasticityTensorField, mandel_to_components
from .errors import CoercivityFailure, InvalidInput
from .fiber import CellKernels, SolverConfig, solve_cell_coeffs
from .grid import SpectralField, sym_to_mandel_small


def constant_strain_coeffs(grid, mandel_vecs: np.ndarray) -> np.ndarray:
    """Coefficient arrays of constant strains, one per row of ``mandel_vecs`` (..., 6)."""
    out = np.zeros(mandel_vecs.shape[:-1] + (6,) + grid.shape, dtype=complex)
    out[..., 0, 0, 0] = mandel_vecs
    return out


def x_chi_matrix(chi) -> np.ndarray:
    """Real 6x3 matrix c -> Mandel(sym(c chi^T))."""
    chi = np.asarray(chi, dtype=float).reshape(3)
    s2 = np.sqrt(2.0)
    x1, x2, x3 = chi
    return np.array([
        [x1, 0, 0],
        [0, x2, 0],
        [0, 0, x3],
        [0, x3 / s2, x2 / s2],
        [x3 / s2, 0, x1 / s2],
        [x2 / s2, x1 / s2, 0],
    ])


@dataclass(frozen=True, eq=False)
class HomogenizedTensor:
    mandel: np.ndarray
    nu_hom: float
    asymmetry: float = 0.0

    @property
    def components(self) -> np.ndarray:
        return mandel_to_components(self.mandel)

    def to_report(self) -> dict:
        return {
            "layout": "6x6 orthonormal Mandel basis (11, 22, 33, 23, 13, 12); off-diagonal strains scaled by sqrt(2)",
            "matrix": [[float(x) for x in row] for row in self.mandel],
            "nu_hom": float(self.nu_hom),
            "asymmetry": float(self.asymmetry),
        }


@dataclass(frozen=True, eq=False)
class CorrectorBasis:
    """Mean-zero correctors N_b for the six orthonormal basis strains, coefficients (6, 3, n, n, n)."""

    A: ElasticityTensorField
    fields: np.ndarray
    residual: float

    def field(self, b: int) -> SpectralField:
        return SpectralField(self.A.grid, self.fields[b])

    def combine(self, weights: np.ndarray) -> np.ndarray:
        """sum_b N_b w_b for Mandel weights (..., 6)."""
        return np.einsum("...b,bixyz->...ixyz", weights, self.fields)


def _kernels(A, kernels):
    return kernels if kernels is not None else CellKernels(A)


def corrector_for_strain(A: ElasticityTensorField, xi, cfg: SolverConfig,
                         kernels: CellKernels | None = None) -> SpectralField:
    """Mean-zero u with int A (xi + sym grad u) : sym grad v = 0 for all v."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (3, 3) or np.max(np.abs(xi - xi.T)) > 1e-14 * max(1.0, np.max(np.abs(xi))):
        raise InvalidInput("xi must be a real symmetric 3x3 matrix")
    kern = _kernels(A, kernels)
    e = constant_strain_coeffs(A.grid, sym_to_mandel_small(xi))
    r = -kern.Gt(kern.stress(e))
    u, _ = solve_cell_coeffs(kern, r, cfg)
    return SpectralField(A.grid, u)


def corrector_basis(A: ElasticityTensorField, cfg: SolverConfig,
                    kernels: CellKernels | None = None) -> CorrectorBasis:
    kern = _kernels(A, kernels)
    e = constant_strain_coeffs(A.grid, np.eye(6))
    r = -kern.Gt(kern.stress(e))
    u, info = solve_cell_coeffs(kern, r, cfg)
    return CorrectorBasis(A, u, info.residual)


def assemble_A_hom(A: ElasticityTensorField, basis: CorrectorBasis, cfg: SolverConfig | None = None,
                   kernels: CellKernels | None = None) -> HomogenizedTensor:
    """(A^hom)_bc = int A (xi_b + sym grad N_b) : xi_c."""
    kern = _kernels(A, kernels)
    e = constant_strain_coeffs(A.grid, np.eye(6)) + kern.G(basis.fields)
    mean_stress = kern.stress(e)[:, :, 0, 0, 0].real  # row b, column c
    asym = float(np.max(np.abs(mean_stress - mean_stress.T)) / np.max(np.abs(mean_stress)))
    m = 0.5 * (mean_stress + mean_stress.T)
    nu_hom = float(np.linalg.eigvalsh(m)[0])
    if nu_hom <= 0:
        raise CoercivityFailure(f"homogenized tensor not coercive (smallest eigenvalue {nu_hom:.3e})")
    return HomogenizedTensor(m, nu_hom, asym)


def homogenized_tensor(A: ElasticityTensorField, cfg: SolverConfig,
                       kernels: CellKernels | None = None) -> tuple[HomogenizedTensor, CorrectorBasis]:
    kern = _kernels(A, kernels)
    basis = corrector_basis(A, cfg, kern)
    return assemble_A_hom(A, basis, cfg, kern), basis


def a_chi_hom(Ahom: HomogenizedTensor, chi) -> np.ndarray:
    """3x3 matrix with <M c, d> = A^hom X_chi c : X_chi d."""
    X = x_chi_matrix(chi)
    return (X.T @ Ahom.mandel @ X).astype(complex)


def a_chi_hom_direct(A: ElasticityTensorField, chi, cfg: SolverConfig,
                     kernels: CellKernels | None = None) -> np.ndarray:
    """Same matrix assembled from the chi-dependent cell problem, one complex corrector per unit c."""
    chi = np.asarray(chi, dtype=float)
    if not np.any(chi):
        raise InvalidInput("direct assembly needs chi != 0")
    kern = _kernels(A, kernels)
    ixc = 1j * x_chi_matrix(chi).T  # rows: Mandel of i X_chi e_c
    e = constant_strain_coeffs(A.grid, ixc)
    r = -kern.Gt(kern.stress(e))
    u, _ = solve_cell_coeffs(kern, r, cfg)
    mean_stress = kern.stress(kern.G(u) + e)[:, :, 0, 0, 0]  # (c, I)
    return np.conj(ixc) @ mean_stress.T  # [d, c]


def hom_eigen(chi, Ahom: HomogenizedTensor) -> np.ndarray:
    return np.linalg.eigvalsh(a_chi_hom(Ahom, chi))


def arithmetic_mean_tensor(A: ElasticityTensorField) -> np.ndarray:
    return A.mean_mandel.copy()


def fibonacci_directions(count: int) -> np.ndarray:
    """Nearly uniform unit vectors on the sphere."""
    i = np.arange(count) + 0.5
    phi = np.arccos(1 - 2 * i / count)
    theta = np.pi * (1 + 5 ** 0.5) * i
    return np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)


def hom_quadratic_constant(Ahom: HomogenizedTensor, n_dirs: int = 200) -> float:
    """Measured nu_1: largest value with nu_1 |chi|^2 <= eig(A_chi^hom) <= |chi|^2 / nu_1 over a direction sweep."""
    eig = np.array([hom_eigen(d, Ahom) for d in fibonacci_directions(n_dirs)])
    return float(min(eig.min(), 1.0 / eig.max()))
