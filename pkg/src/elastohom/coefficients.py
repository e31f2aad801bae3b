"""Periodic elasticity tensors sampled on the cell grid.

Components are stored as ``c[i, j, k, l, x, y, z]`` with ``(A xi)_ij = sum_kl c[i,j,k,l] xi_kl``.
A 6x6 Mandel matrix per node is derived once and used by every contraction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import GridMismatch, InvalidInput, NotElliptic, SymmetryViolation
from .grid import MANDEL_PAIRS, MANDEL_WEIGHTS, CellGrid, StrainField

SYMMETRY_RTOL = 1e-12


def isotropic_components(lam, mu) -> np.ndarray:
    """c_ijkl = lam d_ij d_kl + mu (d_ik d_jl + d_il d_jk); lam, mu scalars or nodal arrays."""
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    d = np.eye(3)
    t_lam = np.einsum("ij,kl->ijkl", d, d)
    t_mu = np.einsum("ik,jl->ijkl", d, d) + np.einsum("il,jk->ijkl", d, d)
    extra = (np.newaxis,) * lam.ndim
    return t_lam[(...,) + extra] * lam + t_mu[(...,) + extra] * mu


def components_to_mandel(c: np.ndarray) -> np.ndarray:
    """(3,3,3,3,...) tensor to (6,6,...) Mandel matrix."""
    out = np.empty((6, 6) + c.shape[4:], dtype=c.dtype)
    for a, (i, j) in enumerate(MANDEL_PAIRS):
        for b, (k, l) in enumerate(MANDEL_PAIRS):
            out[a, b] = MANDEL_WEIGHTS[a] * MANDEL_WEIGHTS[b] * c[i, j, k, l]
    return out


def mandel_to_components(m: np.ndarray) -> np.ndarray:
    out = np.empty((3, 3, 3, 3) + m.shape[2:], dtype=m.dtype)
    for a, (i, j) in enumerate(MANDEL_PAIRS):
        for b, (k, l) in enumerate(MANDEL_PAIRS):
            v = m[a, b] / (MANDEL_WEIGHTS[a] * MANDEL_WEIGHTS[b])
            for p, q in {(i, j), (j, i)}:
                for r, s in {(k, l), (l, k)}:
                    out[p, q, r, s] = v
    return out


@dataclass(frozen=True, eq=False)
class Certificate:
    nu_measured: float
    symmetric: bool
    nu_upper: float

    @property
    def nu_two_sided(self) -> float:
        """Largest nu with nu|xi|^2 <= A xi:xi <= |xi|^2/nu at every node."""
        return min(self.nu_measured, 1.0 / self.nu_upper)


@dataclass(frozen=True, eq=False)
class ElasticityTensorField:
    grid: CellGrid
    components: np.ndarray
    description: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.asarray(self.components, dtype=float)
        if c.shape != (3, 3, 3, 3) + self.grid.shape:
            raise GridMismatch(f"coefficient shape {c.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(c)):
            raise InvalidInput("coefficient components must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "components", c)

    @cached_property
    def mandel(self) -> np.ndarray:
        """Nodal 6x6 Mandel matrices, shape (6, 6, n, n, n)."""
        m = components_to_mandel(self.components)
        m.setflags(write=False)
        return m

    @cached_property
    def mean_mandel(self) -> np.ndarray:
        return self.mandel.mean(axis=(2, 3, 4))

    @cached_property
    def certificate(self) -> Certificate:
        return validate(self)

    @property
    def nu(self) -> float:
        return self.certificate.nu_measured

    @property
    def is_constant(self) -> bool:
        m = self.mandel
        return bool(np.all(m == m[:, :, :1, :1, :1]))


def check_symmetries(c: np.ndarray) -> bool:
    scale = max(np.max(np.abs(c)), 1e-300)
    tol = SYMMETRY_RTOL * scale
    swaps = (c.swapaxes(0, 1), np.transpose(c, (2, 3, 0, 1) + tuple(range(4, c.ndim))))
    return all(np.max(np.abs(c - s)) <= tol for s in swaps)


def validate(A: ElasticityTensorField) -> Certificate:
    """Check index symmetries and certify the ellipticity constant on every node."""
    if not check_symmetries(A.components):
        raise SymmetryViolation("coefficient tensor violates c_ijkl = c_jikl = c_klij")
    m = np.moveaxis(A.mandel.reshape(6, 6, -1), -1, 0)
    eig = np.linalg.eigvalsh(m)
    nu_measured = float(eig[:, 0].min())
    if nu_measured <= 0:
        raise NotElliptic(f"smallest Voigt eigenvalue {nu_measured:.3e} <= 0")
    return Certificate(nu_measured, True, float(eig[:, -1].max()))


def apply_pointwise(A: ElasticityTensorField, s: StrainField) -> StrainField:
    A.grid.check(s.grid)
    out = np.einsum("IJxyz,Jxyz->Ixyz", A.mandel, s.values)
    return StrainField.from_values(s.grid, out)


def apply_mandel_values(mandel: np.ndarray, e_values: np.ndarray) -> np.ndarray:
    """Batched nodal contraction on physical Mandel strains (..., 6, n, n, n)."""
    return np.einsum("IJxyz,...Jxyz->...Ixyz", mandel, e_values, optimize=True)


# ---------------------------------------------------------------- presets

def isotropic_constant(grid: CellGrid, lam: float, mu: float) -> ElasticityTensorField:
    c = isotropic_components(np.full(grid.shape, lam), np.full(grid.shape, mu))
    return ElasticityTensorField(grid, c, {"preset": "isotropic_constant", "lam": lam, "mu": mu})


def isotropic_modulated(grid: CellGrid, lam0: float, mu0: float, delta: float,
                        k=(1, 0, 0)) -> ElasticityTensorField:
    """lam, mu both scaled by 1 + delta cos(2 pi k.y)."""
    if not abs(delta) < 1:
        raise InvalidInput(f"|delta| must be < 1, got {delta}")
    k = np.asarray(k, dtype=float).reshape(3, 1, 1, 1)
    mod = 1.0 + delta * np.cos(2 * np.pi * np.sum(k * grid.nodes, axis=0))
    c = isotropic_components(lam0 * mod, mu0 * mod)
    return ElasticityTensorField(grid, c, {"preset": "isotropic_modulated", "lam0": lam0, "mu0": mu0,
                                           "delta": delta, "k": [int(x) for x in k.ravel()]})


def smoothed_step(y: np.ndarray, width: float, n_harmonics: int | None = None) -> np.ndarray:
    """Square wave (1 on [1/4, 3/4)) convolved with a Gaussian of std ``width``, band-limited."""
    if width <= 0:
        raise InvalidInput("smoothing width must be positive")
    if n_harmonics is None:
        # stop once the Gaussian damping falls below 1e-14
        n_harmonics = int(np.ceil(np.sqrt(2 * 14 * np.log(10)) / (2 * np.pi * width)))
    out = np.full(np.shape(y), 0.5)
    for m in range(1, n_harmonics + 1, 2):
        damp = np.exp(-0.5 * (2 * np.pi * m * width) ** 2)
        out -= (2.0 / np.pi) * (-1) ** ((m - 1) // 2) / m * damp * np.cos(2 * np.pi * m * y)
    return out


def laminate(grid: CellGrid, lam1: float, mu1: float, lam2: float, mu2: float,
             width: float = 0.15) -> ElasticityTensorField:
    """Two isotropic phases layered in y1, phase 2 occupying the middle half."""
    phi = smoothed_step(grid.nodes[0], width)
    c = isotropic_components(lam1 + (lam2 - lam1) * phi, mu1 + (mu2 - mu1) * phi)
    return ElasticityTensorField(grid, c, {"preset": "laminate", "lam1": lam1, "mu1": mu1,
                                           "lam2": lam2, "mu2": mu2, "width": width})


def from_mandel_constant(grid: CellGrid, mandel66) -> ElasticityTensorField:
    c = mandel_to_components(np.asarray(mandel66, dtype=float))
    c = np.broadcast_to(c[..., None, None, None], (3, 3, 3, 3) + grid.shape)
    return ElasticityTensorField(grid, c, {"preset": "constant_mandel"})


# ---------------------------------------------------------------- file I/O

def load_coefficient_file(path: str | Path) -> ElasticityTensorField:
    """Text layout: first token n_per_axis, then 81 floats per node.

    Nodes run in lexicographic (x slowest, z fastest) order; the 81 floats of a
    node are c[i,j,k,l] in C order.
    """
    data = np.array(Path(path).read_text().split(), dtype=float)
    if data.size < 1:
        raise InvalidInput(f"empty coefficient file {path}")
    n = int(data[0])
    grid = CellGrid(n)
    body = data[1:]
    if body.size != 81 * grid.size:
        raise GridMismatch(f"expected {81 * grid.size} values for n={n}, found {body.size}")
    c = body.reshape(grid.shape + (3, 3, 3, 3))
    c = np.moveaxis(c, (0, 1, 2), (4, 5, 6))
    return ElasticityTensorField(grid, c, {"preset": "file", "path": str(path)})


def save_coefficient_file(A: ElasticityTensorField, path: str | Path) -> None:
    c = np.moveaxis(A.components, (4, 5, 6), (0, 1, 2)).reshape(A.grid.size, 81)
    with open(path, "w") as fh:
        fh.write(f"{A.grid.n_per_axis}\n")
        np.savetxt(fh, c, fmt="%.17g")


PRESETS = {
    "isotropic_constant": isotropic_constant,
    "isotropic_modulated": isotropic_modulated,
    "laminate": laminate,
}
