"""Cycle-by-cycle corrector cascade at fixed quasimomentum and spectral parameter.

Every cycle k produces a constant vector u_0^(k) and two mean-zero fields
u_1^(k), u_2^(k). All cycles share one template: with the previous-cycle data

    p2 = u_2^(k-1),   q = u_1^(k-1) + u_2^(k-2),   s = f if k == 0 else 0

(absent terms read as zero) the cascade solves

    (M/|chi|^2 - z) u_0 = mean(s) - mean(Xt A (G p2 + X q)) / |chi|^2
    L u_1 = -Gt A X u_0
    L u_2 = -Gt A X (u_1 + p2) - Xt A G (u_1 + p2) - Xt A X (u_0 + q)
            + z |chi|^2 (u_0 + q) + |chi|^2 s

where G = sym grad, X = i X_chi, Gt/Xt are their L^2 adjoints, L = Gt A G on
mean-zero fields and M is the 3x3 homogenized fiber matrix. The u_0 line is the
solvability condition of the u_2 line, so its right-hand side has zero mean.

The spectral parameter may be an array; every term then carries a leading
batch axis over z and the cell solves run batched.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coefficients import ElasticityTensorField
from .errors import HomSingular, IncompatibleRHS, InvalidInput
from .fiber import COMPAT_RTOL, CellKernels, FiberOperator, SolverConfig, solve_cell_coeffs
from .grid import SpectralField, batch_norm, gradient_norm_sq
from .homogenize import homogenized_tensor, x_chi_matrix

HOM_SINGULAR_TOL = 1e-8


class CascadeContext:
    """Per-tensor data shared by every cascade run: kernels, correctors, A^hom."""

    def __init__(self, A: ElasticityTensorField, cfg: SolverConfig, kernels: CellKernels | None = None):
        self.A = A
        self.grid = A.grid
        self.cfg = cfg
        self.kern = kernels if kernels is not None else CellKernels(A)
        self.Ahom, self.basis = homogenized_tensor(A, cfg, self.kern)

    @property
    def compat_tol(self) -> float:
        return max(COMPAT_RTOL, 10 * self.cfg.cg_tol)

    def hom_matrix(self, chi) -> np.ndarray:
        """3x3 homogenized fiber matrix from the unsymmetrized corrector stresses.

        Using the raw corrector stresses keeps the solvability condition exact
        to round-off when u_1 is assembled from the corrector basis.
        """
        X = x_chi_matrix(chi)
        return (X.T @ self.Ahom_raw.T @ X).astype(complex)

    @property
    def Ahom_raw(self) -> np.ndarray:
        if not hasattr(self, "_raw"):
            kern = self.kern
            e = np.zeros((6, 6) + self.grid.shape, dtype=complex)
            e[:, :, 0, 0, 0] = np.eye(6)
            self._raw = kern.stress(e + kern.G(self.basis.fields))[:, :, 0, 0, 0].real
        return self._raw


@dataclass
class CascadeResult:
    chi: np.ndarray
    z: np.ndarray
    n_cycles: int
    terms: dict = field(default_factory=dict)
    solvability_residuals: list = field(default_factory=list)
    f_ref: np.ndarray | None = None
    grid: object = None
    hom_matrix: np.ndarray | None = None
    scalar: bool = True

    @property
    def chi_norm(self) -> float:
        return float(np.linalg.norm(self.chi))

    def coeffs(self, j: int, k: int) -> np.ndarray:
        """Coefficient array of u_j^(k); zeros when the term is absent (k < 0)."""
        if k < 0:
            return np.zeros_like(self.f_ref)
        return self.terms[(j, k)]

    def term(self, j: int, k: int, index: int | None = None) -> SpectralField:
        c = self.coeffs(j, k)
        if not self.scalar:
            if index is None:
                raise InvalidInput("batched cascade: pass the z index")
            c = c[index]
        return SpectralField(self.grid, c)

    def partial_sum(self, selection) -> np.ndarray:
        """Sum of the selected (j, k) terms as a coefficient array."""
        out = np.zeros_like(self.f_ref)
        for jk in selection:
            out = out + self.terms[jk]
        return out

    def full_sum(self, n: int | None = None) -> np.ndarray:
        n = self.n_cycles if n is None else n
        return self.partial_sum([(j, k) for k in range(n + 1) for j in range(3) if (j, k) in self.terms])

    def term_norms(self) -> dict:
        """(j, k) -> {'l2', 'h1'} (arrays over the z batch, scalars otherwise)."""
        out = {}
        for jk, c in self.terms.items():
            l2 = batch_norm(c)
            h1 = np.sqrt(l2 ** 2 + gradient_norm_sq(c, self.grid))
            out[jk] = {"l2": l2, "h1": h1}
        return out


def _constant_coeffs(grid, vec: np.ndarray) -> np.ndarray:
    out = np.zeros(vec.shape[:-1] + (3,) + grid.shape, dtype=complex)
    out[..., 0, 0, 0] = vec
    return out


def _mean(c: np.ndarray) -> np.ndarray:
    return c[..., :, 0, 0, 0]


def run_cascade(ctx: CascadeContext, chi, z, f: SpectralField | np.ndarray, n: int,
                u1_route: str = "solve", final_u2: bool = True) -> CascadeResult:
    """Run cycles 0..n at one z (complex) or a batch of z values (1-D array).

    ``u1_route='basis'`` assembles u_1 from the precomputed corrector basis instead
    of a fresh cell solve (the two agree to solver tolerance). ``final_u2=False``
    skips u_2^(n), which only the full sum and the error functional need.
    """
    chi = np.asarray(chi, dtype=float).reshape(3)
    t2 = float(chi @ chi)
    if t2 == 0:
        raise InvalidInput("the cascade needs chi != 0")
    if n < 0:
        raise InvalidInput("cycle count must be >= 0")
    if u1_route not in ("solve", "basis"):
        raise InvalidInput(f"unknown u1 route {u1_route!r}")
    grid, kern, cfg = ctx.grid, ctx.kern, ctx.cfg
    scalar = np.ndim(z) == 0
    zb = np.atleast_1d(np.asarray(z, dtype=complex))
    fc = f.coeffs if isinstance(f, SpectralField) else np.asarray(f, dtype=complex)
    fc = np.broadcast_to(fc * kern.mask, zb.shape + (3,) + grid.shape).copy()
    zcol = zb[:, None, None, None, None]

    M = ctx.hom_matrix(chi)
    hom_eigs = np.linalg.eigvalsh(M).real / t2
    dist = np.min(np.abs(zb[:, None] - hom_eigs[None, :]), axis=1)
    if np.any(dist < HOM_SINGULAR_TOL):
        raise HomSingular(f"z within {dist.min():.1e} of the homogenized spectrum")
    shifted = M[None] / t2 - zb[:, None, None] * np.eye(3)[None]
    Xmat = x_chi_matrix(chi)

    res = CascadeResult(chi, zb if not scalar else zb[0], n, f_ref=fc, grid=grid, hom_matrix=M, scalar=True)
    zero = np.zeros_like(fc)

    for k in range(n + 1):
        p2 = res.terms.get((2, k - 1), zero)
        q = res.terms.get((1, k - 1), zero) + res.terms.get((2, k - 2), zero)
        s = fc if k == 0 else zero

        # solvability: pin the constant u_0^(k)
        lead = kern.stress(kern.G(p2) + kern.X(q, chi))
        b = _mean(s) - _mean(kern.Xt(lead, chi)) / t2
        u0_vec = np.linalg.solve(shifted, b[..., None])[..., 0]
        u0 = _constant_coeffs(grid, u0_vec)

        if u1_route == "basis":
            weights = (1j * (Xmat @ u0_vec[..., None]))[..., 0]  # Mandel of i X_chi u_0
            u1 = ctx.basis.combine(weights)
        else:
            u1, _ = solve_cell_coeffs(kern, -kern.Gt(kern.stress(kern.X(u0, chi))), cfg,
                                      scale=np.maximum(batch_norm(u0), 1e-300) * np.sqrt(t2),
                                      compat_tol=ctx.compat_tol)
        res.terms[(0, k)] = u0
        res.terms[(1, k)] = u1

        if k == n and not final_u2:
            break
        w = u1 + p2
        piece_g = -kern.Gt(kern.stress(kern.X(w, chi)))
        piece_x = -kern.Xt(kern.stress(kern.G(w) + kern.X(u0 + q, chi)), chi)
        piece_z = zcol * t2 * (u0 + q)
        piece_f = t2 * s
        r2 = piece_g + piece_x + piece_z + piece_f
        scale = np.maximum.reduce([batch_norm(piece_x), batch_norm(piece_z), batch_norm(piece_f),
                                   np.full(zb.shape, 1e-300)])
        resid = np.sqrt(np.sum(np.abs(_mean(r2)) ** 2, axis=-1)) / scale
        res.solvability_residuals.append(resid if not scalar else float(resid[0]))
        if np.any(resid > ctx.compat_tol):
            raise IncompatibleRHS(f"cycle {k}: solvability residual {resid.max():.2e}")
        u2, _ = solve_cell_coeffs(kern, r2, cfg, scale=scale, compat_tol=ctx.compat_tol)
        res.terms[(2, k)] = u2

    if scalar:
        res.terms = {jk: c[0] for jk, c in res.terms.items()}
        res.f_ref = fc[0]
    else:
        res.scalar = False
    return res


def run_cycle0(ctx: CascadeContext, chi, z, f, u1_route: str = "solve") -> CascadeResult:
    return run_cascade(ctx, chi, z, f, 0, u1_route)


def run_cycle(ctx: CascadeContext, state: CascadeResult, u1_route: str = "solve") -> CascadeResult:
    """Extend ``state`` by one cycle (recomputes from cycle 0; the cascade is deterministic)."""
    return run_cascade(ctx, state.chi, state.z, SpectralField(ctx.grid, state.f_ref) if state.scalar
                       else state.f_ref, state.n_cycles + 1, u1_route)


# ---------------------------------------------------------------- error functional

def _zcol(state: CascadeResult):
    z = np.asarray(state.z)
    return z if state.scalar else z[:, None, None, None, None]


def residual_representative(ctx: CascadeContext, state: CascadeResult) -> np.ndarray:
    """Field r with R_error^(n)(v) = <r, v>, assembled term by term from u_2^(n-1), u_1^(n), u_2^(n)."""
    n = state.n_cycles
    if (2, n) not in state.terms:
        raise InvalidInput("the error functional needs u_2 of the last cycle")
    kern, chi, t2 = ctx.kern, state.chi, state.chi_norm ** 2
    prev = state.coeffs(2, n - 1)
    u1n, u2n = state.coeffs(1, n), state.coeffs(2, n)
    w = prev + u1n + u2n
    return (
        -kern.Xt(kern.stress(kern.X(prev, chi)), chi)
        - kern.Xt(kern.stress(kern.X(u1n, chi)), chi)
        - kern.Xt(kern.stress(kern.G(u2n)), chi)
        - kern.Gt(kern.stress(kern.X(u2n, chi)))
        - kern.Xt(kern.stress(kern.X(u2n, chi)), chi)
        + _zcol(state) * t2 * w
    )


def residual_functional(ctx: CascadeContext, state: CascadeResult, v: SpectralField):
    r = residual_representative(ctx, state)
    return np.einsum("...ixyz,ixyz->...", r, np.conj(v.coeffs)) if not state.scalar else complex(np.vdot(v.coeffs, r))


def leftover_representative(ctx: CascadeContext, state: CascadeResult) -> np.ndarray:
    """Same functional from the definition: |chi|^2 f - A_chi U + z |chi|^2 U with U the cascade sum."""
    op = FiberOperator(ctx.A, state.chi, ctx.kern)
    U = state.full_sum()
    t2 = state.chi_norm ** 2
    return t2 * state.f_ref - op.apply_coeffs(U) + _zcol(state) * t2 * U


def verify_error_equation(ctx: CascadeContext, state: CascadeResult, u_exact: SpectralField,
                          trials: int, rng: np.random.Generator) -> float:
    """Max relative defect of (1/|chi|^2) a_chi(e, v) - z<e, v> = R(v)/|chi|^2 over random v."""
    if not state.scalar:
        raise InvalidInput("verify on a single-z cascade")
    from .grid import random_field

    op = FiberOperator(ctx.A, state.chi, ctx.kern)
    t2 = state.chi_norm ** 2
    err = u_exact.coeffs * ctx.kern.mask - state.full_sum()
    r = residual_representative(ctx, state)
    Aerr = op.apply_coeffs(err)
    worst = 0.0
    for _ in range(trials):
        v = random_field(ctx.grid, rng).coeffs
        lhs = np.vdot(v, Aerr) / t2 - state.z * np.vdot(v, err)
        rhs = np.vdot(v, r) / t2
        scale = np.linalg.norm(r) * np.linalg.norm(v) / t2
        worst = max(worst, abs(lhs - rhs) / max(scale, 1e-300))
    return float(worst)


# ---------------------------------------------------------------- constants and bounds

@dataclass(frozen=True)
class CascadeConstants:
    C0: float
    C1: float
    C2: float
    C: float
    C_error: float

    def as_dict(self) -> dict:
        return {"C0": self.C0, "C1": self.C1, "C2": self.C2, "C": self.C, "C_error": self.C_error}


def cascade_constants(nu: float, C_korn: float) -> CascadeConstants:
    if not (np.isfinite(nu) and nu > 0):
        raise InvalidInput(f"nu must be positive, got {nu}")
    if not (np.isfinite(C_korn) and C_korn >= 1):
        raise InvalidInput(f"C_korn must be >= 1, got {C_korn}")
    C0 = max(3.0 / nu, 1.0)
    C1 = max(3.0 * C_korn / nu ** 3, C_korn / nu ** 2, 1.0)
    C2 = max(4.0 * C_korn ** 2 / nu ** 2 * C1 + 6.0 * C_korn ** 2 / nu * max(1.0, 1.0 / nu) * C0, 1.0)
    C_error = 4.0 * max(6.0 + 2.0 / nu, 8.0 / nu, 1.0)
    return CascadeConstants(C0, C1, C2, max(C0, C1, C2), C_error)


def resolvent_sum(a: int, b: int, z: complex, D: float) -> float:
    """sum_{k<=a} sum_{l<=b} |z|^l / D^k."""
    return float(sum(abs(z) ** l / D ** k for k in range(a + 1) for l in range(b + 1)))


def term_bounds(consts: CascadeConstants, n: int, z: complex, D_hom: float, chi_norm: float,
                f_norm: float) -> dict:
    """H^1 upper bounds for u_0^(n), u_1^(n), u_2^(n)."""
    C = consts.C ** (n + 1)
    s_a = resolvent_sum(n + 1, n, z, D_hom)
    s_b = resolvent_sum(n + 1, n + 1, z, D_hom)
    return {
        (0, n): C * s_a * chi_norm ** n * f_norm,
        (1, n): C * s_a * chi_norm ** (n + 1) * f_norm,
        (2, n): C * s_b * chi_norm ** (n + 2) * f_norm,
    }


def error_bound(consts: CascadeConstants, n: int, z: complex, D_hom: float, D_full: float,
                chi_norm: float, f_norm: float) -> float:
    return (consts.C_error * consts.C ** (n + 1) * max(1.0, abs(z + 1) / D_full)
            * resolvent_sum(n + 1, n + 2, z, D_hom) * chi_norm ** (n + 1) * f_norm)


def hom_distance(state: CascadeResult) -> np.ndarray:
    """D^hom(z): distance from z to the spectrum of M/|chi|^2."""
    eigs = np.linalg.eigvalsh(state.hom_matrix).real / state.chi_norm ** 2
    z = np.atleast_1d(state.z)
    d = np.min(np.abs(z[:, None] - eigs[None, :]), axis=1)
    return d[0] if state.scalar else d
