"""Low-lying fiber spectrum, spectral projection, contour and rescaled correctors."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .cascade import CascadeContext, run_cascade
from .errors import InvalidInput, NoConvergence, NoSeparation
from .fiber import FiberOperator, SolverConfig
from .grid import SpectralField
from .homogenize import fibonacci_directions, hom_eigen, x_chi_matrix

EIG_RTOL = 1e-9
log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FiberSpectrum:
    chi: np.ndarray
    eigenvalues: np.ndarray
    vectors: np.ndarray  # (m, 3, n, n, n) coefficient arrays, orthonormal
    residuals: np.ndarray
    grid: object = None
    iterations: int = 0

    def eigenvector(self, i: int) -> SpectralField:
        return SpectralField(self.grid, self.vectors[i])

    @property
    def means(self) -> np.ndarray:
        """Cell means m_i of the eigenvectors, shape (m, 3)."""
        return self.vectors[:, :, 0, 0, 0].copy()


def _orthonormal_basis(V: np.ndarray, drop: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of the row span of V (b, ...), dropping near-dependent directions.

    Built from linear combinations of the rows (Gram-matrix eigenvectors), so
    entries that vanish in every row stay exactly zero.
    """
    for _ in range(2):
        flat = V.reshape(len(V), -1)
        flat = flat / np.maximum(np.linalg.norm(flat, axis=1, keepdims=True), 1e-300)
        lam, U = np.linalg.eigh(np.conj(flat) @ flat.T)
        keep = lam > drop ** 2 * lam[-1]
        C = U[:, keep] / np.sqrt(lam[keep])
        flat = C.T @ flat
        V = flat.reshape((len(flat),) + V.shape[1:])
    return V


def _start_block(g, b: int, rng) -> np.ndarray:
    X = np.zeros((b, 3) + g.shape, dtype=complex)
    for a in range(min(3, b)):
        X[a, a, 0, 0, 0] = 1.0
    low = (np.max(np.abs(g.kvec), axis=0) <= 1) & g.active_mask
    for a in range(3, b):
        X[a] = (rng.standard_normal((3,) + g.shape) + 1j * rng.standard_normal((3,) + g.shape)) * low
    return _orthonormal_basis(X)


def lowest_eigenpairs(op: FiberOperator, m: int, cfg: SolverConfig, rtol: float = EIG_RTOL,
                      block: int = 6, max_outer: int = 300, seed: int = 0,
                      start: np.ndarray | None = None) -> FiberSpectrum:
    """m lowest eigenpairs of A_chi.

    Locally optimal block iteration: each step does Rayleigh-Ritz on
    span{X, T R, P}, where R are the block residuals, T is the inverse of
    A_chi applied by preconditioned CG and P is the previous update. Pairs
    that meet the tolerance are locked and deflated from later searches.
    ``start`` optionally supplies leading block vectors (coefficient arrays).
    """
    if op.chi_norm == 0:
        raise InvalidInput("eigenpairs are computed for chi != 0")
    if not 1 <= m <= 8:
        raise InvalidInput("m must lie in 1..8")
    g = op.grid
    b = max(block, m)
    rng = np.random.default_rng(seed)
    X = _start_block(g, b, rng)
    if start is not None:
        start = np.asarray(start, dtype=complex).reshape((-1, 3) + g.shape)[:b] * g.active_mask
        X = _orthonormal_basis(np.concatenate([start, X[len(start):]]))
    inner_cfg = SolverConfig(min(cfg.cg_tol, 1e-12), cfg.max_iter, cfg.preconditioner)
    locked = np.zeros((0, 3) + g.shape, dtype=complex)
    locked_vals: list = []
    P = None

    def deflate(V):
        if len(locked) == 0:
            return V
        c = np.conj(locked.reshape(len(locked), -1)) @ V.reshape(len(V), -1).T
        return V - np.einsum("la,l...->a...", c, locked)

    theta = np.zeros(b)
    for it in range(1, max_outer + 1):
        AX = op.apply_coeffs(X)
        H = np.conj(X.reshape(len(X), -1)) @ AX.reshape(len(X), -1).T
        theta, W = np.linalg.eigh(0.5 * (H + H.conj().T))
        X_new = np.einsum("ab,a...->b...", W, X)
        AX = np.einsum("ab,a...->b...", W, AX)
        R = AX - theta[:, None, None, None, None] * X_new
        res = np.linalg.norm(R.reshape(len(X_new), -1), axis=1)
        thr = rtol * max(theta[-1], max(locked_vals, default=0.0))
        log.debug("eig step %d locked=%d res=%s", it, len(locked_vals), res[:m])
        # lock a converged prefix
        n_lock = 0
        while n_lock < len(theta) and len(locked_vals) + n_lock < m and res[n_lock] <= thr:
            n_lock += 1
        if n_lock:
            locked = np.concatenate([locked, X_new[:n_lock]])
            locked_vals += list(theta[:n_lock])
        if len(locked_vals) >= m:
            break
        active = X_new[n_lock:]
        Ract = R[n_lock:]
        Tr, _ = op.solve_shifted(1.0, 0.0, Ract, inner_cfg)
        parts = [active, Tr] + ([P] if P is not None else [])
        S = _orthonormal_basis(deflate(np.concatenate(parts)))
        S = _orthonormal_basis(deflate(S))
        AS = op.apply_coeffs(S)
        Hs = np.conj(S.reshape(len(S), -1)) @ AS.reshape(len(S), -1).T
        th, Ws = np.linalg.eigh(0.5 * (Hs + Hs.conj().T))
        nb = b
        X_next = np.einsum("ab,a...->b...", Ws[:, :nb], S)
        c = np.conj(active.reshape(len(active), -1)) @ X_next.reshape(nb, -1).T
        P = X_next - np.einsum("ab,a...->b...", c, active)
        X = _orthonormal_basis(X_next)
    else:
        raise NoConvergence(f"eigensolver did not reach residual {rtol:.1e} after {max_outer} steps")
    # final Rayleigh-Ritz on the locked vectors
    V = _orthonormal_basis(locked[:m])
    AV = op.apply_coeffs(V)
    H = np.conj(V.reshape(m, -1)) @ AV.reshape(m, -1).T
    lam, W = np.linalg.eigh(0.5 * (H + H.conj().T))
    V = np.einsum("ab,a...->b...", W, V)
    AV = np.einsum("ab,a...->b...", W, AV)
    res = np.linalg.norm((AV - lam[:, None, None, None, None] * V).reshape(m, -1), axis=1)
    return FiberSpectrum(op.chi.copy(), lam, V, res, g, it)


def project_low(spec: FiberSpectrum, u: SpectralField) -> SpectralField:
    """Projection onto the span of the three lowest eigenvectors."""
    W = spec.vectors[:3]
    c = np.conj(W.reshape(3, -1)) @ u.coeffs.ravel()
    return SpectralField(u.grid, np.einsum("i,i...->...", c, W))


def windowed_resolvent(spec: FiberSpectrum, eps: float, f: SpectralField) -> SpectralField:
    """sum_{i<=3} (lambda_i / eps^2 + 1)^{-1} <f, w_i> w_i."""
    W = spec.vectors[:3]
    c = np.conj(W.reshape(3, -1)) @ f.coeffs.ravel()
    c = c / (spec.eigenvalues[:3] / eps ** 2 + 1.0)
    return SpectralField(f.grid, np.einsum("i,i...->...", c, W))


# ---------------------------------------------------------------- contour

@dataclass(frozen=True, eq=False)
class Contour:
    center: float
    radius: float
    M: int
    mu: float
    rho0_measured: float
    sweep: list = field(default_factory=list)

    def __post_init__(self):
        if self.radius <= 0 or self.center - self.radius <= 0:
            raise InvalidInput("contour must lie in Re z > 0")

    @property
    def angles(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.M) / self.M

    @property
    def nodes(self) -> np.ndarray:
        return self.center + self.radius * np.exp(1j * self.angles)

    @property
    def weights(self) -> np.ndarray:
        """w_m with -(1/2 pi i) oint h(z) dz ~= sum_m w_m h(z_m) (anticlockwise)."""
        return -self.radius * np.exp(1j * self.angles) / self.M

    def with_nodes(self, M: int) -> "Contour":
        return Contour(self.center, self.radius, M, self.mu, self.rho0_measured, self.sweep)

    def distance(self, x) -> np.ndarray:
        return np.abs(self.radius - np.abs(np.asarray(x) - self.center))

    def encloses(self, x) -> np.ndarray:
        return np.abs(np.asarray(x) - self.center) < self.radius

    def to_report(self) -> dict:
        return {"center": self.center, "radius": self.radius, "M": self.M, "mu": self.mu,
                "rho0_measured": self.rho0_measured}


def default_sweep(mu: float, n_dirs: int = 6, fractions=(1.0, 0.5, 0.25)) -> list:
    """Quasimomenta inside [-mu, mu]^3: a few directions, each at fractions of its distance to the box boundary."""
    dirs = fibonacci_directions(n_dirs)
    out = []
    for d in dirs:
        scale = mu / np.max(np.abs(d))  # ray hits the box boundary
        for t in fractions:
            out.append(d * scale * t)
    return out


@dataclass(frozen=True)
class SweepPoint:
    chi: tuple
    low: tuple  # lambda_1..4 / |chi|^2
    hom: tuple  # hom eigenvalues / |chi|^2


def low_start(ctx: CascadeContext, chi) -> np.ndarray:
    """Homogenized eigenvectors plus their first-order correctors: a close guess for the low eigenspace."""
    chi = np.asarray(chi, dtype=float)
    _, vecs = np.linalg.eigh(ctx.hom_matrix(chi))
    g = ctx.grid
    out = np.zeros((3, 3) + g.shape, dtype=complex)
    out[:, :, 0, 0, 0] = vecs.T
    w = 1j * (x_chi_matrix(chi) @ vecs).T  # Mandel of i X_chi c, one row per eigenvector
    return out + ctx.basis.combine(w)


def sweep_spectra(ctx: CascadeContext, chis, cfg: SolverConfig, stop_on_overlap: bool = False) -> list:
    """Rescaled lowest four and homogenized eigenvalues at each chi.

    With ``stop_on_overlap`` the sweep runs from the largest |chi| down and
    raises NoSeparation as soon as a fourth eigenvalue falls below a low one.
    """
    chis = [np.asarray(c, dtype=float) for c in chis]
    if stop_on_overlap:
        chis = sorted(chis, key=lambda c: -float(c @ c))
    pts, top = [], -np.inf
    for chi in chis:
        t2 = float(chi @ chi)
        spec = lowest_eigenpairs(FiberOperator(ctx.A, chi, ctx.kern), 4, cfg, start=low_start(ctx, chi))
        p = SweepPoint(tuple(chi), tuple(spec.eigenvalues / t2), tuple(hom_eigen(chi, ctx.Ahom) / t2))
        pts.append(p)
        top = max(top, max(p.low[:3]), max(p.hom))
        if stop_on_overlap and min(q.low[3] for q in pts) <= top:
            raise NoSeparation(f"fourth eigenvalue {p.low[3]:.3f} overlaps the low families at chi={np.round(chi, 3)}")
    return pts


def contour_from_sweep(points: list, mu: float, M: int, margin_fraction: float = 0.5) -> Contour:
    """Circle around the six low rescaled families with the fourth family outside.

    The margin is ``margin_fraction`` of the smaller of the left clearance a and
    the gap to the fourth family, so the circle stays in Re z > 0.
    """
    low = np.array([p.low[:3] for p in points] + [p.hom for p in points])
    fourth = np.array([p.low[3] for p in points])
    a, b = float(low.min()), float(low.max())
    gap = float(fourth.min()) - b
    if gap <= 0:
        raise NoSeparation(f"fourth eigenvalue family reaches {fourth.min():.3f} <= {b:.3f}")
    margin = margin_fraction * min(a, gap)
    c = Contour(0.5 * (a + b), 0.5 * (b - a) + margin, M, mu, 0.0, points)
    inside = c.encloses(low)
    if not np.all(inside) or np.any(c.encloses(fourth)):
        raise NoSeparation("contour does not separate the spectra")
    rho0 = float(min(c.distance(low).min(), c.distance(fourth).min()))
    return Contour(c.center, c.radius, M, mu, rho0, points)


def build_contour(ctx: CascadeContext, cfg: SolverConfig, M: int = 64, candidates=None,
                  min_relative_rho0: float = 0.05, sweep_fn=default_sweep) -> Contour:
    """Largest mu in {pi, pi/2, pi/4, ...} whose sweep separates, with rho0 >= min_relative_rho0 * radius."""
    candidates = candidates if candidates is not None else [np.pi / 2 ** i for i in range(6)]
    last = None
    for mu in candidates:
        try:
            c = contour_from_sweep(sweep_spectra(ctx, sweep_fn(mu), cfg, stop_on_overlap=True), mu, M)
        except NoSeparation as exc:
            last = exc
            continue
        if c.rho0_measured >= min_relative_rho0 * c.radius:
            return c
        last = NoSeparation(f"buffer {c.rho0_measured:.3g} too small at mu={mu:.4f}")
    raise NoSeparation(f"no candidate mu separates the spectrum ({last})")


def g_eval(eps: float, chi, z):
    """(|chi|^2 z / eps^2 + 1)^{-1}."""
    t2 = float(np.sum(np.asarray(chi, dtype=float) ** 2))
    return 1.0 / (t2 * np.asarray(z) / eps ** 2 + 1.0)


def in_box(chi, mu: float) -> bool:
    chi = np.asarray(chi, dtype=float)
    return bool(np.any(chi) and np.all(np.abs(chi) <= mu))


def contour_resolvent(op: FiberOperator, contour: Contour, eps_list, f: SpectralField,
                      cfg: SolverConfig) -> list:
    """-(1/2 pi i) oint g(z) (A_chi/|chi|^2 - z)^{-1} f dz by trapezoid, for each eps."""
    from .fiber import solve_resolvent

    sols = [solve_resolvent(op, z, f, cfg).coeffs for z in contour.nodes]
    sols = np.array(sols)
    out = []
    for eps in eps_list:
        w = contour.weights * g_eval(eps, op.chi, contour.nodes)
        out.append(SpectralField(op.grid, np.einsum("m,m...->...", w, sols)))
    return out


def rescaled_terms(ctx: CascadeContext, chi, eps, f, n: int, contour: Contour,
                   u1_route: str = "basis", final_u2: bool = True) -> dict:
    """(j, k) -> coefficient array of -(1/2 pi i) oint g(z) u_j^(k)(z) dz.

    ``eps`` may be a list; the result then maps each eps to its dict. Outside
    the mu-box every rescaled term is zero.
    """
    eps_list = list(np.atleast_1d(eps))
    fc = f.coeffs if isinstance(f, SpectralField) else np.asarray(f)
    if not in_box(chi, contour.mu):
        zero = np.zeros_like(fc)
        keys = [(j, k) for k in range(n + 1) for j in range(3)]
        res = [{jk: zero for jk in keys} for _ in eps_list]
    else:
        st = run_cascade(ctx, chi, contour.nodes, fc, n, u1_route=u1_route, final_u2=final_u2)
        res = []
        for e in eps_list:
            w = contour.weights * g_eval(e, chi, contour.nodes)
            res.append({jk: np.einsum("m,m...->...", w, c) for jk, c in st.terms.items()})
    return res if np.ndim(eps) else res[0]


def rescaled_corrector_apply(j: int, k: int, chi, eps: float, f: SpectralField, contour: Contour,
                             ctx: CascadeContext, u1_route: str = "solve") -> SpectralField:
    terms = rescaled_terms(ctx, chi, eps, f, k, contour, u1_route=u1_route, final_u2=(j == 2))
    return SpectralField(ctx.grid, terms[(j, k)])


# ---------------------------------------------------------------- Rayleigh quotient bounds

def rayleigh_quotient(op: FiberOperator, u) -> float:
    c = u.coeffs if isinstance(u, SpectralField) else np.asarray(u)
    return float(np.vdot(c, op.apply_coeffs(c)).real / np.vdot(c, c).real)


@dataclass(frozen=True)
class RayleighConstants:
    """Explicit sandwich constants for chi in [-pi, pi]^3.

    Per Fourier mode the strain is sym(u q^T) with q = 2 pi k + chi, and
    |sym(u q^T)|^2 >= |u|^2 |q|^2 / 2. Inside the dual cell |q| >= |chi| for
    every k and |q| >= pi for k != 0, which gives the two lower bounds.
    """

    lower: float        # R >= lower |chi|^2 for all fields
    lower_mean_zero: float  # R >= lower_mean_zero for mean-zero fields
    upper: float        # R <= upper |chi|^2 for constants

    @classmethod
    def from_tensor(cls, A) -> "RayleighConstants":
        m = np.moveaxis(A.mandel, (0, 1), (-2, -1)).reshape(-1, 6, 6)
        ev = np.linalg.eigvalsh(0.5 * (m + np.swapaxes(m, 1, 2)))
        nu, top = float(ev[:, 0].min()), float(ev[:, -1].max())
        return cls(nu / 2, nu * np.pi ** 2 / 2, top)


@dataclass(frozen=True)
class RayleighSweep:
    constants: RayleighConstants
    trials: int
    min_all: float        # min R / (lower |chi|^2) over random fields
    min_mean_zero: float  # min R / lower_mean_zero over random mean-zero fields
    max_const: float      # max R / (upper |chi|^2) over random constants

    @property
    def passed(self) -> bool:
        return self.min_all >= 1 and self.min_mean_zero >= 1 and self.max_const <= 1

    def to_report(self) -> dict:
        c = self.constants
        return {"lower": c.lower, "lower_mean_zero": c.lower_mean_zero, "upper": c.upper, "trials": self.trials,
                "min_ratio_all": self.min_all, "min_ratio_mean_zero": self.min_mean_zero,
                "max_ratio_constants": self.max_const, "passed": self.passed}


def rayleigh_sweep(A, kernels, rng: np.random.Generator, trials: int = 100, mu: float = np.pi,
                   kmax: int | None = 2) -> RayleighSweep:
    """Random chi in [-mu, mu]^3 with random fields, mean-zero fields and constants."""
    from .grid import random_field

    consts = RayleighConstants.from_tensor(A)
    g = A.grid
    r_all, r_zero, r_const = np.inf, np.inf, 0.0
    for _ in range(trials):
        chi = rng.uniform(-mu, mu, 3)
        t2 = float(chi @ chi)
        if t2 == 0:
            continue
        op = FiberOperator(A, chi, kernels)
        u = random_field(g, rng, kmax=kmax)
        r_all = min(r_all, rayleigh_quotient(op, u) / (consts.lower * t2))
        v = random_field(g, rng, kmax=kmax, mean_zero=True)
        r_zero = min(r_zero, rayleigh_quotient(op, v) / consts.lower_mean_zero)
        c = SpectralField.constant(g, rng.standard_normal(3) + 1j * rng.standard_normal(3))
        rc = rayleigh_quotient(op, c)
        r_const = max(r_const, rc / (consts.upper * t2))
        r_all = min(r_all, rc / (consts.lower * t2))
    return RayleighSweep(consts, trials, float(r_all), float(r_zero), float(r_const))
