"""Full-space convergence harness.

A source with compactly supported Fourier transform is represented by a finite
quadrature in frequency. Each node becomes one fiber at chi = 2 pi eps theta,
where exact and expanded solutions are compared in the cell norms; the
full-space norms follow as weighted sums over fibers.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cascade import CascadeContext, run_cascade
from .errors import EpsilonTooLarge, InsufficientData, InvalidInput, MismatchedFibers
from .fiber import FiberOperator, SolverConfig
from .grid import SpectralField, gradient_norm_sq
from .spectral import Contour, FiberSpectrum, g_eval, in_box, low_start, lowest_eigenpairs

log = logging.getLogger(__name__)

TRUNCATIONS = ("full", "reduced_l2", "reduced_h1")
BLOCH_EIG_RTOL = 1e-9
DEFAULT_LADDER = tuple(2.0 ** -k for k in range(3, 8))


@dataclass(frozen=True, eq=False)
class BlochSource:
    nodes: np.ndarray       # (q, 3) frequencies theta
    weights: np.ndarray     # (q,) quadrature weights in theta
    amplitudes: np.ndarray  # (q, 3) complex Fourier values
    K_radius: float

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 2 or nodes.shape[1] != 3 or len(nodes) == 0:
            raise InvalidInput("nodes must have shape (q, 3), q >= 1")
        if np.asarray(self.weights).shape != (len(nodes),) or np.any(np.asarray(self.weights) <= 0):
            raise InvalidInput("one positive weight per node required")
        if np.asarray(self.amplitudes).shape != (len(nodes), 3):
            raise InvalidInput("one complex 3-vector amplitude per node required")
        if np.any(np.linalg.norm(nodes, axis=1) > self.K_radius * (1 + 1e-12)):
            raise InvalidInput("all nodes must lie in the ball of radius K_radius")
        if np.any(np.linalg.norm(nodes, axis=1) == 0):
            raise InvalidInput("theta = 0 is not a fiber (chi would vanish)")

    @property
    def l2_surrogate(self) -> float:
        """sum_q w_q |c_q|^2, the quadrature value of ||f||^2."""
        return math.fsum(float(w) * float(np.sum(np.abs(c) ** 2)) for w, c in zip(self.weights, self.amplitudes))


def default_source(n_nodes: int = 7, K_radius: float = 1.0, node_radius: float = 0.6,
                   seed: int = 0) -> BlochSource:
    """Axis points +-e_i at ``node_radius`` followed by generic directions; equal weights filling the ball."""
    if n_nodes < 1:
        raise InvalidInput("need at least one node")
    if not 0 < node_radius <= K_radius:
        raise InvalidInput("node radius must lie in (0, K_radius]")
    axes = np.concatenate([np.eye(3), -np.eye(3)])
    extra = max(0, n_nodes - 6)
    generic = np.array([[1.0, 2.0, 3.0], [-3.0, 1.0, 2.0], [2.0, -3.0, 1.0]])
    dirs = np.concatenate([axes, generic[:min(extra, 3)]])
    if extra > 3:
        from .homogenize import fibonacci_directions
        dirs = np.concatenate([dirs, fibonacci_directions(extra - 3) + 0.1])
    dirs = dirs[:n_nodes]
    nodes = node_radius * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    weights = np.full(n_nodes, (4.0 * np.pi / 3.0) * K_radius ** 3 / n_nodes)
    rng = np.random.default_rng(seed)
    amps = rng.standard_normal((n_nodes, 3)) + 1j * rng.standard_normal((n_nodes, 3))
    return BlochSource(nodes, weights, amps, K_radius)


@dataclass(frozen=True, eq=False)
class FiberDatum:
    index: int
    chi: np.ndarray
    weight: float
    amplitude: np.ndarray
    eps: float


def fibers_for_epsilon(src: BlochSource, eps: float, mu: float) -> list:
    """chi_q = 2 pi eps theta_q with weights (2 pi eps)^3 w_q.

    Amplitudes carry (2 pi eps)^{-3/2} so that the fiber data are the
    Gelfand transform of a fixed function: sum_q weight |amplitude|^2 does not
    depend on eps.
    """
    if eps <= 0:
        raise InvalidInput("eps must be positive")
    s = 2 * np.pi * eps
    if s * src.K_radius > mu:
        raise EpsilonTooLarge(f"2 pi eps K_radius = {s * src.K_radius:.4f} exceeds mu = {mu:.4f}")
    out = []
    for q, (theta, w, c) in enumerate(zip(src.nodes, src.weights, src.amplitudes)):
        out.append(FiberDatum(q, s * np.asarray(theta, dtype=float), float(w) * s ** 3,
                              np.asarray(c, dtype=complex) * s ** -1.5, float(eps)))
    return out


def fiber_spectrum(ctx: CascadeContext, chi, cfg: SolverConfig, m: int = 3) -> FiberSpectrum:
    op = FiberOperator(ctx.A, chi, ctx.kern)
    return lowest_eigenpairs(op, m, cfg, rtol=BLOCH_EIG_RTOL, start=low_start(ctx, chi))


def bloch_rhs(datum: FiberDatum, spec: FiberSpectrum) -> np.ndarray:
    """sum_{i<=3} (c . conj(m_i)) w_i: the low spectral projection of the constant c."""
    means = spec.means[:3]
    coef = np.conj(means) @ datum.amplitude
    return np.einsum("i,i...->...", coef, spec.vectors[:3])


def bloch_approximate(fiber_data: list, spectra: list) -> list:
    if len(fiber_data) != len(spectra):
        raise MismatchedFibers("one spectrum per fiber required")
    return [bloch_rhs(d, s) for d, s in zip(fiber_data, spectra)]


def exact_fiber_solution(ctx: CascadeContext, chi, eps: float, rhs, cfg: SolverConfig) -> SpectralField:
    """((1/eps^2) A_chi + I)^{-1} rhs by preconditioned CG."""
    op = FiberOperator(ctx.A, chi, ctx.kern)
    if op.chi_norm == 0:
        raise InvalidInput("chi must be nonzero")
    r = rhs.coeffs if isinstance(rhs, SpectralField) else np.asarray(rhs, dtype=complex)
    u, _ = op.solve_shifted(1.0 / eps ** 2, 1.0, r, cfg, hermitian=True)
    return SpectralField(ctx.grid, u)


def truncation_selection(n: int, truncation: str) -> list:
    """(j, k) terms kept in the n-cycle sum for each truncation mode."""
    if truncation not in TRUNCATIONS:
        raise InvalidInput(f"unknown truncation {truncation!r}")
    keys = [(j, k) for k in range(n + 1) for j in range(3)]
    drop = set()
    if truncation in ("reduced_l2", "reduced_h1"):
        drop |= {(2, n - 1), (1, n), (2, n)}
    if truncation == "reduced_h1":
        drop.add((0, n))
    return [jk for jk in keys if jk not in drop]


def rescaled_fiber_terms(ctx: CascadeContext, chi, eps: float, rhs, n: int, contour: Contour,
                         final_u2: bool = True) -> dict:
    """(j, k) -> -(1/2 pi i) oint g(z) u_j^(k)(z) dz, one batched cascade over the contour nodes."""
    r = rhs.coeffs if isinstance(rhs, SpectralField) else np.asarray(rhs, dtype=complex)
    if not in_box(chi, contour.mu):
        return {(j, k): np.zeros_like(r) for k in range(n + 1) for j in range(3)}
    st = run_cascade(ctx, chi, contour.nodes, r, n, u1_route="basis", final_u2=final_u2)
    w = contour.weights * g_eval(eps, chi, contour.nodes)
    return {jk: np.einsum("m,m...->...", w, c) for jk, c in st.terms.items()}


def expansion_fiber_solution(ctx: CascadeContext, chi, eps: float, rhs, n: int, contour: Contour,
                             truncation: str = "full") -> SpectralField:
    sel = truncation_selection(n, truncation)
    need_u2 = (2, n) in sel
    terms = rescaled_fiber_terms(ctx, chi, eps, rhs, n, contour, final_u2=need_u2)
    out = np.zeros_like(next(iter(terms.values())))
    for jk in sel:
        out = out + terms[jk]
    return SpectralField(ctx.grid, out)


def fiber_error_parts(grid, chi, eps: float, diff: np.ndarray) -> tuple[float, float]:
    """(||D||^2, eps^-2 ||(grad + i chi) D||^2) in the cell."""
    l2sq = float(np.sum(np.abs(diff) ** 2))
    return l2sq, float(gradient_norm_sq(diff, grid, chi)) / eps ** 2


def assemble_errors(fiber_data: list, eps: float, exact: list, expanded: list) -> dict:
    """Full-space L2 and H1 errors as weighted fiber sums."""
    if not (len(fiber_data) == len(exact) == len(expanded)):
        raise MismatchedFibers("fiber, exact and expanded lists differ in length")
    l2_parts, grad_parts = [], []
    for d, u, v in zip(fiber_data, exact, expanded):
        a = u.coeffs if isinstance(u, SpectralField) else u
        b = v.coeffs if isinstance(v, SpectralField) else v
        if a.shape != b.shape:
            raise MismatchedFibers("exact and expanded fields have different shapes")
        grid = u.grid if isinstance(u, SpectralField) else v.grid
        l2sq, gsq = fiber_error_parts(grid, d.chi, eps, a - b)
        l2_parts.append(d.weight * l2sq)
        grad_parts.append(d.weight * gsq)
    l2sq = math.fsum(l2_parts)
    return {"l2": math.sqrt(l2sq), "h1": math.sqrt(l2sq + math.fsum(grad_parts))}


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    monotone: bool
    n_points: int
    decades: float


def fit_slopes(eps, errors, min_points: int = 4, min_decades: float = 1.2) -> SlopeFit:
    """Least-squares slope of log(error) against log(eps)."""
    eps = np.asarray(eps, dtype=float)
    err = np.asarray(errors, dtype=float)
    if eps.shape != err.shape or eps.ndim != 1:
        raise InvalidInput("eps and errors must be matching 1-D sequences")
    if len(eps) < min_points:
        raise InsufficientData(f"{len(eps)} points, need at least {min_points}")
    decades = float(np.log10(eps.max() / eps.min()))
    if decades < min_decades - 1e-12:
        raise InsufficientData(f"eps spans {decades:.2f} decades, need {min_decades}")
    if np.any(err <= 0) or not np.all(np.isfinite(err)):
        raise InsufficientData("errors must be positive and finite for a log fit")
    slope = float(np.polyfit(np.log(eps), np.log(err), 1)[0])
    order = np.argsort(eps)
    monotone = bool(np.all(np.diff(err[order]) > 0))
    return SlopeFit(slope, monotone, len(eps), decades)


def expected_slopes(n: int, truncation: str) -> tuple:
    """(L2 exponent, H1 exponent, kind) for the n-cycle sum.

    The reduced_l2 sum attains the target rates exactly ("sharp"); the other
    truncations only have to reach them ("bound"). None means no rate is claimed.
    """
    if truncation == "reduced_l2":
        return n + 1, n, "sharp"
    if truncation == "full":
        return n + 1, n, "bound"
    if truncation == "reduced_h1":
        return None, n, "bound"
    raise InvalidInput(f"unknown truncation {truncation!r}")


def slope_ok(got, target, kind: str, tol: float) -> bool:
    if got is None:
        return False
    return abs(got - target) <= tol if kind == "sharp" else got >= target - tol


@dataclass
class ConvergenceReport:
    rows: list
    slopes: dict
    checks: list
    metadata: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks)

    def to_json(self) -> dict:
        return {"rows": self.rows, "slopes": self.slopes, "checks": self.checks,
                "passed": self.passed, "metadata": self.metadata}


def _fiber_work(ctx, cfg, contour, n_max, datum):
    spec = fiber_spectrum(ctx, datum.chi, cfg)
    rhs = bloch_rhs(datum, spec)
    exact = exact_fiber_solution(ctx, datum.chi, datum.eps, rhs, cfg).coeffs
    terms = rescaled_fiber_terms(ctx, datum.chi, datum.eps, rhs, n_max, contour)
    return rhs, exact, terms


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def run_convergence(ctx: CascadeContext, contour: Contour, src: BlochSource, cfg: SolverConfig,
                    eps_ladder=DEFAULT_LADDER, n_max: int = 3, truncations=("reduced_l2",),
                    l2_cycles=None, h1_cycles=None, slope_tol: float = 0.3,
                    workers: int = 1) -> ConvergenceReport:
    """Exact vs expanded solutions over the eps ladder; one slope fit per (truncation, n, norm)."""
    for t in truncations:
        if t not in TRUNCATIONS:
            raise InvalidInput(f"unknown truncation {t!r}")
    l2_cycles = list(range(min(n_max, 2) + 1)) if l2_cycles is None else list(l2_cycles)
    h1_cycles = list(range(1, n_max + 1)) if h1_cycles is None else list(h1_cycles)
    grid = ctx.grid
    kept, per_eps = [], {}
    for eps in sorted(eps_ladder, reverse=True):
        try:
            data = fibers_for_epsilon(src, eps, contour.mu)
        except EpsilonTooLarge as exc:
            log.warning("dropping eps=%g: %s", eps, exc)
            continue
        log.info("eps=%g: %d fibers", eps, len(data))
        results = _map(lambda d: _fiber_work(ctx, cfg, contour, n_max, d), data, workers)
        kept.append(eps)
        per_eps[eps] = (data, results)

    rows = []
    errors = {}
    for eps in kept:
        data, results = per_eps[eps]
        rhs_norm = math.sqrt(math.fsum(d.weight * float(np.sum(np.abs(r[0]) ** 2)) for d, r in zip(data, results)))
        src_norm = math.sqrt(src.l2_surrogate)
        for t in truncations:
            for n in range(n_max + 1):
                sel = truncation_selection(n, t)
                expanded = []
                for (rhs, exact, terms) in results:
                    s = np.zeros_like(exact)
                    for jk in sel:
                        s = s + terms[jk]
                    expanded.append(SpectralField(grid, s))
                err = assemble_errors(data, eps, [SpectralField(grid, r[1]) for r in results], expanded)
                errors[(t, n, eps)] = err
                rows.append({"n": n, "eps": eps, "l2_error": err["l2"], "h1_error": err["h1"],
                             "l2_rel_bloch": err["l2"] / rhs_norm, "h1_rel_bloch": err["h1"] / rhs_norm,
                             "l2_rel_source": err["l2"] / src_norm, "h1_rel_source": err["h1"] / src_norm,
                             "truncation": t, "grid": grid.n_per_axis, "mu": contour.mu, "contour_M": contour.M})

    slopes, checks = {}, []
    for t in truncations:
        slopes[t] = {}
        for n in range(n_max + 1):
            ex = expected_slopes(n, t)
            entry = {"expected_l2": ex[0], "expected_h1": ex[1], "kind": ex[2]}
            for norm in ("l2", "h1"):
                try:
                    fit = fit_slopes(kept, [errors[(t, n, e)][norm] for e in kept])
                    entry[norm] = fit.slope
                    entry[f"{norm}_monotone"] = fit.monotone
                except InsufficientData as exc:
                    entry[norm] = None
                    entry[f"{norm}_monotone"] = False
                    entry[f"{norm}_note"] = str(exc)
            slopes[t][str(n)] = entry
            for norm, cycles, target in (("l2", l2_cycles, ex[0]), ("h1", h1_cycles, ex[1])):
                if n not in cycles or target is None:
                    continue
                got = entry[norm]
                ok = slope_ok(got, target, ex[2], slope_tol) and entry[f"{norm}_monotone"]
                checks.append({"truncation": t, "n": n, "norm": norm, "slope": got, "expected": target,
                               "kind": ex[2], "tolerance": slope_tol, "monotone": entry[f"{norm}_monotone"],
                               "pass": bool(ok)})
    meta = {"grid": grid.n_per_axis, "mu": contour.mu, "contour": contour.to_report(), "cg_tol": cfg.cg_tol,
            "eps": kept, "n_max": n_max, "nodes": len(src.nodes), "source_l2": math.sqrt(src.l2_surrogate)}
    return ConvergenceReport(rows, slopes, checks, meta)


@dataclass
class FiberwiseRates:
    chi_norms: list
    h1_errors: np.ndarray  # (n_max + 1, len(chi_norms))
    slopes: list


def fiberwise_rates(ctx: CascadeContext, direction, z: complex, f: SpectralField, cfg: SolverConfig,
                    chi_norms=DEFAULT_LADDER, n_max: int = 3) -> FiberwiseRates:
    """H1(Y) error of the n-cycle cascade sum against the exact resolvent along a ray chi = r * direction."""
    from .fiber import solve_resolvent
    from .grid import norms

    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    errs = np.zeros((n_max + 1, len(chi_norms)))
    for i, r in enumerate(chi_norms):
        chi = r * d
        exact = solve_resolvent(FiberOperator(ctx.A, chi, ctx.kern), z, f, cfg).coeffs
        st = run_cascade(ctx, chi, z, f, n_max)
        for n in range(n_max + 1):
            errs[n, i] = norms(SpectralField(ctx.grid, exact - st.full_sum(n))).h1
    slopes = [fit_slopes(chi_norms, errs[n]).slope for n in range(n_max + 1)]
    return FiberwiseRates(list(chi_norms), errs, slopes)
