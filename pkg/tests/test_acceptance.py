"""Acceptance criteria 1-10. Each test records one PASS/FAIL line, printed in the terminal summary.

The grid for the heavy runs defaults to 16 and can be changed with ELASTOHOM_ACCEPT_GRID.
"""
import os
import time

import numpy as np
import pytest

from elastohom.cascade import (CascadeContext, cascade_constants, hom_distance, run_cascade, run_cycle0, term_bounds,
                               verify_error_equation)
from elastohom.coefficients import isotropic_constant, isotropic_modulated, validate
from elastohom.fiber import FiberOperator, SolverConfig, korn_constant
from elastohom.fullspace import DEFAULT_LADDER, default_source, fiberwise_rates, run_convergence
from elastohom.grid import (CellGrid, SpectralField, random_field, sym_gradient, sym_gradient_adjoint, sym_outer,
                            x_chi_apply)
from elastohom.homogenize import a_chi_hom, a_chi_hom_direct, homogenized_tensor, x_chi_matrix
from elastohom.spectral import (build_contour, contour_resolvent, low_start, lowest_eigenpairs, rayleigh_sweep,
                                windowed_resolvent)
from oracles import DenseFiber

GRID = int(os.environ.get("ELASTOHOM_ACCEPT_GRID", "16"))
RESULTS = {}


def record(k: int, ok: bool, detail: str) -> None:
    RESULTS[k] = (bool(ok), detail)
    print(f"criterion {k}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


@pytest.fixture(scope="module")
def cfg():
    return SolverConfig(cg_tol=1e-12)


@pytest.fixture(scope="module")
def ctx(cfg):
    return CascadeContext(isotropic_modulated(CellGrid(GRID), 1.0, 1.0, 0.3), cfg)


@pytest.fixture(scope="module")
def contour(ctx, cfg):
    return build_contour(ctx, cfg, M=64)


@pytest.fixture(scope="module")
def convergence(ctx, contour, cfg):
    t = time.perf_counter()
    rep = run_convergence(ctx, contour, default_source(), cfg, eps_ladder=DEFAULT_LADDER, n_max=3)
    return rep, time.perf_counter() - t


def test_criterion_01_fiberwise_rate(ctx, contour, cfg):
    rng = np.random.default_rng(11)
    f = random_field(ctx.grid, rng, kmax=2)
    z = contour.nodes[contour.M // 8]
    t = time.perf_counter()
    res = fiberwise_rates(ctx, [1, 1, 0], z, f, cfg, chi_norms=DEFAULT_LADDER, n_max=3)
    dt = time.perf_counter() - t
    ok = all(abs(s - (n + 1)) <= 0.25 for n, s in enumerate(res.slopes)) and dt < 600
    record(1, ok, f"grid {GRID}, slopes " + ", ".join(f"{s:.3f}" for s in res.slopes) + f", {dt:.0f} s")


def _slope_detail(rep, norm, ns):
    d = rep.slopes["reduced_l2"]
    return ", ".join(f"n={n}: {d[str(n)][norm]:.3f}" for n in ns)


def test_criterion_02_fullspace_l2(convergence):
    rep, dt = convergence
    checks = [c for c in rep.checks if c["norm"] == "l2" and c["n"] in (0, 1, 2)]
    ok = (len(checks) == 3 and all(abs(c["slope"] - (c["n"] + 1)) <= 0.3 and c["monotone"] for c in checks)
          and dt < 1800)
    record(2, ok, f"grid {GRID}, L2 slopes {_slope_detail(rep, 'l2', (0, 1, 2))}, monotone, {dt:.0f} s")


def test_criterion_03_fullspace_h1(convergence):
    rep, _ = convergence
    checks = [c for c in rep.checks if c["norm"] == "h1" and c["n"] in (1, 2, 3)]
    ok = len(checks) == 3 and all(abs(c["slope"] - c["n"]) <= 0.3 and c["monotone"] for c in checks)
    record(3, ok, f"grid {GRID}, H1 slopes {_slope_detail(rep, 'h1', (1, 2, 3))}")


def test_criterion_04_contour_vs_eigen_route(contour, cfg):
    A = isotropic_modulated(CellGrid(8), 1.0, 1.0, 0.3)
    small = CascadeContext(A, cfg)
    rng = np.random.default_rng(4)
    f = random_field(small.grid, rng)
    theta = np.array([1.0, 2.0, 3.0]) / np.sqrt(14)
    eps_list = [2.0 ** -k for k in range(3, 8)]
    worst, separated = 0.0, True
    for k in range(5, 10):
        chi = theta * 2.0 ** -k
        op = FiberOperator(A, chi, small.kern)
        sp = lowest_eigenpairs(op, 4, cfg, start=low_start(small, chi))
        rescaled = sp.eigenvalues / (chi @ chi)
        separated &= bool(contour.encloses(rescaled[:3]).all() and not contour.encloses(rescaled[3]))
        for e, u in zip(eps_list, contour_resolvent(op, contour, eps_list, f, cfg)):
            ref = windowed_resolvent(sp, e, f)
            worst = max(worst, (u - ref).norm() / ref.norm())
    record(4, worst <= 1e-8 and separated, f"5x5 grid |chi| in 2^-5..2^-9, eps in 2^-3..2^-7, M={contour.M}, "
                                           f"max relative difference {worst:.2e}")


def test_criterion_05_cycle0_closed_form(ctx, contour):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(10):
        chi = rng.uniform(-contour.mu, contour.mu, 3)
        z = contour.nodes[rng.integers(contour.M)]
        f = random_field(ctx.grid, rng, kmax=2)
        st = run_cycle0(ctx, chi, z, f)
        t2 = chi @ chi
        u0 = np.linalg.solve(a_chi_hom(ctx.Ahom, chi) / t2 - z * np.eye(3), f.mean())
        got = st.term(0, 0).mean()
        worst = max(worst, np.linalg.norm(got - u0) / np.linalg.norm(u0))
        n1 = ctx.basis.combine(1j * (x_chi_matrix(chi) @ u0))
        worst = max(worst, np.linalg.norm(st.coeffs(1, 0) - n1) / np.linalg.norm(n1))
    record(5, worst <= 1e-8, f"10 random fibers, max relative mismatch {worst:.2e}")


def test_criterion_06_error_equation(cfg):
    A = isotropic_modulated(CellGrid(8), 1.0, 1.0, 0.3)
    small = CascadeContext(A, cfg)
    rng = np.random.default_rng(6)
    chi, z = np.array([0.21, -0.13, 0.08]), 1.4 + 0.9j
    f = random_field(small.grid, rng, kmax=3)
    exact = SpectralField(small.grid, DenseFiber(A.components, chi).resolvent(z, f.coeffs))
    defects = [verify_error_equation(small, run_cascade(small, chi, z, f, n), exact, 20, rng) for n in (0, 1, 2)]
    record(6, max(defects) <= 1e-7, "dense Galerkin oracle on 8^3, defects " + ", ".join(f"{d:.1e}" for d in defects))


def test_criterion_07_route_equivalence(ctx, cfg):
    worst = 0.0
    for chi in np.random.default_rng(7).uniform(-np.pi, np.pi, (8, 3)):
        d = a_chi_hom_direct(ctx.A, chi, cfg, ctx.kern)
        ref = a_chi_hom(ctx.Ahom, chi)
        worst = max(worst, np.abs(d - ref).max() / np.abs(ref).max())
    A0 = isotropic_constant(ctx.grid, 1.0, 1.0)
    H0, _ = homogenized_tensor(A0, cfg)
    const_err = np.abs(H0.mandel - A0.mean_mandel).max()
    record(7, worst <= 1e-8 and const_err <= 1e-14,
           f"8 chi, max relative difference {worst:.2e}; constant tensor |A_hom - A| = {const_err:.1e}")


def test_criterion_08_spectral_structure(ctx, contour):
    sweep = rayleigh_sweep(ctx.A, ctx.kern, np.random.default_rng(8), trials=100)
    enclosed = all(contour.encloses(np.array(p.low[:3])).all() and contour.encloses(np.array(p.hom)).all()
                   and not contour.encloses(p.low[3]) for p in contour.sweep)
    ok = sweep.passed and contour.rho0_measured > 0 and enclosed and contour.center - contour.radius > 0
    ratios = f"{sweep.min_all:.3f}/{sweep.min_mean_zero:.3f}/{sweep.max_const:.3f}"
    record(8, ok, f"Rayleigh ratios {ratios} over 100 trials, "
                  f"mu={contour.mu:.4f}, rho0={contour.rho0_measured:.3f}, 3+3 enclosure at {len(contour.sweep)} chi")


def test_criterion_09_property_suites():
    rng = np.random.default_rng(9)
    rank_ok = True
    for _ in range(1000):
        a = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        b = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        full = np.linalg.norm(np.outer(a, b))
        sym = np.linalg.norm(sym_outer(a.reshape(3, 1, 1, 1), b.reshape(3, 1, 1, 1)))
        rank_ok &= bool(full <= 2 * sym)
    g = CellGrid(8)
    sand_ok = True
    for _ in range(100):
        u = random_field(g, rng)
        chi = rng.uniform(-np.pi, np.pi, 3)
        x, c = x_chi_apply(u, chi).norm(), np.linalg.norm(chi)
        sand_ok &= bool(0.5 * c * u.norm() <= x * (1 + 1e-13) and x <= c * u.norm() * (1 + 1e-13))
    worst = 0.0
    for _ in range(20):
        v = rng.standard_normal((3,) + g.shape) + 1j * rng.standard_normal((3,) + g.shape)
        worst = max(worst, abs(np.mean(np.abs(v) ** 2) * 3 - np.sum(np.abs(g.fft(v)) ** 2)) / np.sum(np.abs(v) ** 2))
        u = random_field(g, rng)
        s = sym_gradient(random_field(g, rng))
        lhs, rhs = sym_gradient(u).inner(s), u.inner(sym_gradient_adjoint(s))
        worst = max(worst, abs(lhs - rhs) / (sym_gradient(u).norm() * s.norm()))
    record(9, rank_ok and sand_ok and worst <= 1e-12,
           f"rank-one 1000 trials {'ok' if rank_ok else 'violated'}, X_chi sandwich 100 trials "
           f"{'ok' if sand_ok else 'violated'}, Parseval/adjointness defect {worst:.1e}")


def test_criterion_10_constants_and_bounds(ctx, contour):
    c = cascade_constants(1.0, 1.0)
    exact = (c.C0, c.C1, c.C2, c.C, c.C_error) == (3.0, 3.0, 30.0, 30.0, 32.0)
    measured = cascade_constants(validate(ctx.A).nu_measured, korn_constant(ctx.grid))
    rng = np.random.default_rng(10)
    f = random_field(ctx.grid, rng, kmax=2)
    worst = 0.0
    for r in (0.4, 0.1, 0.025):
        chi = r * np.array([0.48, 0.6, 0.64])
        for z in contour.nodes[::16]:
            st = run_cascade(ctx, chi, z, f, 3)
            tn = st.term_norms()
            for n in range(4):
                for consts in (c, measured):
                    for jk, bound in term_bounds(consts, n, z, hom_distance(st), r, f.norm()).items():
                        worst = max(worst, tn[jk]["h1"] / bound)
    record(10, exact and worst <= 1.0, f"constants(1, 1) = 3/3/30/30/32 {'exact' if exact else 'WRONG'}; "
                                       f"max term norm / bound {worst:.1e}")
