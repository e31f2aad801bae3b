import numpy as np
import pytest

from elastohom.coefficients import isotropic_constant
from elastohom.errors import EmptySpectrumList, GridMismatch, IncompatibleRHS, InvalidInput, NoConvergence
from elastohom.fiber import (FiberOperator, SolverConfig, distance_to_spectrum, korn_constant, resolvent_residual,
                             solve_cell, solve_resolvent)
from elastohom.grid import CellGrid, SpectralField, StrainField, norms, random_field, sym_gradient
from oracles import DenseFiber, isotropic_mandel, sym_strain_mandel


def single_mode(grid, k, vec):
    c = np.zeros((3,) + grid.shape, dtype=complex)
    c[(slice(None),) + tuple(np.asarray(k) % grid.n_per_axis)] = vec
    return SpectralField(grid, c)


def mean_free(u):
    c = u.coeffs * u.grid.active_mask
    c[:, 0, 0, 0] = 0
    return SpectralField(u.grid, c)


def test_constants_in_kernel_at_zero_chi(modulated8):
    u = SpectralField.constant(modulated8.grid, [1.0, -2.0, 0.5])
    assert np.abs(FiberOperator(modulated8, np.zeros(3)).apply(u).coeffs).max() < 1e-13


def test_constant_tensor_single_mode_symbol(grid8):
    lam, mu = 1.3, 0.8
    A = isotropic_constant(grid8, lam, mu)
    chi = np.array([0.3, -0.1, 0.2])
    k = (1, -2, 3)
    c = np.array([1.0, 0.5j, -0.25])
    out = FiberOperator(A, chi).apply(single_mode(grid8, k, c)).coeffs.copy()
    q = 2 * np.pi * np.array(k) + chi
    B = np.array([sym_strain_mandel(a, q) for a in range(3)]).T
    expected = B.conj().T @ isotropic_mandel(lam, mu) @ B @ c
    assert np.allclose(out[(slice(None),) + tuple(np.array(k) % 8)], expected, atol=1e-12)
    out[(slice(None),) + tuple(np.array(k) % 8)] = 0
    assert np.abs(out).max() < 1e-12


def test_operator_matches_dense_galerkin(modulated8, rng):
    chi = [0.4, -0.3, 0.1]
    D = DenseFiber(modulated8.components, chi)
    u = random_field(modulated8.grid, rng).coeffs * modulated8.grid.active_mask
    assert np.allclose(FiberOperator(modulated8, chi).apply_coeffs(u), D.apply(u), atol=1e-12)


def test_hermitian_on_random_pairs(modulated8, rng):
    op = FiberOperator(modulated8, [0.2, 0.7, -0.4])
    for _ in range(20):
        u, v = random_field(modulated8.grid, rng), random_field(modulated8.grid, rng)
        a, b = op.apply(u).inner(v), u.inner(op.apply(v))
        assert abs(a - b) <= 1e-12 * abs(a)
        assert abs(op.form(u, v) - u.inner(op.apply(v))) <= 1e-12 * abs(a)


def test_apply_grid_mismatch(modulated8, rng):
    with pytest.raises(GridMismatch):
        FiberOperator(modulated8, [0.1, 0, 0]).apply(random_field(CellGrid(4), rng))


def test_resolvent_constant_tensor_single_mode(grid8, tight):
    A = isotropic_constant(grid8, 1.0, 1.0)
    chi = np.array([0.2, 0.1, -0.3])
    z = 1.5 + 0.7j
    k = (0, 1, -1)
    c = np.array([1.0, 2.0, -1j])
    u = solve_resolvent(FiberOperator(A, chi), z, single_mode(grid8, k, c), tight).coeffs
    q = 2 * np.pi * np.array(k) + chi
    B = np.array([sym_strain_mandel(a, q) for a in range(3)]).T
    S = B.conj().T @ isotropic_mandel(1.0, 1.0) @ B / (chi @ chi) - z * np.eye(3)
    assert np.allclose(u[(slice(None),) + tuple(np.array(k) % 8)], np.linalg.solve(S, c), rtol=1e-10)


@pytest.mark.parametrize("z", [-1.0, 1.2 + 0.9j, 3.0 - 0.4j])
def test_resolvent_matches_dense_oracle(modulated8, tight, rng, z):
    chi = np.array([0.15, 0.05, -0.1])
    op = FiberOperator(modulated8, chi)
    f = SpectralField(modulated8.grid, random_field(modulated8.grid, rng).coeffs * modulated8.grid.active_mask)
    u = solve_resolvent(op, z, f, tight)
    ref = DenseFiber(modulated8.components, chi).resolvent(z, f.coeffs)
    assert np.linalg.norm(u.coeffs - ref) <= 1e-9 * np.linalg.norm(ref)
    assert resolvent_residual(op, z, u, f) <= 1e-11


def test_resolvent_linear(modulated8, tight, rng):
    op = FiberOperator(modulated8, [0.3, 0.0, 0.1])
    f = random_field(modulated8.grid, rng)
    a = 2.0 - 3.0j
    u1 = solve_resolvent(op, -1.0, f * a, tight)
    u2 = solve_resolvent(op, -1.0, f, tight) * a
    assert (u1 - u2).norm() <= 1e-10 * u1.norm()


def test_resolvent_needs_nonzero_chi(modulated8, tight, rng):
    with pytest.raises(InvalidInput):
        solve_resolvent(FiberOperator(modulated8, np.zeros(3)), -1.0, random_field(modulated8.grid, rng), tight)


def test_resolvent_iteration_cap(modulated8, rng):
    op = FiberOperator(modulated8, [0.3, 0.2, 0.1])
    with pytest.raises(NoConvergence):
        solve_resolvent(op, 1.0 + 0.5j, random_field(modulated8.grid, rng), SolverConfig(cg_tol=1e-14, max_iter=3))


def test_cell_zero_rhs(modulated8, tight):
    u = solve_cell(modulated8, None, SpectralField.zeros(modulated8.grid), tight)
    assert np.abs(u.coeffs).max() == 0


def test_cell_constant_tensor_constant_strain_gives_zero(grid8, tight):
    A = isotropic_constant(grid8, 1.0, 2.0)
    s = StrainField.from_matrix_values(grid8, np.broadcast_to(np.diag([1.0, -0.5, 2.0])[:, :, None, None, None],
                                                              (3, 3) + grid8.shape))
    assert np.abs(solve_cell(A, s, None, tight).coeffs).max() < 1e-14


def test_cell_solution_satisfies_weak_form(modulated8, tight, rng):
    g = modulated8.grid
    w = mean_free(random_field(g, rng))
    u = solve_cell(modulated8, None, w, tight)
    assert np.allclose(u.mean(), 0)
    op = FiberOperator(modulated8, np.zeros(3))
    for _ in range(5):
        v = random_field(g, rng)
        assert abs(op.form(u, v) - w.inner(v)) <= 1e-10 * w.norm() * v.norm()


def test_cell_incompatible_rhs(modulated8, tight):
    with pytest.raises(IncompatibleRHS):
        solve_cell(modulated8, None, SpectralField.constant(modulated8.grid, [1.0, 0, 0]), tight)


def test_distance_to_spectrum():
    assert distance_to_spectrum(-1, [0.0, 0.5, 3.0]) >= 1
    assert distance_to_spectrum(2.0, [1.0, 2.0]) == 0
    assert distance_to_spectrum(5 + 0j, [1, 2, 10]) == 3
    with pytest.raises(EmptySpectrumList):
        distance_to_spectrum(1.0, [])


def test_korn_inequality_on_random_fields(grid8, rng):
    C = korn_constant(grid8)
    assert C >= 1
    for _ in range(20):
        u = mean_free(random_field(grid8, rng))
        assert norms(u).h1 <= C * sym_gradient(u).norm() * (1 + 1e-12)
