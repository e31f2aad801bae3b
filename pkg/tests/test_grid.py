import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from elastohom.errors import GridMismatch, InvalidInput
from elastohom.grid import (CellGrid, SpectralField, StrainField, fiber_strain, mandel_to_matrix,
                            mandel_to_sym_small, matrix_to_mandel, norms, random_field, random_strain,
                            sym_gradient, sym_gradient_adjoint, sym_outer, sym_outer_adjoint,
                            sym_to_mandel_small, x_chi_apply)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
vec3 = arrays(np.float64, 3, elements=finite)
cvec3 = st.tuples(vec3, vec3).map(lambda p: p[0] + 1j * p[1])


def test_grid_rejects_odd_or_small():
    for n in (3, 2, 7, 0):
        with pytest.raises(InvalidInput):
            CellGrid(n)


def test_grid_mismatch_raises():
    with pytest.raises(GridMismatch):
        CellGrid(8).check(CellGrid(16))


def test_active_mask_excludes_nyquist(grid8):
    assert grid8.active_mask.sum() == 7 ** 3
    assert not grid8.active_mask[4, 0, 0]


def test_fft_roundtrip_and_parseval(grid8, rng):
    v = rng.standard_normal((3,) + grid8.shape) + 1j * rng.standard_normal((3,) + grid8.shape)
    c = grid8.fft(v)
    assert np.allclose(grid8.ifft(c), v, atol=1e-13)
    # normalized coefficients: mean square of nodal values equals coefficient energy
    assert np.isclose(np.mean(np.abs(v) ** 2) * 3, np.sum(np.abs(c) ** 2) * 1.0, rtol=1e-12)


def test_mean_is_zero_mode(grid8, rng):
    v = rng.standard_normal((3,) + grid8.shape)
    u = SpectralField.from_values(grid8, v)
    assert np.allclose(u.mean(), v.mean(axis=(1, 2, 3)), atol=1e-14)


def test_field_norm_matches_nodal_norm(grid8, rng):
    u = random_field(grid8, rng)
    assert np.isclose(u.norm(), u.node_norm(), rtol=1e-12)


def test_sym_gradient_adjointness(grid8, rng):
    u = random_field(grid8, rng)
    s = random_strain(grid8, rng)
    lhs = sym_gradient(u).inner(s)
    rhs = u.inner(sym_gradient_adjoint(s))
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


@given(cvec3, cvec3, cvec3)
def test_sym_outer_adjoint_pairing(u, w, e_seed):
    u4 = u.reshape(3, 1, 1, 1)
    w4 = w.reshape(3, 1, 1, 1)
    e = np.concatenate([e_seed, e_seed[::-1]]).reshape(6, 1, 1, 1)
    lhs = np.vdot(e, sym_outer(u4, w4))
    rhs = np.vdot(sym_outer_adjoint(e, w4), u4)
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


@given(cvec3, cvec3)
def test_rank_one_symmetric_inequality(a, b):
    # |a (x) b| <= 2 |sym(a (x) b)|, exact for every complex pair
    full = np.linalg.norm(np.outer(a, b))
    sym = np.linalg.norm(sym_outer(a.reshape(3, 1, 1, 1), b.reshape(3, 1, 1, 1)))
    assert full <= 2 * sym * (1 + 1e-12) + 1e-300


@given(vec3)
def test_x_chi_sandwich(chi):
    g = CellGrid(4)
    u = random_field(g, np.random.default_rng(7))
    x = x_chi_apply(u, chi).norm()
    c = np.linalg.norm(chi)
    assert 0.5 * c * u.norm() <= x * (1 + 1e-12) + 1e-14
    assert x <= c * u.norm() * (1 + 1e-12) + 1e-14


@given(arrays(np.float64, (3, 3), elements=finite))
def test_mandel_roundtrip(m):
    s = 0.5 * (m + m.T)
    e = sym_to_mandel_small(s)
    assert np.allclose(mandel_to_sym_small(e), s)
    assert np.isclose(np.linalg.norm(e), np.linalg.norm(s))


def test_mandel_field_roundtrip(grid8, rng):
    s = random_strain(grid8, rng)
    back = matrix_to_mandel(mandel_to_matrix(s.coeffs))
    assert np.allclose(back, s.coeffs, atol=1e-15)


def test_fiber_strain_splits(grid8, rng):
    chi = np.array([0.3, -0.1, 0.2])
    u = random_field(grid8, rng)
    lhs = fiber_strain(u, chi).coeffs
    rhs = sym_gradient(u).coeffs + 1j * x_chi_apply(u, chi).coeffs
    assert np.allclose(lhs, rhs, atol=1e-14)


def test_norms_of_plane_wave(grid8):
    c = np.zeros((3,) + grid8.shape, dtype=complex)
    c[0, 1, 0, 0] = 1.0
    u = SpectralField(grid8, c)
    nrm = norms(u)
    assert np.isclose(nrm.l2, 1.0)
    assert np.isclose(nrm.h1 ** 2, 1 + (2 * np.pi) ** 2)


def test_strain_field_shape_checked(grid8):
    with pytest.raises(GridMismatch):
        StrainField(grid8, np.zeros((3,) + grid8.shape))
