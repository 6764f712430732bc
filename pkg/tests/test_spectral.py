import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nlch.spectral import MeanNotZeroError, SpectralError, SpectralSpace

SPACES = [
    SpectralSpace.unit(1, 33),
    SpectralSpace(1, (2.5,), (17,)),
    SpectralSpace.unit(2, 17),
    SpectralSpace(2, (1.0, 2.0), (9, 13)),
]


def dense_basis(sp):
    """Matrix of L2-orthonormal eigenfunctions sampled on the grid, one column per mode."""
    cols = []
    for idx in np.ndindex(*sp.shape):
        cols.append(sp.basis_function(*idx).ravel())
    return np.array(cols).T


def random_field(sp, seed=0):
    return np.random.default_rng(seed).standard_normal(sp.shape)


@pytest.mark.parametrize("sp", SPACES, ids=str)
def test_transform_matches_dense_basis(sp):
    f = random_field(sp, 1)
    B = dense_basis(sp)
    coeffs = B.T @ f.ravel() * sp.cell_volume
    np.testing.assert_allclose(sp.transform(f).ravel(), coeffs, atol=1e-12 * np.abs(coeffs).max())


@pytest.mark.parametrize("sp", SPACES, ids=str)
def test_round_trip_and_parseval(sp):
    f = random_field(sp, 2)
    c = sp.transform(f)
    assert np.max(np.abs(sp.inverse(c) - f)) <= 1e-12 * np.max(np.abs(f))
    assert np.sum(c**2) == pytest.approx(sp.integrate(f * f), rel=1e-12)


def test_constant_and_first_mode():
    sp = SpectralSpace.unit(1, 33)
    c = sp.transform(np.ones(sp.shape))
    assert c[0] == pytest.approx(1.0, rel=1e-14)
    assert np.max(np.abs(c[1:])) < 1e-14
    x = sp.nodes[0]
    c = sp.transform(np.cos(np.pi * x))
    expected = np.zeros(sp.shape)
    expected[1] = np.sqrt(0.5)  # cos(pi x) = psi_1 / sqrt(2)
    np.testing.assert_allclose(c, expected, atol=1e-14)


def test_eigenvalues_structure():
    sp = SpectralSpace(2, (1.0, 2.0), (9, 13))
    lam = sp.eigenvalues
    assert np.sum(lam == 0) == 1 and lam[0, 0] == 0
    assert np.all(np.diff(lam, axis=0) >= 0) and np.all(np.diff(lam, axis=1) >= 0)
    assert sp.lambda_Omega * sp.first_nonzero_eigenvalue == 1.0
    assert sp.first_nonzero_eigenvalue == pytest.approx((np.pi / 2.0) ** 2)


@pytest.mark.parametrize("value", [3.0, -0.25, 0.0])
def test_mean_of_constant(value):
    sp = SpectralSpace.unit(2, 9)
    assert sp.mean(sp.constant(value)) == pytest.approx(value, abs=1e-15)


def test_mean_of_cosine_and_quadrature():
    sp = SpectralSpace.unit(1, 33)
    x = sp.nodes[0]
    assert abs(sp.mean(np.cos(np.pi * x))) < 1e-16
    f = random_field(sp, 3)
    # midpoint rule (the grid's quadrature) as the oracle
    assert sp.mean(f) == pytest.approx(np.sum(f) / f.size, abs=1e-10)


def test_apply_AN_on_eigenfunction_and_finite_differences():
    sp = SpectralSpace.unit(1, 65)
    x = sp.nodes[0]
    f = np.cos(np.pi * x)
    np.testing.assert_allclose(sp.apply_AN(f), np.pi**2 * f, atol=1e-11)
    h = sp.spacing[0]
    fd = -(np.cos(np.pi * (x + h)) - 2 * f + np.cos(np.pi * (x - h))) / h**2
    np.testing.assert_allclose(sp.apply_AN(f), fd, rtol=1e-3, atol=1e-10)
    np.testing.assert_allclose(sp.apply_AN(sp.constant(2.0)), 0.0, atol=1e-10)


def test_apply_AN_linear():
    sp = SpectralSpace.unit(2, 9)
    f, g = random_field(sp, 4), random_field(sp, 5)
    lhs = sp.apply_AN(2 * f + g)
    rhs = 2 * sp.apply_AN(f) + sp.apply_AN(g)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * np.max(np.abs(lhs))


def test_solve_inverse_AN():
    sp = SpectralSpace.unit(1, 33)
    x = sp.nodes[0]
    np.testing.assert_allclose(sp.solve_inverse_AN(np.pi**2 * np.cos(np.pi * x)), np.cos(np.pi * x), atol=1e-13)
    np.testing.assert_array_equal(sp.solve_inverse_AN(np.zeros(sp.shape)), 0.0)
    with pytest.raises(MeanNotZeroError):
        sp.solve_inverse_AN(np.ones(sp.shape))


@pytest.mark.parametrize("sp", SPACES, ids=str)
def test_inverse_round_trips(sp):
    f = random_field(sp, 6)
    f = f - sp.mean(f)
    back = sp.apply_AN(sp.solve_inverse_AN(f))
    assert np.max(np.abs(back - f)) <= 1e-11 * np.max(np.abs(f))
    back = sp.solve_inverse_AN(sp.apply_AN(f))
    assert np.max(np.abs(back - f)) <= 1e-11 * np.max(np.abs(f))


@pytest.mark.parametrize("sp", SPACES, ids=str)
def test_duality_pairing(sp):
    u, v = random_field(sp, 7), random_field(sp, 8)
    u, v = u - sp.mean(u), v - sp.mean(v)
    lhs = sp.inner(sp.apply_AN(u), sp.solve_inverse_AN(v))
    assert lhs == pytest.approx(sp.inner(u, v), rel=1e-10)


@pytest.mark.parametrize("c", [1.0, -2.5])
def test_norms_of_constant(c):
    sp = SpectralSpace(1, (2.0,), (17,))
    f = sp.constant(c)
    assert sp.norm(f) == pytest.approx(abs(c) * np.sqrt(2.0))
    assert sp.norm(f, "V") == pytest.approx(abs(c))
    assert sp.norm(f, "Vdual") == pytest.approx(abs(c))
    assert sp.norm(f, "H2seminorm") == pytest.approx(0.0, abs=1e-12)


def test_norms_of_cosine():
    sp = SpectralSpace.unit(1, 33)
    f = np.cos(np.pi * sp.nodes[0])
    assert sp.norm(f, "V") ** 2 == pytest.approx(np.pi**2 / 2)
    assert sp.norm(f, "Vdual") ** 2 == pytest.approx(0.5 / np.pi**2)
    assert sp.norm(f, "H2seminorm") ** 2 == pytest.approx(np.pi**4 / 2)
    with pytest.raises(SpectralError):
        sp.norm(f, "H3")


def test_poincare_equality_on_first_mode():
    sp = SpectralSpace(2, (1.0, 2.0), (9, 13))
    f = sp.basis_function(0, 1)
    assert sp.norm(f - sp.mean(f)) == pytest.approx(np.sqrt(sp.lambda_Omega) * sp.grad_norm(f), rel=1e-10)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (17,), elements=st.floats(-1e3, 1e3)))
def test_poincare_property(f):
    sp = SpectralSpace.unit(1, 17)
    assert sp.norm(f - sp.mean(f)) <= np.sqrt(sp.lambda_Omega) * sp.grad_norm(f) * (1 + 1e-12) + 1e-9


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (9, 9), elements=st.floats(-1e3, 1e3)))
def test_parseval_property(f):
    sp = SpectralSpace.unit(2, 9)
    assert np.sum(sp.transform(f) ** 2) == pytest.approx(sp.integrate(f * f), rel=1e-12, abs=1e-20)


def test_shape_mismatch_and_bad_space():
    sp = SpectralSpace.unit(1, 9)
    with pytest.raises(SpectralError):
        sp.transform(np.zeros(10))
    with pytest.raises(SpectralError):
        SpectralSpace(3, (1.0,), (9,))
    with pytest.raises(SpectralError):
        SpectralSpace(1, (-1.0,), (9,))
