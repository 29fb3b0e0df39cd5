import numpy as np
import pytest
import scipy.linalg

from fftfem import element_core, spectral_basis, spectral_cache
from fftfem.errors import PoleProximityError


def _secular(n: int, theta):
    ref = element_core.reference_element(n)
    return spectral_basis.make_secular(ref.eigen, ref.pencil, theta)


@pytest.mark.parametrize("n", [2, 3, 5])
def test_roots_satisfy_residual_tolerance(n: int):
    f = _secular(n, 0.3)
    roots = spectral_basis.solve_family(f)
    assert roots.shape == (n,)
    assert spectral_basis._residual_ok(f, roots).all()


@pytest.mark.parametrize("n", [2, 4])
def test_secular_derivative(n: int):
    f = _secular(n, -0.4)
    lam = np.array([0.7, 3.1, 13.0])
    step = 1e-6
    value, derivative = spectral_basis.secular_eval(f, lam)
    plus, _ = spectral_basis.secular_eval(f, lam + step)
    minus, _ = spectral_basis.secular_eval(f, lam - step)
    np.testing.assert_allclose(derivative, (plus - minus) / (2 * step), rtol=1e-5)
    assert np.all(derivative < 0)


def test_secular_pole():
    f = _secular(2, 0.1)
    with pytest.raises(PoleProximityError):
        spectral_basis.secular_eval(f, 2.5)


@pytest.mark.parametrize("n", [2, 3, 6])
def test_residues_are_non_negative(n: int):
    f = _secular(n, np.linspace(-0.99, 0.99, 9))
    res = f.residues()
    assert res.shape == (9, n - 1)
    assert np.all(res >= 0)


@pytest.mark.parametrize("n", [1, 2, 3, 5, 9])
def test_roots_interlace_poles(n: int):
    theta = np.cos(np.pi * np.arange(1, 32) / 32)
    f = _secular(n, theta)
    roots = spectral_basis.solve_family(f)
    assert roots.shape == (31, n)
    assert np.all(roots[:, 0] > 0)
    for i, pole in enumerate(f.poles):
        assert np.all(roots[:, i] < pole)
        assert np.all(roots[:, i + 1] > pole)


def test_linear_element_closed_form():
    theta = np.cos(np.pi * np.arange(1, 16) / 16)
    roots = spectral_basis.solve_family(_secular(1, theta))
    np.testing.assert_allclose(
        roots[:, 0], spectral_basis.linear_element_eigenvalue(theta), rtol=1e-13
    )


def test_linear_element_endpoints():
    roots = spectral_basis.solve_family(_secular(1, np.array([1.0, -1.0])))
    np.testing.assert_allclose(roots[:, 0], [0.0, 3.0], atol=1e-14)


@pytest.mark.parametrize("n", [2, 3, 4, 6, 9])
def test_endpoint_families_match_element_spectrum(n: int):
    ref = element_core.reference_element(n)
    roots = spectral_basis.solve_family(_secular(n, np.array([1.0, -1.0])))
    assert roots.shape == (2, n)
    assert roots[0, 0] == 0
    assert np.all(np.diff(roots, axis=1) > 0)
    # θ = 1 holds the even element modes, θ = -1 the odd ones; the
    # decoupled poles fill the rest.
    expected = np.sort(
        np.concatenate(
            [element_core.full_element_spectrum(ref.pencil), ref.eigen.values]
        )
    )
    np.testing.assert_allclose(
        np.sort(roots.ravel()), expected, rtol=1e-10, atol=1e-12
    )


def test_solve_family_rejects_theta_outside():
    with pytest.raises(ValueError):
        spectral_basis.solve_family(_secular(2, 1.5))


def test_shifted_roots_are_anchored_near_poles():
    size = 1024
    ref = element_core.reference_element(3)
    k = np.array([1, size - 1])
    theta = np.cos(np.pi * k / size)
    f = spectral_basis.make_secular(
        ref.eigen, ref.pencil, theta, half_angle=0.5 * np.pi * k / size
    )
    origin, tau = spectral_basis.solve_shifted(f)
    assert np.all(np.isin(origin, np.concatenate([[0.0], ref.eigen.values])))
    assert spectral_basis._residual_ok(f, tau, origin).all()
    # The odd pole decouples as θ → 1 and the even one as θ → -1.
    near = (origin > 0) & (np.abs(tau) < 1e-2)
    assert list(origin[near]) == [ref.eigen.values[1], ref.eigen.values[0]]
    assert np.all(np.abs(tau[near]) < 1e-4)
    np.testing.assert_allclose(
        origin + tau, spectral_basis.solve_family(_secular(3, theta)), rtol=1e-12
    )


def test_companion_roots_agree():
    f = _secular(4, np.asarray(0.37))
    bracketed = spectral_basis.solve_family(f)
    companion = spectral_basis._polish_companion(
        f, spectral_basis._companion_roots(f)
    )
    np.testing.assert_allclose(np.sort(companion), bracketed, rtol=1e-10)


@pytest.mark.parametrize("size,order", [(4, 2), (4, 3), (8, 2), (6, 4)])
def test_dense_pencil_spectrum(size: int, order: int, dense_pencil):
    basis = spectral_cache.load_basis(size, order)
    a, c = dense_pencil(size, order)
    expected = scipy.linalg.eigh(a, c, eigvals_only=True)
    assert basis.flat_eigenvalues.size == expected.size
    np.testing.assert_allclose(np.sort(basis.flat_eigenvalues), expected, rtol=1e-9)


def test_layout_and_norms():
    basis = spectral_cache.load_basis(8, 3)
    assert basis.dof_count == 23
    assert basis.flat_eigenvalues.shape == (23,)
    np.testing.assert_allclose(basis.flat_norms[:2], 8.0)
    assert np.all(basis.norms > 0)
    np.testing.assert_allclose(basis.p_even + basis.p_odd, basis.vectors)


def test_order_one_norms():
    basis = spectral_cache.load_basis(8, 1)
    pencil = element_core.reference_element(1).pencil
    np.testing.assert_allclose(
        basis.norms[:, 0], 8 * (pencil.c0 + pencil.cn * basis.theta)
    )


@pytest.mark.parametrize("n", [1, 2, 3])
def test_smallest_physical_eigenvalue_converges(n: int):
    exact = spectral_basis.continuous_eigenvalue(1.0)
    errors = []
    for size in (4, 8, 16):
        basis = spectral_cache.load_basis(size, n)
        smallest = basis.physical_eigenvalues(1.0 / size).min()
        errors.append(abs(smallest - exact))
    rates = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(rates > 2 * n - 1)


@pytest.mark.parametrize("size,order", [(16, 4), (64, 9)])
def test_norms_match_norm_factors(size: int, order: int):
    basis = spectral_cache.load_basis(size, order)
    pencil = element_core.reference_element(order).pencil
    scale = np.abs(basis.vectors).max()
    np.testing.assert_allclose(
        basis.p_even[..., ::-1], basis.p_even, rtol=0, atol=1e-14 * scale
    )
    np.testing.assert_allclose(
        basis.p_odd[..., ::-1], -basis.p_odd, rtol=0, atol=1e-14 * scale
    )
    b0, bn = spectral_basis.norm_factors(pencil, basis.vectors)
    atol = 1e-10 * np.abs(b0).max()
    np.testing.assert_allclose(basis.b0, b0, rtol=1e-8, atol=atol)
    np.testing.assert_allclose(basis.bn, bn, rtol=1e-8, atol=atol)
    np.testing.assert_allclose(
        basis.norms, size * (basis.b0 + basis.bn * basis.theta[:, None]), rtol=1e-8
    )
