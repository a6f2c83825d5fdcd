import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cgl_lab.errors import EmptyPlateau, FrequencyOutOfBox, GridMismatch, InvalidGrid, ValidationError
from cgl_lab.spectral import (
    BumpProfile,
    SpectralField,
    TorusGrid,
    coeff_inner,
    constant_mask,
    dealiaser,
    make_grid,
    make_mask,
    project_subspace,
    real_inner_product,
    sobolev_norm,
)


@pytest.mark.parametrize("d,n", [(0, 16), (4, 16), (1, 12), (2, 4)])
def test_invalid_grids(d, n):
    with pytest.raises(InvalidGrid):
        TorusGrid(d, n)


def test_constant_norm_and_box(grid2):
    one = SpectralField.constant(grid2, 1.0)
    assert sobolev_norm(one, 0) == pytest.approx(2 * np.pi)
    assert sobolev_norm(one, 3) == pytest.approx(2 * np.pi)
    assert grid2.kmax == 7
    assert len(grid2.mode_box()) == 15**2
    with pytest.raises(FrequencyOutOfBox):
        grid2.index((8, 0))


def test_roundtrip_and_nyquist(grid1, rng):
    vals = rng.standard_normal(grid1.shape) + 1j * rng.standard_normal(grid1.shape)
    u = SpectralField.from_physical(grid1, vals)
    assert u.coeffs[grid1.n // 2] == 0
    v = SpectralField.from_physical(grid1, u.values)
    np.testing.assert_allclose(v.coeffs, u.coeffs, atol=1e-14)


def test_cos_sin_modes(grid2):
    x, y = grid2.points
    c = SpectralField.cos_mode(grid2, (1, -2), 0.5)
    np.testing.assert_allclose(c.values, 0.5 * np.cos(x - 2 * y), atol=1e-13)
    s = SpectralField.sin_mode(grid2, (3, 1))
    np.testing.assert_allclose(s.values, np.sin(3 * x + y), atol=1e-13)
    assert c.is_real() and s.is_real()
    # ||cos||^2 = (2 pi)^2 / 2
    assert real_inner_product(c, c) == pytest.approx(0.25 * (2 * np.pi) ** 2 / 2)


def test_inner_products_agree(grid2, rng):
    u = SpectralField.random(grid2, rng, kcut=5)
    v = SpectralField.random(grid2, rng, kcut=5)
    assert real_inner_product(u, v) == pytest.approx(float(coeff_inner(u.coeffs, v.coeffs, grid2)), rel=1e-12)


def test_real_imag_split(grid1, rng):
    u = SpectralField.random(grid1, rng)
    np.testing.assert_allclose((u.real_part() + 1j * u.imag_part()).coeffs, u.coeffs, atol=1e-15)
    np.testing.assert_allclose(u.real_part().values.imag, 0, atol=1e-14)
    np.testing.assert_allclose(u.conj().values, np.conj(u.values), atol=1e-14)


def test_grid_mismatch(grid1, grid2):
    with pytest.raises(GridMismatch):
        SpectralField.zeros(grid1) + SpectralField.zeros(make_grid(1, 64))
    with pytest.raises(GridMismatch):
        SpectralField(grid2, np.zeros(5))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), degree=st.integers(1, 5))
def test_dealiased_product_matches_brute_force(seed, degree):
    # oracle: the exact product of trigonometric polynomials computed on a much finer grid
    g = make_grid(1, 16)
    rng = np.random.default_rng(seed)
    fields = [SpectralField.random(g, rng) for _ in range(degree)]
    dz = dealiaser(g, degree)
    prod = np.ones(dz.m, complex)
    for f in fields:
        prod = prod * dz.physical(f.coeffs)
    got = dz.project(prod)
    fine = make_grid(1, 256)
    big = np.ones(fine.n, complex)
    for f in fields:
        c = np.zeros(fine.n, complex)
        for k in range(-g.kmax, g.kmax + 1):
            c[fine.index((k,))] = f.coefficient((k,))
        big = big * SpectralField(fine, c).values
        # SpectralField masks to its own (larger) box, so nothing is lost
    ref = np.fft.fft(big) / fine.n
    want = np.zeros(g.n, complex)
    for k in range(-g.kmax, g.kmax + 1):
        want[g.index((k,))] = ref[k % fine.n]
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_mask_plateau_and_interior(grid1):
    m = make_mask(grid1)
    x = grid1.points[0]
    assert np.all(m.values[m.plateau] == 1.0)
    inside = (x >= np.pi / 2) & (x <= 3 * np.pi / 2)
    assert np.array_equal(m.plateau, inside)
    assert m.interior.sum() == m.plateau.sum() - 2
    assert np.all(m.values >= 0) and np.all(m.values <= 1)
    far = np.abs(np.angle(np.exp(1j * (x - np.pi)))) > np.pi / 2 + 0.3
    assert np.all(m.values[far] == 0)


def test_mask_spectral_tail_decays():
    tails = [make_mask(make_grid(1, n)).spectral_tail for n in (64, 128, 256)]
    assert tails[0] > tails[1] > tails[2]


def test_empty_plateau():
    g = make_grid(1, 8)
    with pytest.raises(EmptyPlateau):
        make_mask(g, BumpProfile(plateau=((0.1, 0.2),), width=0.3))
    with pytest.raises(ValidationError):
        BumpProfile(plateau=((0, 6.0),), width=0.3)


def test_mask_multiply_self_adjoint(grid1, rng):
    m = make_mask(grid1)
    u = SpectralField.random(grid1, rng)
    v = SpectralField.random(grid1, rng)
    a = coeff_inner(m.multiply(u.coeffs), v.coeffs, grid1)
    b = coeff_inner(u.coeffs, m.multiply(v.coeffs), grid1)
    assert a == pytest.approx(b, rel=1e-12)


def test_constant_mask_is_exact(grid1, rng):
    m = constant_mask(grid1, 2.0)
    u = SpectralField.random(grid1, rng)
    np.testing.assert_array_equal(m.multiply(u.coeffs, 3), 8.0 * u.coeffs)
    assert m.interior.all()


def test_project_subspace(grid1, rng):
    u = SpectralField.random(grid1, rng)
    p = project_subspace(u, [(0,), (2,)])
    assert np.count_nonzero(p.coeffs) == 3
    assert p.coefficient((-2,)) == u.coefficient((-2,))
