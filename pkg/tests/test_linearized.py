import numpy as np
import pytest

from cgl_lab.dynamics import CglParams
from cgl_lab.errors import ValidationError
from cgl_lab.linearized import (
    LinearizationContext,
    SlotControl,
    apply_Q,
    apply_Q_adjoint,
    duality_pairing,
    gramian,
    obstruction_check,
    real_basis,
    solve_adjoint,
    solve_linearized,
)
from cgl_lab.dynamics import nonlinearity_B
from cgl_lab.saturation import FrequencySet
from cgl_lab.spectral import SpectralField, coeff_inner, constant_mask, make_mask, real_inner_product


@pytest.mark.parametrize("p", [1, 2])
def test_Q_is_derivative_of_B(grid1, rng, p):
    par = CglParams(p=p)
    u = SpectralField.random(grid1, rng, kcut=4)
    v = SpectralField.random(grid1, rng, kcut=4)
    h = 1e-5
    fd = (nonlinearity_B(u + v * h, par) - nonlinearity_B(u - v * h, par)).coeffs / (2 * h)
    q = apply_Q(u, v, par).coeffs
    assert np.linalg.norm(q - fd) / np.linalg.norm(fd) < 1e-8


@pytest.mark.parametrize("p", [1, 2])
def test_Q_adjoint(grid1, rng, p):
    par = CglParams(p=p, c=0.8)
    for _ in range(5):
        u, v, w = (SpectralField.random(grid1, rng, kcut=4) for _ in range(3))
        a = real_inner_product(apply_Q(u, v, par), w)
        b = real_inner_product(v, apply_Q_adjoint(u, w, par))
        assert a == pytest.approx(b, rel=1e-10, abs=1e-12)


def test_zero_reference_closed_form(grid1):
    # with u~ = 0 and chi = 1, v(T) = (1 - exp(-lam T)) / lam * g for a constant single mode g
    par = CglParams(nu=0.1, gamma=0.2)
    ctx = LinearizationContext.from_initial(SpectralField.zeros(grid1), 0.5, 200, par)
    g = SpectralField.exponential(grid1, (3,), 1 - 0.5j)
    v = solve_linearized(ctx, g)
    lam = (0.1 + 1j) * 9 + 0.2
    assert v[grid1.index((3,))] == pytest.approx((1 - np.exp(-lam * 0.5)) / lam * (1 - 0.5j), rel=1e-12)
    w = solve_adjoint(ctx, SpectralField.exponential(grid1, (3,), 1.0))
    lam_star = (0.1 - 1j) * 9 + 0.2
    assert w[0][grid1.index((3,))] == pytest.approx(np.exp(-lam_star * 0.5), rel=1e-12)


def test_linearity(grid1, rng):
    par = CglParams()
    u0 = SpectralField.random(grid1, rng, kcut=3)
    ctx = LinearizationContext.from_initial(u0, 0.2, 40, par, make_mask(grid1))
    g1 = SpectralField.random(grid1, rng, kcut=3)
    g2 = SpectralField.random(grid1, rng, kcut=3)
    a = solve_linearized(ctx, g1 * 2.0 + g2 * (-0.5))
    b = 2.0 * solve_linearized(ctx, g1) - 0.5 * solve_linearized(ctx, g2)
    np.testing.assert_allclose(a, b, atol=1e-13)


def test_batched_slots_match_single(grid1, rng):
    par = CglParams()
    ctx = LinearizationContext.from_initial(SpectralField.random(grid1, rng, kcut=3), 0.2, 40, par)
    g = np.array([[SpectralField.random(grid1, rng, kcut=2).coeffs for _ in range(3)] for _ in range(4)])
    batch = solve_linearized(ctx, SlotControl(g))
    for b in range(3):
        np.testing.assert_allclose(batch[b], solve_linearized(ctx, SlotControl(g[:, b])), atol=1e-14)
    with pytest.raises(ValidationError):
        solve_linearized(ctx, SlotControl(g[:3]))


def test_duality_small(grid1, rng):
    par = CglParams()
    ctx = LinearizationContext.from_initial(SpectralField.random(grid1, rng, kcut=3) * 0.5, 0.25, 400, par,
                                            make_mask(grid1))
    g = SlotControl(np.array([SpectralField.random(grid1, rng, kcut=3).coeffs for _ in range(4)]))
    w0 = SpectralField.random(grid1, rng, kcut=3)
    lhs = float(coeff_inner(solve_linearized(ctx, g), w0.coeffs, grid1))
    rhs = duality_pairing(ctx, g, solve_adjoint(ctx, w0))
    assert abs(lhs - rhs) / abs(lhs) < 1e-5
    with pytest.raises(ValidationError):
        duality_pairing(LinearizationContext.from_initial(SpectralField.zeros(grid1), 0.1, 12, par), g,
                        np.zeros((13,) + grid1.shape))


def test_real_basis_orthonormal(grid1):
    B, names = real_basis(grid1, FrequencySet([(0,), (1,), (2,)]), normalized=True)
    assert len(names) == 10
    G = np.real(coeff_inner(B[:, None], B[None, :], grid1))
    np.testing.assert_allclose(G, np.eye(10), atol=1e-13)


def test_gramian_columns_and_psd(grid1, rng):
    par = CglParams()
    ctx = LinearizationContext.from_initial(SpectralField.random(grid1, rng, kcut=2), 0.2, 40, par)
    H = FrequencySet([(0,), (1,)])
    rep = gramian(ctx, H, 2, [(0,), (1,), (2,)])
    assert rep.matrix.shape == (10, 12)
    assert np.all(np.diff(rep.singular_values) <= 0)
    eig = np.linalg.eigvalsh(rep.matrix @ rep.matrix.T)
    assert eig.min() > -1e-12
    # column 0 is slot 0 of cos(0) = 1
    slots = np.zeros((2,) + grid1.shape, complex)
    slots[0] = SpectralField.constant(grid1, 1.0).coeffs
    v = solve_linearized(ctx, SlotControl(slots))
    rows, _ = real_basis(grid1, [(0,), (1,), (2,)], normalized=True)
    np.testing.assert_allclose(rep.matrix[:, 0], np.real(coeff_inner(rows, v[None], grid1)), atol=1e-14)
    assert set(rep.to_dict()) >= {"sigma_min", "singular_values"}


def test_obstruction_non_generator(grid1):
    par = CglParams()
    u0 = SpectralField.constant(grid1, 0.5) + SpectralField.cos_mode(grid1, (2,), 0.5)
    ctx = LinearizationContext.from_initial(u0, 0.2, 40, par, constant_mask(grid1))
    H = FrequencySet([(0,), (2,)])
    assert obstruction_check(ctx, (1,), H) < 1e-12
    assert obstruction_check(ctx, (2,), H) > 1e-3
