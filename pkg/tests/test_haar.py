import numpy as np
import pytest
from scipy.integrate import quad

from cgl_lab.errors import AmplitudeNonPositive, IndexOutOfRange, ValidationError
from cgl_lab.haar import (
    HaarNoiseSpec,
    ScalarLaw,
    h4_representation,
    haar_basis,
    haar_index,
    hat_functions,
    noise_rng,
    observability_diagnostic,
    sample_noise,
    sample_scalar_process,
    series_H4,
)
from cgl_lab.io import read_csv, write_csv
from cgl_lab.saturation import FrequencySet
from cgl_lab.spectral import make_grid


@pytest.fixture
def spec():
    return HaarNoiseSpec(FrequencySet([(0,), (1,)]), amps_cos=(1.0, 0.5), amps_sin=0.7, j_max=3)


def test_haar_orthonormal():
    # oracle: adaptive quadrature of the products on [0, 1]
    idx = [(0, 0)] + [(j, m) for j in range(1, 4) for m in range(2 ** (j - 1))]
    for a in idx:
        for b in idx:
            val = quad(lambda t: float(haar_basis(*a, t) * haar_basis(*b, t)), 0, 1, limit=200,
                       points=[i / 16 for i in range(1, 16)])[0]
            assert val == pytest.approx(1.0 if a == b else 0.0, abs=1e-9)


def test_haar_index_errors():
    with pytest.raises(IndexOutOfRange):
        haar_basis(2, 2, 0.5)
    with pytest.raises(IndexOutOfRange):
        haar_basis(0, 1, 0.5)


def test_spec_validation():
    I = FrequencySet([(0,), (1,)])
    with pytest.raises(AmplitudeNonPositive):
        HaarNoiseSpec(I, amps_cos=(1.0, 0.0))
    with pytest.raises(ValidationError):
        HaarNoiseSpec(I, decay=1.0)
    with pytest.raises(ValidationError):
        HaarNoiseSpec(I, amps_sin=(1.0, 2.0, 3.0))
    with pytest.raises(ValidationError):
        ScalarLaw("gaussian")


def test_m_max_limits_shifts():
    s = HaarNoiseSpec(FrequencySet([(0,)]), j_max=4, m_max=2)
    assert [s.shifts(j) for j in range(1, 5)] == [1, 2, 2, 2]
    assert s.n_coefficients == 8
    assert len(haar_index(s)) == 8


def test_jmax_zero_is_constant(rng):
    s = HaarNoiseSpec(FrequencySet([(0,)]), j_max=0)
    path = sample_scalar_process(s, rng)
    assert np.all(path == path[0])


def test_sup_bound_holds(spec, rng):
    bound = spec.sup_bound()
    worst = max(np.max(np.abs(sample_scalar_process(spec, rng))) for _ in range(200))
    assert worst <= bound
    # extreme coefficients of the right signs reach the bound on some cell
    s = HaarNoiseSpec(FrequencySet([(0,)]), j_max=3, law=ScalarLaw("triangular", 2.0))
    assert s.sup_bound() == pytest.approx(2.0 * (1 + 1 + 2 ** -2 * np.sqrt(2) + 3 ** -2 * 2))


def test_triangular_density_integrates_to_one():
    law = ScalarLaw("triangular", 1.5)
    assert quad(law.density, -2, 2, points=[-1.5, 0, 1.5])[0] == pytest.approx(1.0)
    assert law.density(0.0) > 0
    with pytest.raises(ValidationError):
        ScalarLaw("point").density(0.0)


def test_point_law_gives_zero_path(spec):
    s = HaarNoiseSpec(spec.I, law=ScalarLaw("point"))
    path = sample_noise(s, np.random.default_rng(0))
    assert np.all(path.coeff_paths == 0)


def test_field_at_matches_direct_sum(spec):
    g = make_grid(1, 32)
    path = sample_noise(spec, np.random.default_rng(3))
    x = g.points[0]
    i = 5
    sp = path.scaled_paths()[:, :, i]
    want = sp[0, 0] * 1 + sp[0, 1] * 0 + sp[1, 0] * np.cos(x) + sp[1, 1] * np.sin(x)
    np.testing.assert_allclose(path.field_at_cell(i, g).values, want, atol=1e-13)
    t = (i + 0.3) / path.n_cells
    np.testing.assert_array_equal(path.field_at(t, g).coeffs, path.field_at_cell(i, g).coeffs)


def test_h4_representation_reexpands(spec):
    g = make_grid(1, 16)
    path = sample_noise(spec, np.random.default_rng(7))
    b, basis, labels = h4_representation(spec, g)
    # orthonormality in L2(0,1; L2): cell width times spatial inner product
    B = np.array([e.ravel() for e in basis])
    G = np.real(B.conj() @ B.T) * g.volume / spec.n_cells
    np.testing.assert_allclose(G, np.eye(len(b)), atol=1e-12)
    # coefficients xi/R in the order of the labels
    modes = spec.modes
    xi = []
    for l, kind, tag, j, m in labels:
        a = modes.index(l)
        pidx = {"cos": 0, "sin": 2}[kind] + (tag == "im")
        xi.append(path.xi[a, pidx, haar_index(spec).index((j, m))] / spec.law.radius)
    total = series_H4(b, basis, xi)
    direct = np.array([path.field_at_cell(i, g).coeffs for i in range(spec.n_cells)])
    assert np.max(np.abs(total - direct)) < 1e-10


def test_series_H4_validation():
    with pytest.raises(AmplitudeNonPositive):
        series_H4([1.0, -1.0], [np.ones(2), np.ones(2)], [0.1, 0.1])
    with pytest.raises(ValidationError):
        series_H4([1.0], [np.ones(2)], [1.5])


def test_observability_generic_sample():
    s = HaarNoiseSpec(FrequencySet([(0,), (1,)]), j_max=5)
    path = sample_noise(s, noise_rng(11, 0))
    rep = observability_diagnostic(path, n_nodes=3)
    assert rep.evidence_observable
    assert rep.sigma_min > 1e-4


def test_observability_zero_path_not_observable():
    s = HaarNoiseSpec(FrequencySet([(0,), (1,)]), law=ScalarLaw("point"))
    rep = observability_diagnostic(sample_noise(s, np.random.default_rng(0)))
    assert rep.sigma_min == 0.0 and not rep.evidence_observable


def test_observability_constant_path_not_observable():
    # a constant coordinate is annihilated by a_l = 1, b = constant
    s = HaarNoiseSpec(FrequencySet([(0,)]), j_max=0)
    rep = observability_diagnostic(sample_noise(s, np.random.default_rng(0)))
    assert rep.relative < 1e-12


def test_hat_functions_partition_of_unity():
    t = np.linspace(0, 1, 101)
    np.testing.assert_allclose(hat_functions(t, 1.0, 4).sum(axis=0), 1.0, atol=1e-14)
    with pytest.raises(ValidationError):
        hat_functions(t, 1.0, 1)


def test_noise_rng_streams():
    a = noise_rng(1, 0, 0).standard_normal(3)
    assert np.array_equal(a, noise_rng(1, 0, 0).standard_normal(3))
    assert not np.array_equal(a, noise_rng(1, 0, 1).standard_normal(3))
    assert not np.array_equal(a, noise_rng(2, 0, 0).standard_normal(3))


def test_csv_roundtrip(spec, tmp_path):
    path = sample_noise(spec, np.random.default_rng(1))
    write_csv(tmp_path / "p.csv", path.csv_header(), path.to_rows())
    head, rows = read_csv(tmp_path / "p.csv")
    assert head == path.csv_header()
    assert np.array_equal(np.array(rows), np.array(path.to_rows()))
