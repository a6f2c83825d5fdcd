import json

import numpy as np
import pytest

from cgl_lab.dynamics import CglParams, ControlSegment, nonlinearity_B
from cgl_lab.errors import (
    BudgetExceeded,
    FrequencyOutOfBox,
    NotInSpan,
    ToleranceUnreachable,
    ValidationError,
)
from cgl_lab.io import to_json
from cgl_lab.saturation import FrequencySet, chain_nonlinear
from cgl_lab.spectral import SpectralField, coeff_sobolev_norm, constant_mask, make_grid, make_mask
from cgl_lab.synthesis import (
    SynthesisPlan,
    _absorb,
    attain_recursive,
    attain_step0,
    decompose_target,
    impulse_limit_probe,
    indicator_errors,
    open_loop_segments,
    replay,
    segment_from_dict,
    segment_to_dict,
    spectral_leak,
    steer_full,
)


@pytest.fixture
def g64():
    return make_grid(1, 64)


@pytest.fixture
def chain1(g64):
    return chain_nonlinear(FrequencySet([(0,), (1,)]), 2, 1, clip=g64.kmax)


def _sum_B(zetas, params, grid):
    total = SpectralField.zeros(grid)
    for z in zetas:
        total = total + nonlinearity_B(z, params)
    return total


@pytest.mark.parametrize("eta_kind", ["cos3", "const", "complex"])
def test_decompose_round_trip(g64, chain1, eta_kind):
    par = CglParams()
    eta = {"cos3": SpectralField.cos_mode(g64, (3,)),
           "const": SpectralField.constant(g64, 2.0),
           "complex": SpectralField.exponential(g64, (-2,), 0.3 - 0.7j) + SpectralField.sin_mode(g64, (1,))}[eta_kind]
    zetas = decompose_target(eta, chain1, 1, par)
    back = _sum_B(zetas, par, g64)
    assert np.linalg.norm(back.coeffs - eta.coeffs) < 1e-8 * np.linalg.norm(eta.coeffs)
    # every zeta lies in the level-0 span
    lvl0 = chain1.level(0).symmetric()
    for z in zetas:
        for k in g64.mode_box():
            if k not in lvl0:
                assert abs(z.coefficient(k)) < 1e-14


def test_decompose_errors(g64, chain1):
    par = CglParams()
    with pytest.raises(NotInSpan):
        decompose_target(SpectralField.cos_mode(g64, (4,)), chain1, 1, par)
    with pytest.raises(ValidationError):
        decompose_target(SpectralField.cos_mode(g64, (1,)), chain1, 3, par)
    assert decompose_target(SpectralField.zeros(g64), chain1, 1, par) == []
    small = make_grid(1, 8)
    with pytest.raises(FrequencyOutOfBox):
        decompose_target(SpectralField.cos_mode(small, (1,)), chain_nonlinear(FrequencySet([(0,), (1,)]), 2, 1),
                         2, par)


def test_absorb_factor():
    par = CglParams()
    g = make_grid(1, 16)
    z = SpectralField.cos_mode(g, (1,)) + SpectralField.constant(g, 0.3)
    for alpha in (2.0, -0.5, 0.4 + 1.1j):
        f = _absorb(alpha, par.q)
        np.testing.assert_allclose(nonlinearity_B(z * f, par).coeffs, alpha * nonlinearity_B(z, par).coeffs,
                                   atol=1e-12)


def test_open_loop_structure(g64, chain1):
    par = CglParams()
    eta = SpectralField.cos_mode(g64, (2,), 0.1)
    segs = open_loop_segments(eta, 1, 1e-3, chain1, par)
    n_terms = len(decompose_target(eta, chain1, 1, par))
    assert sum(s.kind == "free_run" for s in segs) == n_terms
    assert sum(s.kind == "impulse" for s in segs) == 2 * n_terms
    assert sum(s.duration for s in segs) == pytest.approx(n_terms * (1e-3 + 2e-5))
    assert open_loop_segments(SpectralField.zeros(g64), 1, 1e-3, chain1, par) == []


def test_impulse_probe_small(g64):
    par = CglParams()
    mask = make_mask(g64)
    u0 = SpectralField.zeros(g64)
    eta = SpectralField.cos_mode(g64, (1,), 0.2)
    rows = impulse_limit_probe(u0, eta, SpectralField.zeros(g64), [1e-1, 1e-2], par, mask)
    assert rows[1]["error"] < rows[0]["error"]
    assert all(r["status"] == "ok" for r in rows)


def test_step0_and_empty(g64):
    par = CglParams()
    mask = make_mask(g64)
    u0 = SpectralField.cos_mode(g64, (1,), 0.1)
    eta = SpectralField.cos_mode(g64, (2,), 0.1)
    plan = attain_step0(u0, eta, 0.01, par, mask)
    target = u0.coeffs + mask.multiply(eta.coeffs)
    assert coeff_sobolev_norm(plan.final.coeffs - target, g64, 1) < 0.01
    empty = attain_step0(u0, SpectralField.zeros(g64), 0.01, par, mask)
    assert empty.segments == [] and empty.final is u0
    with pytest.raises(ToleranceUnreachable):
        attain_step0(u0, eta, 1e-14, par, mask, deltas=[1e-1])


def test_recursive_budget(g64, chain1):
    par = CglParams()
    eta = SpectralField.cos_mode(g64, (2,), 0.1)
    with pytest.raises(BudgetExceeded):
        attain_recursive(SpectralField.zeros(g64), 1, eta, 1e-3, 1e-6, par, chain=chain1, deltas=[1e-3])


def test_recursive_full_space_and_replay(g64, chain1):
    par = CglParams()
    eta = SpectralField.cos_mode(g64, (2,), 0.05)
    plan = attain_recursive(SpectralField.zeros(g64), 1, eta, 0.01, 1.0, par, chain=chain1)
    assert plan.errors["final"] < 0.01
    assert plan.duration <= 1.0
    traj = replay(plan, par, constant_mask(g64))
    np.testing.assert_array_equal(traj.final.coeffs, plan.final.coeffs)


def test_plan_json_round_trip(g64, chain1):
    par = CglParams()
    eta = SpectralField.cos_mode(g64, (2,), 0.05)
    plan = attain_recursive(SpectralField.zeros(g64), 1, eta, 0.01, 1.0, par, chain=chain1)
    back = SynthesisPlan.from_dict(json.loads(to_json(plan.to_dict())), g64)
    assert len(back.segments) == len(plan.segments)
    for a, b in zip(plan.segments, back.segments):
        assert a.duration == b.duration and a.kind == b.kind
        if a.control is not None:
            np.testing.assert_array_equal(a.control.coeffs, b.control.coeffs)
    np.testing.assert_array_equal(replay(back, par, constant_mask(g64), record="final").final.coeffs,
                                  plan.final.coeffs)


def test_segment_dict_round_trip(g64):
    seg = ControlSegment(0.25, SpectralField.exponential(g64, (3,), 1 + 2j), None, "impulse")
    back = segment_from_dict(segment_to_dict(seg, g64), g64)
    assert back.duration == 0.25 and back.shift is None and back.kind == "impulse"
    np.testing.assert_array_equal(back.control.coeffs, seg.control.coeffs)


def test_indicator_errors_exact_target(g64):
    mask = make_mask(g64)
    u0 = SpectralField.zeros(g64)
    u1 = SpectralField.constant(g64, 1.0)
    want = SpectralField.from_physical(g64, np.where(mask.interior, 1.0, 0.0)).coeffs
    e = indicator_errors(want, u0, u1, mask)
    # the band-limited indicator is only close to the grid indicator
    assert e["target_norm"] == pytest.approx(np.sqrt(mask.interior.sum() * g64.cell_volume))
    e0 = indicator_errors(u0.coeffs, u0, u1, mask)
    assert e0["inside_relative"] == pytest.approx(1.0) and e0["outside_change"] == 0.0
    assert e["inside"] < e0["inside"]


def test_spectral_leak(g64):
    I = FrequencySet([(0,), (2,)])
    even = SpectralField.cos_mode(g64, (4,))
    odd = SpectralField.cos_mode(g64, (3,), 1e-3)
    assert spectral_leak([even], I, g64) == 0.0
    assert spectral_leak([even, even + odd], I, g64) == pytest.approx(coeff_sobolev_norm(odd.coeffs, g64, 0))


def test_steer_full_requires_unit_mask(g64):
    with pytest.raises(ValidationError):
        steer_full(SpectralField.zeros(g64), SpectralField.zeros(g64), 0.1, 1.0, CglParams(), mask=make_mask(g64))
