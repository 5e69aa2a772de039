import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from combcavity.model import LAMBDA_C, ParameterError, SystemParams
from combcavity.modes import (ModeLadder, build_comb, chi, mode_sums, order_parameters, sinc,
                              theta_bar_sq_sinc)


def params(m, dk=4.26e-4):
    return SystemParams(kappa=400.0, delta_c=-400.0, eta=1.0, n_atoms=10, n_modes=m,
                        delta_k_frac=dk)


def test_sinc_removable_point_and_values():
    assert sinc(0.0) == 1.0
    assert sinc(1e-10) == pytest.approx(1.0, abs=1e-18)
    x = np.array([1e-7, 0.3, 2.0, -5.0])
    assert np.allclose(sinc(x), np.sin(x) / x, rtol=1e-15)


def test_two_line_comb():
    lad = build_comb(params(2))
    assert np.allclose(lad.wavenumbers, [1 - 2.13e-4, 1 + 2.13e-4], rtol=0, atol=1e-15)
    assert list(lad.cosine) == [True, False]
    assert np.allclose(lad.phases, [0.0, math.pi / 2])


def test_fifty_line_comb_spacing_and_bandwidth():
    lad = build_comb(params(50))
    assert lad.delta_k == pytest.approx(4.26e-4, rel=1e-9)
    assert lad.bandwidth == pytest.approx(0.0213, rel=1e-9)
    assert np.mean(lad.wavenumbers) == pytest.approx(1.0, rel=1e-14)


def test_dense_comb_spacing():
    lad = build_comb(params(998, 0.0213 / 998))
    assert lad.delta_k == pytest.approx(2.134e-5, rel=1e-3)
    assert lad.bandwidth == pytest.approx(0.0213, rel=1e-9)


@given(st.integers(1, 300), st.floats(1e-6, 1e-2))
def test_comb_invariants(m, dk):
    lad = build_comb(params(m, dk))
    assert lad.n_modes == m
    assert np.all(lad.cosine[::2]) and not np.any(lad.cosine[1::2])
    if m > 1:
        assert np.allclose(np.diff(lad.wavenumbers), dk, rtol=1e-6)


def test_ladder_rejects_bad_input():
    with pytest.raises(ParameterError):
        ModeLadder([1.0, 1.1, 1.3], [True, False, True], [1, 1, 1])
    with pytest.raises(ParameterError):
        ModeLadder([1.0, 1.1], [True, True], [1, 1])
    with pytest.raises(ParameterError):
        ModeLadder([1.0, 1.1], [True, False], [1, -1])


def test_ladder_arrays_are_read_only():
    lad = build_comb(params(4))
    with pytest.raises(ValueError):
        lad.wavenumbers[0] = 2.0


@pytest.mark.parametrize("width,expected", [(20 * LAMBDA_C, 0.426), (300 * LAMBDA_C, 6.39)])
def test_chi_examples(width, expected):
    assert chi(width, 0.0213) == pytest.approx(expected, rel=1e-9)


def test_chi_zero_bandwidth():
    assert chi(50 * LAMBDA_C, 0.0) == 0.0


def test_atoms_at_origin():
    lad = build_comb(params(50))
    op = order_parameters(np.zeros(7), lad)
    assert np.allclose(op.theta[lad.cosine], 1.0) and np.allclose(op.theta[~lad.cosine], 0.0)
    pair = order_parameters(np.zeros(7), ModeLadder.degenerate_pair())
    assert pair.theta_bar == pytest.approx(1 / math.sqrt(2), rel=1e-15)


def test_atoms_on_lattice_sites():
    op = order_parameters(np.arange(-20, 21) * LAMBDA_C, ModeLadder.single())
    assert op.theta[0] == pytest.approx(1.0, abs=1e-12)


def test_uniform_cloud_is_disordered():
    rng = np.random.default_rng(3)
    lad = build_comb(params(50))
    bound = 5 / math.sqrt(1e4)
    hits = 0
    for _ in range(100):
        x = rng.uniform(-150 * LAMBDA_C, 150 * LAMBDA_C, 10_000)
        hits += np.all(np.abs(mode_sums(x, lad)) < bound)
    assert hits >= 99


@settings(max_examples=40)
@given(arrays(float, st.integers(1, 40), elements=st.floats(-500, 500)))
def test_mode_sums_match_direct_loop(x):
    lad = build_comb(params(6, 3e-3))
    direct = oracles.order_parameters(x, lad.wavenumbers, lad.cosine)
    assert np.allclose(mode_sums(x, lad), direct, atol=1e-12)


def test_mode_sums_chunking_is_exact():
    x = np.random.default_rng(0).uniform(-300, 300, 9000)
    lad = build_comb(params(5))
    assert np.allclose(mode_sums(x, lad, chunk=7), mode_sums(x, lad, chunk=100_000),
                       rtol=0, atol=1e-13)


@settings(max_examples=60)
@given(arrays(float, st.integers(1, 30), elements=st.floats(-1e3, 1e3)))
def test_dense_pair_bound(x):
    op = order_parameters(x, ModeLadder.degenerate_pair())
    assert op.theta_bar <= 1 / math.sqrt(2) + 1e-9


@settings(max_examples=60)
@given(arrays(float, st.integers(1, 30), elements=st.floats(-1e3, 1e3)),
       st.floats(-1e3, 1e3))
def test_pair_translation_invariance(x, shift):
    lad = ModeLadder.degenerate_pair()
    a = mode_sums(x, lad)
    b = mode_sums(x + shift, lad)
    assert np.sum(a**2) == pytest.approx(np.sum(b**2), abs=1e-12)


def test_sinc_form_coincident_atoms():
    assert theta_bar_sq_sinc(np.zeros(5), 50 * LAMBDA_C, 1.3) == pytest.approx(0.5, rel=1e-15)


@settings(max_examples=30)
@given(arrays(float, st.integers(1, 15), elements=st.floats(-300, 300)))
def test_sinc_form_zero_chi_limit(x):
    d = x[:, None] - x[None, :]
    expected = np.cos(d).sum() / (2 * x.size**2)
    assert theta_bar_sq_sinc(x, 50 * LAMBDA_C, 0.0) == pytest.approx(expected, abs=1e-13)


def _exact_theta_bar_sq(x, bandwidth, dk):
    m = int(round(bandwidth / dk))
    lad = ModeLadder.equidistant(1 - 0.5 * (m - 1) * dk, dk, m)
    return np.mean(mode_sums(x, lad) ** 2)


def test_sinc_form_tracks_exact_sum():
    # dense-mode regime, chi = 1; individual draws scatter by a few per cent
    rng = np.random.default_rng(12)
    width = 50 * LAMBDA_C
    bandwidth = 2 * math.pi / width
    errs = []
    for _ in range(40):
        x = rng.uniform(-width / 2, width / 2, 20)
        exact = _exact_theta_bar_sq(x, bandwidth, bandwidth / 200)
        errs.append(abs(theta_bar_sq_sinc(x, width, 1.0) - exact) / exact)
    assert np.median(errs) < 0.02


def test_sinc_form_converges_as_spacing_shrinks():
    rng = np.random.default_rng(5)
    width = 50 * LAMBDA_C
    bandwidth = 2 * 2 * math.pi / width
    x = rng.uniform(-width / 2, width / 2, 12)
    approx = theta_bar_sq_sinc(x, width, 2.0)
    errs = [abs(_exact_theta_bar_sq(x, bandwidth, bandwidth / m) - approx)
            for m in (8, 16, 32, 64, 128)]
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_sinc_form_warns_outside_dense_regime():
    with pytest.warns(RuntimeWarning):
        theta_bar_sq_sinc(np.zeros(3), 300 * LAMBDA_C, 6.0, delta_k=4.26e-4)
