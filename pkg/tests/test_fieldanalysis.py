import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from combcavity.fieldanalysis import (NoPeaks, PulseTrace, averaged_output_intensity,
                                      field_distribution, grating_cluster, order_from_quadrature,
                                      output_intensity, pulse_metrics, smoothed_envelope)
from combcavity.integrator import adiabatic_fields
from combcavity.model import LAMBDA_C, SystemParams
from combcavity.modes import ModeLadder, build_comb, mode_sums

DX = LAMBDA_C / 64


def comb(m=50, n=20, zt=15.0):
    p = SystemParams.from_zeta_tot(zt, kappa=400.0, delta_c=-400.0, n_atoms=n, n_modes=m)
    return p, build_comb(p)


def test_single_mode_field():
    x = np.linspace(-30, 30, 301)
    assert np.allclose(field_distribution([1.0], ModeLadder.single(), x), np.cos(x), atol=1e-15)


def test_pair_field_is_shifted_cosine():
    x = np.linspace(-30, 30, 301)
    f = field_distribution(np.full(2, 1 / math.sqrt(2)), ModeLadder.degenerate_pair(), x)
    assert np.allclose(f, np.cos(x - math.pi / 4) / 2, atol=1e-15)


def test_single_mode_envelope_is_flat():
    x = np.arange(-40 * 64, 40 * 64) * DX
    env = smoothed_envelope(np.cos(x), DX)
    assert np.allclose(env[64:-64], 1 / math.sqrt(2), rtol=0, atol=1e-10)


def test_pair_envelope_is_flat():
    x = np.arange(-40 * 64, 40 * 64) * DX
    th = mode_sums(np.random.default_rng(1).normal(0, 3, 30), ModeLadder.degenerate_pair())
    env = smoothed_envelope(field_distribution(th, ModeLadder.degenerate_pair(), x), DX)
    inner = env[64:-64]
    assert np.ptp(inner) < 1e-10 * inner.max()


def test_envelope_grid_requirements():
    with pytest.raises(ValueError):
        smoothed_envelope(np.zeros(100), LAMBDA_C / 10.5)
    with pytest.raises(ValueError):
        smoothed_envelope(np.zeros(100), LAMBDA_C / 8)


def test_cluster_envelope_localised_on_pulse_length():
    _, lad = comb()
    x0 = 150 * LAMBDA_C
    x = np.arange(0, 300 * 64) * DX
    th = mode_sums(grating_cluster(x0, 3, 0.0), lad)
    env = smoothed_envelope(field_distribution(th, lad, x), DX)
    peak = x[np.argmax(env[64:-64]) + 64]
    assert abs(peak - x0) < LAMBDA_C
    pulse = 2 * math.pi / lad.bandwidth
    at = np.interp([x0 + 0.25 * pulse, x0 + pulse, x0 - pulse], x, env)
    assert at[0] > 0.5 * env.max()
    assert at[1] < 0.1 * env.max() and at[2] < 0.1 * env.max()


@settings(max_examples=40)
@given(arrays(float, st.integers(1, 25), elements=st.floats(-500, 500)))
def test_quadrature_inverts_adiabatic_fields(x):
    p = SystemParams.from_zeta_tot(3.0, kappa=400.0, delta_c=-250.0, n_atoms=x.size, n_modes=8,
                                   delta_k_frac=1e-3)
    lad = build_comb(p)
    th = mode_sums(x, lad)
    back = order_from_quadrature(adiabatic_fields(x, p, lad), p, lad)
    assert np.allclose(back, th, rtol=0, atol=1e-12)


def test_quadrature_zero_and_no_coupling():
    p, lad = comb(m=4)
    assert np.all(order_from_quadrature(np.zeros(4), p, lad) == 0)
    dark = SystemParams(kappa=400.0, delta_c=-400.0, eta=0.0, n_atoms=3, n_modes=4)
    with pytest.raises(ValueError):
        order_from_quadrature(np.ones(4), dark)


def test_single_line_output_is_constant():
    tr = output_intensity(np.array([0.3 - 0.4j]), 64)
    assert np.allclose(tr.intensity, 0.25, rtol=1e-14)


def test_two_lines_beat_once_per_round_trip():
    tr = output_intensity(np.array([0.5, 0.5]), 400)
    assert np.allclose(tr.intensity, 0.5 * (1 + np.cos(math.pi * tr.times)), atol=1e-14)
    m = pulse_metrics(tr)
    assert m.n_peaks == 1 and m.peak_times[0] == 0.0


def test_in_phase_comb_gives_one_dirichlet_pulse():
    a = np.full(50, 0.2 + 0.1j)
    tr = output_intensity(a, 5000)
    m = pulse_metrics(tr)
    assert m.n_peaks == 1
    assert tr.intensity.max() == pytest.approx(50**2 * abs(a[0]) ** 2, rel=1e-12)
    # first zero at t = 2/M, i.e. a spatial half-width of 2 pi / bandwidth
    assert oracles.output_intensity(a, 2 / 50) < 1e-20
    assert m.equispaced and m.repetition_period == pytest.approx(2.0)


@settings(max_examples=40)
@given(arrays(complex, st.integers(1, 60), elements=st.complex_numbers(max_magnitude=5)),
       st.integers(4, 8))
def test_parseval(alpha, factor):
    tr = output_intensity(alpha, factor * alpha.size)
    assert tr.intensity.mean() == pytest.approx(np.sum(np.abs(alpha) ** 2), rel=1e-10, abs=1e-12)


@settings(max_examples=30)
@given(arrays(complex, st.integers(1, 30), elements=st.complex_numbers(max_magnitude=5)),
       st.floats(0, 2 * math.pi))
def test_global_phase_invariance_and_positivity(alpha, phase):
    a = output_intensity(alpha, 128).intensity
    b = output_intensity(alpha * np.exp(1j * phase), 128).intensity
    assert np.all(a >= 0)
    assert np.allclose(a, b, rtol=1e-9, atol=1e-9)


def test_trace_matches_direct_sum_and_is_periodic():
    alpha = np.random.default_rng(3).normal(size=12) + 1j * np.random.default_rng(4).normal(size=12)
    tr = output_intensity(alpha, 96)
    direct = [oracles.output_intensity(alpha, t) for t in tr.times]
    assert np.allclose(tr.intensity, direct, rtol=1e-10, atol=1e-10)
    assert oracles.output_intensity(alpha, 0.37) == pytest.approx(
        oracles.output_intensity(alpha, 2.37), rel=1e-10)
    assert tr.period == 2.0


def test_trace_needs_enough_samples():
    with pytest.raises(ValueError):
        output_intensity(np.ones(50), 100)


def test_averaged_trace():
    a, b = np.array([1.0, 0.0]), np.array([0.0, 2.0])
    avg = averaged_output_intensity([a, b], 16)
    assert np.allclose(avg.intensity, 2.5)


def test_two_clusters_far_apart_give_doubled_rate():
    p, lad = comb()
    half = 0.5 * math.pi / lad.delta_k       # clusters at +-L/2 -> pulses at t = +-1/2
    x = np.concatenate([grating_cluster(-half, 10), grating_cluster(half, 10)])
    tr = output_intensity(adiabatic_fields(x, p, lad), 4000)
    m = pulse_metrics(tr)
    assert m.n_peaks == 2 and m.equispaced
    assert m.repetition_period == pytest.approx(1.0)
    assert np.allclose(m.peak_times, [0.5, 1.5], atol=0.01)


def test_cluster_pulse_timing_follows_position():
    p, lad = comb(n=10)
    length = math.pi / lad.delta_k
    for c in (200 * LAMBDA_C, 400 * LAMBDA_C):
        x = grating_cluster(c, 10)
        m = pulse_metrics(output_intensity(adiabatic_fields(x, p, lad), 4000))
        # the cluster, its mirror image, and their copies half a round trip later
        tau = (c + LAMBDA_C / 8) / length
        assert m.n_peaks == 4
        assert np.allclose(np.sort(m.peak_times), [tau, 1 - tau, 1 + tau, 2 - tau], atol=0.005)


def test_aperiodic_trace_flagged():
    tr = PulseTrace(np.arange(200) * 0.01, np.exp(-((np.arange(200) - 30) / 3.0) ** 2)
                    + 0.8 * np.exp(-((np.arange(200) - 60) / 3.0) ** 2))
    m = pulse_metrics(tr)
    assert m.n_peaks == 2 and m.aperiodic and m.repetition_period is None


def test_no_peaks():
    with pytest.raises(NoPeaks):
        pulse_metrics(PulseTrace(np.arange(10) * 0.2, np.zeros(10)))


def test_grating_cluster_geometry():
    x = grating_cluster(10.0, 5, 0.0)
    assert np.allclose(np.diff(x), LAMBDA_C) and x.mean() == pytest.approx(10.0)
    y = grating_cluster(0.0, 4)
    assert y.mean() == pytest.approx(LAMBDA_C / 8)
