"""Spatial field reconstruction and time-domain analysis of the cavity output.

Output traces are sampled over one round trip, ``0 <= t < 2`` in units of
the single-transit time ``L/c``.  Line ``m`` of the ladder advances its
phase by ``m * pi`` per transit; the optical carrier common to all lines is
dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import LAMBDA_C, SystemParams
from .modes import ModeLadder, OrderParameterSet

ROUND_TRIP = 2.0


class NoPeaks(ValueError):
    pass


def _theta_array(thetas) -> np.ndarray:
    if isinstance(thetas, OrderParameterSet):
        return thetas.theta
    return np.asarray(thetas, dtype=float)


def field_distribution(thetas, ladder: ModeLadder, x) -> np.ndarray:
    """Mode-averaged field ``F(x) = (1/M) sum_m Theta_m cos(k_m x - phi_m)``."""
    theta = _theta_array(thetas)
    return theta @ ladder.mode_functions(x) / ladder.n_modes


def smoothed_envelope(field, dx: float) -> np.ndarray:
    """Square root of ``F^2`` averaged over a window exactly one wavelength wide.

    The window is a rectangle of ``n = lambda_c/dx`` cells, applied with
    half-weighted end points so that it stays centred; averages of
    ``cos^2`` over the window are therefore exact.  Values within half a
    wavelength of either end see a truncated window.
    """
    n_float = LAMBDA_C / dx
    n = int(round(n_float))
    if abs(n - n_float) > 1e-6 * n_float:
        raise ValueError("grid spacing must divide the wavelength")
    if n < 16:
        raise ValueError("grid spacing must be at most lambda_c/16")
    kernel = np.ones(n + 1)
    kernel[0] = kernel[-1] = 0.5
    kernel /= n
    sq = np.asarray(field, dtype=float) ** 2
    return np.sqrt(np.convolve(sq, kernel, mode="same"))


def order_from_quadrature(alpha, params: SystemParams, ladder: ModeLadder | None = None):
    """Order parameters read out from the field quadratures.

    Inverts the stationary-field relation: the quadrature rotated by
    ``-arg(1/(Delta_c + i kappa))`` is scaled by ``sqrt(Delta_c^2+kappa^2)/(N |eta_m|)``.
    """
    alpha = np.asarray(alpha, dtype=complex)
    eta_m = params.eta * (ladder.weights if ladder is not None else np.ones(alpha.shape[-1]))
    if np.any(eta_m == 0):
        raise ValueError("quadrature readout needs a non-zero coupling eta")
    response = 1.0 / (params.delta_c + 1j * params.kappa)
    quad = np.real(alpha * np.exp(-1j * np.angle(response)))
    return math.hypot(params.delta_c, params.kappa) / (params.n_atoms * np.abs(eta_m)) * quad


@dataclass(frozen=True, eq=False)
class PulseTrace:
    times: np.ndarray
    intensity: np.ndarray

    @property
    def period(self) -> float:
        return ROUND_TRIP


def output_intensity(alpha, samples: int | None = None) -> PulseTrace:
    """``I(t) = |sum_m alpha_m exp(-i m pi t)|^2`` over one round trip.

    With ``S`` samples at ``t_s = 2 s / S`` the sum is a length-``S``
    discrete Fourier transform of the zero-padded amplitudes.
    """
    alpha = np.asarray(alpha, dtype=complex)
    m = alpha.size
    if samples is None:
        samples = max(64, 16 * m)
    if samples < 4 * m:
        raise ValueError(f"need at least {4 * m} samples per round trip")
    spectrum = np.fft.fft(alpha, n=samples)
    times = ROUND_TRIP * np.arange(samples) / samples
    return PulseTrace(times, np.abs(spectrum) ** 2)


def averaged_output_intensity(alpha_series, samples: int | None = None) -> PulseTrace:
    """Mean of the snapshot traces of several field samples."""
    series = np.atleast_2d(np.asarray(alpha_series, dtype=complex))
    traces = [output_intensity(a, samples) for a in series]
    return PulseTrace(traces[0].times, np.mean([t.intensity for t in traces], axis=0))


@dataclass(frozen=True)
class PulseMetrics:
    n_peaks: int
    peak_times: np.ndarray
    peak_heights: np.ndarray
    widths: np.ndarray
    spacings: np.ndarray
    equispaced: bool
    repetition_period: float | None
    contrast: float

    @property
    def aperiodic(self) -> bool:
        return not self.equispaced


def pulse_metrics(trace: PulseTrace, threshold: float = 0.25,
                  spacing_tol: float = 0.1) -> PulseMetrics:
    """Count and characterise the pulses in one round-trip window.

    Peaks are circular local maxima above ``threshold * max(I)``.  The pulse
    train counts as periodic when every peak-to-peak spacing (including the
    wrap-around) is within ``spacing_tol`` of ``period / n_peaks``.
    """
    intensity = np.asarray(trace.intensity, dtype=float)
    top = intensity.max()
    if not top > 0:
        raise NoPeaks("trace is identically zero")
    left = np.roll(intensity, 1)
    right = np.roll(intensity, -1)
    idx = np.flatnonzero((intensity > left) & (intensity >= right) & (intensity >= threshold * top))
    if idx.size == 0:
        raise NoPeaks(f"no local maximum above {threshold:g} of the peak intensity")

    dt = trace.times[1] - trace.times[0]
    period = trace.period
    widths = []
    for i in idx:
        level = 0.5 * intensity[i]
        lo = _dist_to_level(intensity, i, level, -1)
        hi = _dist_to_level(intensity, i, level, +1)
        widths.append((lo + hi) * dt)
    times = trace.times[idx]
    spacings = np.diff(np.concatenate([times, [times[0] + period]]))
    ideal = period / idx.size
    equispaced = bool(np.all(np.abs(spacings - ideal) <= spacing_tol * ideal))
    return PulseMetrics(
        n_peaks=int(idx.size),
        peak_times=times,
        peak_heights=intensity[idx],
        widths=np.asarray(widths),
        spacings=spacings,
        equispaced=equispaced,
        repetition_period=ideal if equispaced else None,
        contrast=float((top - intensity.min()) / top),
    )


def _dist_to_level(intensity, i, level, step):
    """Fractional number of samples from peak ``i`` to where I drops below ``level``."""
    n = intensity.size
    j = i
    for count in range(1, n):
        nxt = (i + step * count) % n
        if intensity[nxt] < level:
            frac = (intensity[j] - level) / (intensity[j] - intensity[nxt])
            return count - 1 + frac
        j = nxt
    return math.nan


def grating_cluster(center: float, n_sites: int, offset: float = LAMBDA_C / 8) -> np.ndarray:
    """Atoms on ``n_sites`` consecutive wavelength sites around ``center``.

    The default ``offset`` of lambda_c/8 puts the grating at equal overlap
    with the cosine and sine modes of each near-degenerate pair.
    """
    j = np.arange(n_sites) - 0.5 * (n_sites - 1)
    return center + j * LAMBDA_C + offset
