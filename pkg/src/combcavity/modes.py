"""Mode ladder geometry, comb spectrum and order parameters."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .model import ParameterError, SystemParams

_SINC_TAYLOR = 1e-8


def sinc(x):
    """Unnormalised sinc, sin(x)/x, with the removable singularity filled in."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < _SINC_TAYLOR
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 - x * x / 6.0, np.sin(safe) / safe)


@dataclass(frozen=True, eq=False)
class ModeLadder:
    """Equidistant ladder of cavity modes ``cos(k_m x - phi_m)``.

    Absolute mode indices are never stored.  ``cosine[m]`` is True for
    ``phi_m = 0`` and False for ``phi_m = pi/2``; local index 0 is a cosine
    mode and the parity alternates from there.
    """

    wavenumbers: np.ndarray
    cosine: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.wavenumbers, dtype=float).copy()
        cos = np.asarray(self.cosine, dtype=bool).copy()
        w = np.asarray(self.weights, dtype=float).copy()
        if k.ndim != 1 or k.size < 1 or cos.shape != k.shape or w.shape != k.shape:
            raise ParameterError("wavenumbers, cosine and weights must be equal-length 1D arrays")
        if k.size > 1:
            steps = np.diff(k)
            if np.max(np.abs(steps - steps[0])) > 1e-12:
                raise ParameterError("mode ladder must be equidistant")
        if np.any(cos[1:] == cos[:-1]):
            raise ParameterError("mode phases must alternate between 0 and pi/2")
        if np.any(w < 0):
            raise ParameterError("line weights must be non-negative")
        for arr in (k, cos, w):
            arr.flags.writeable = False
        object.__setattr__(self, "wavenumbers", k)
        object.__setattr__(self, "cosine", cos)
        object.__setattr__(self, "weights", w)

    @classmethod
    def equidistant(cls, k_first: float, delta_k: float, n_modes: int, weights=None):
        k = k_first + delta_k * np.arange(n_modes)
        cos = np.arange(n_modes) % 2 == 0
        w = np.ones(n_modes) if weights is None else np.asarray(weights, dtype=float)
        return cls(k, cos, w)

    @classmethod
    def single(cls, k: float = 1.0) -> "ModeLadder":
        return cls.equidistant(k, 0.0, 1)

    @classmethod
    def degenerate_pair(cls, k: float = 1.0) -> "ModeLadder":
        """A cosine and a sine mode at the same wavenumber."""
        return cls.equidistant(k, 0.0, 2)

    def __len__(self) -> int:
        return self.wavenumbers.size

    @property
    def n_modes(self) -> int:
        return self.wavenumbers.size

    @property
    def phases(self) -> np.ndarray:
        return np.where(self.cosine, 0.0, 0.5 * np.pi)

    @property
    def delta_k(self) -> float:
        return float(self.wavenumbers[1] - self.wavenumbers[0]) if self.n_modes > 1 else 0.0

    @property
    def k_first(self) -> float:
        return float(self.wavenumbers[0])

    @property
    def bandwidth(self) -> float:
        return self.n_modes * self.delta_k

    def mode_functions(self, x) -> np.ndarray:
        """``cos(k_m x - phi_m)`` as an (M, len(x)) array."""
        arg = np.outer(self.wavenumbers, np.asarray(x, dtype=float))
        return np.where(self.cosine[:, None], np.cos(arg), np.sin(arg))


def build_comb(params: SystemParams) -> ModeLadder:
    """Comb lines centred on k_c with a rectangular envelope.

    ``n_modes`` lines spaced by ``delta_k_frac`` fill an envelope of width
    ``bandwidth_frac = n_modes * delta_k_frac``.
    """
    m, dk = params.n_modes, params.delta_k_frac
    if m < 1 or not dk > 0:
        raise ParameterError("need n_modes >= 1 and delta_k_frac > 0")
    if not math.isclose(params.bandwidth_frac, m * dk, rel_tol=1e-9, abs_tol=1e-15):
        raise ParameterError("bandwidth inconsistent with n_modes * delta_k_frac")
    k_first = params.k_center - 0.5 * (m - 1) * dk
    return ModeLadder.equidistant(k_first, dk, m)


def chi(cloud_width: float, bandwidth: float) -> float:
    """Ratio of cloud width to spatial pulse width, ``w * Delta_k / (2 pi)``."""
    return cloud_width * bandwidth / (2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class OrderParameterSet:
    theta: np.ndarray
    theta_bar: float

    @classmethod
    def from_theta(cls, theta) -> "OrderParameterSet":
        theta = np.asarray(theta, dtype=float)
        return cls(theta, float(np.sqrt(np.mean(theta**2))))

    @property
    def theta_bar_sq(self) -> float:
        return float(np.mean(self.theta**2))


def mode_sums(positions, ladder: ModeLadder, chunk: int = 4096) -> np.ndarray:
    """Exact ``Theta_m = (1/N) sum_i cos(k_m x_i - phi_m)`` for every mode."""
    x = np.asarray(positions, dtype=float).ravel()
    if x.size < 1:
        raise ValueError("need at least one atom")
    acc = np.zeros(ladder.n_modes)
    for start in range(0, x.size, chunk):
        acc += ladder.mode_functions(x[start:start + chunk]).sum(axis=1)
    return acc / x.size


def order_parameters(positions, ladder: ModeLadder) -> OrderParameterSet:
    return OrderParameterSet.from_theta(mode_sums(positions, ladder))


def theta_bar_sq_sinc(positions, cloud_width: float, chi_value: float, *, delta_k=None) -> float:
    """Single-sinc estimate of the squared total order parameter.

    Valid in the dense-mode regime ``w * delta_k / pi << 1``; a warning is
    issued when ``delta_k`` is given and the condition is not met.
    """
    if delta_k is not None and cloud_width * delta_k / np.pi > 0.1:
        warnings.warn("dense-mode condition w*delta_k/pi << 1 is violated", RuntimeWarning,
                      stacklevel=2)
    x = np.asarray(positions, dtype=float).ravel()
    d = x[:, None] - x[None, :]
    kern = sinc(np.pi * d * chi_value / cloud_width) * np.cos(d)
    return float(kern.sum() / (2.0 * x.size**2))
