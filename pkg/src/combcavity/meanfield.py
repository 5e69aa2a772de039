"""Self-consistent stationary densities, pump sweeps and ordering thresholds.

The stationary density is sought as a fixed point of the Boltzmann map
``P -> exp(-U_MF[P] / k_B T_st)`` on a hard-walled interval.  Energies are
expressed through ``zeta``, so the temperature cancels from the exponent:
``-U_MF / k_B T_st = 2 zeta sum_m w_m^2 Theta_m cos(k_m x - phi_m)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .model import LAMBDA_C, SystemParams, rescaled_pump, stationary_temperature
from .modes import ModeLadder, OrderParameterSet, mode_sums, sinc

DEFAULT_CELLS_PER_LAMBDA = 32
DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 100_000
DEFAULT_SEED_AMPLITUDE = 1e-3
DEFAULT_CUT = 0.05


class NotConverged(RuntimeError):
    def __init__(self, residual: float, result: "FixedPointResult"):
        super().__init__(f"fixed point not converged, last L1 residual {residual:.3g}")
        self.residual = residual
        self.result = result


class NoCrossing(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DensityProfile:
    """Probability density sampled at uniformly spaced nodes.

    Node ``i`` sits at ``-w/2 + i*dx`` and is the midpoint of its cell, so
    the cells tile ``[-w/2 - dx/2, w/2 - dx/2)`` and ``x = 0`` is a node.
    """

    x: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        if self.x.shape != self.density.shape:
            raise ValueError("grid and density differ in shape")

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def width(self) -> float:
        return self.dx * self.x.size

    @property
    def n_lambda(self) -> float:
        return self.width / LAMBDA_C

    def norm(self) -> float:
        return float(self.density.sum() * self.dx)

    @staticmethod
    def grid(width: float, cells_per_lambda: int = DEFAULT_CELLS_PER_LAMBDA) -> np.ndarray:
        if cells_per_lambda < 32:
            raise ValueError("need at least 32 cells per wavelength")
        n = int(round(width / LAMBDA_C * cells_per_lambda))
        dx = width / n
        return -0.5 * width + dx * np.arange(n)

    @classmethod
    def uniform(cls, width: float, cells_per_lambda: int = DEFAULT_CELLS_PER_LAMBDA):
        x = cls.grid(width, cells_per_lambda)
        return cls(x, np.full(x.size, 1.0 / width))

    @classmethod
    def from_weights(cls, x, weights) -> "DensityProfile":
        x = np.asarray(x, dtype=float)
        w = np.asarray(weights, dtype=float)
        dx = x[1] - x[0]
        return cls(x, w / (w.sum() * dx))


@dataclass
class FixedPointResult:
    profile: DensityProfile
    order: OrderParameterSet
    iterations: int
    converged: bool
    residual: float


class MeanFieldSolver:
    """Caches the mode functions of one ladder on one grid."""

    def __init__(self, ladder: ModeLadder, x: np.ndarray):
        self.ladder = ladder
        self.x = np.asarray(x, dtype=float)
        self.dx = float(self.x[1] - self.x[0])
        self.basis = ladder.mode_functions(self.x)
        self.w2 = ladder.weights**2

    def theta(self, density: np.ndarray) -> np.ndarray:
        return self.basis @ density * self.dx

    def exponent(self, theta: np.ndarray, zeta: float) -> np.ndarray:
        """``-U_MF(x) / k_B T_st`` for the given order parameters."""
        return 2.0 * zeta * ((self.w2 * theta) @ self.basis)

    def boltzmann(self, theta: np.ndarray, zeta: float) -> np.ndarray:
        e = self.exponent(theta, zeta)
        p = np.exp(e - e.max())
        return p / (p.sum() * self.dx)

    def update(self, density: np.ndarray, zeta: float) -> np.ndarray:
        return self.boltzmann(self.theta(density), zeta)

    def seeded(self, density: np.ndarray, amplitude: float) -> np.ndarray:
        p = density * (1.0 + amplitude * np.cos(self.x))
        return p / (p.sum() * self.dx)

    def fixed_point(self, density, zeta, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                    seed_amplitude=DEFAULT_SEED_AMPLITUDE) -> FixedPointResult:
        if not tol > 0:
            raise ValueError("tol must be positive")
        p = self.seeded(np.asarray(density, dtype=float), seed_amplitude)
        residual = math.inf
        it = 0
        while it < max_iter:
            nxt = self.update(p, zeta)
            residual = float(np.abs(nxt - p).sum() * self.dx)
            p = nxt
            it += 1
            if residual < tol:
                break
        order = OrderParameterSet.from_theta(self.theta(p))
        return FixedPointResult(DensityProfile(self.x, p), order, it, residual < tol, residual)


def profile_order_parameters(profile: DensityProfile, ladder: ModeLadder) -> OrderParameterSet:
    """Midpoint-rule ``Theta_m[P] = integral P(x) cos(k_m x - phi_m) dx``."""
    return OrderParameterSet.from_theta(MeanFieldSolver(ladder, profile.x).theta(profile.density))


def boltzmann_update(profile: DensityProfile, params: SystemParams,
                     ladder: ModeLadder) -> DensityProfile:
    solver = MeanFieldSolver(ladder, profile.x)
    return DensityProfile(profile.x, solver.update(profile.density, rescaled_pump(params)))


def fixed_point(profile: DensityProfile, params: SystemParams, ladder: ModeLadder,
                tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                seed_amplitude: float = DEFAULT_SEED_AMPLITUDE) -> FixedPointResult:
    """Iterate the Boltzmann map to self-consistency.

    A lambda_c-periodic perturbation of relative size ``seed_amplitude`` is
    applied to the starting profile so that the ordered branch is reachable
    from a homogeneous start.

    Raises
    ------
    NotConverged
        If the L1 change between iterates is still ``>= tol`` after
        ``max_iter`` steps; the exception carries the last iterate.
    """
    solver = MeanFieldSolver(ladder, profile.x)
    res = solver.fixed_point(profile.density, rescaled_pump(params), tol, max_iter, seed_amplitude)
    if not res.converged:
        raise NotConverged(res.residual, res)
    return res


@dataclass
class SweepResult:
    zeta_tot: np.ndarray
    theta_bar: np.ndarray
    theta: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    direction: str
    profiles: list = field(default_factory=list, repr=False)
    meta: dict = field(default_factory=dict)


def sweep(params: SystemParams, ladder: ModeLadder, zeta_tot_grid, direction: str = "up", *,
          width: float = 50 * LAMBDA_C, cells_per_lambda: int = DEFAULT_CELLS_PER_LAMBDA,
          start: DensityProfile | None = None, tol: float = DEFAULT_TOL,
          max_iter: int = DEFAULT_MAX_ITER,
          seed_amplitude: float = DEFAULT_SEED_AMPLITUDE) -> SweepResult:
    """Chain fixed-point solutions along a monotone pump grid.

    Each point starts from the previous stationary profile.  An up-sweep
    starts homogeneous unless ``start`` is given; a down-sweep needs the
    ordered state to start from and, if ``start`` is None, first solves at
    the largest grid value from a homogeneous start.  Only the per-mode
    coupling changes along the grid (``params`` supplies M, N, kappa, ...).
    """
    grid = np.asarray(zeta_tot_grid, dtype=float)
    steps = np.diff(grid)
    if direction == "up":
        ok = np.all(steps > 0)
    elif direction == "down":
        ok = np.all(steps < 0)
    else:
        raise ValueError("direction must be 'up' or 'down'")
    if not ok:
        raise ValueError(f"zeta_tot grid is not monotone for a {direction}-sweep")

    x = start.x if start is not None else DensityProfile.grid(width, cells_per_lambda)
    solver = MeanFieldSolver(ladder, x)
    m = ladder.n_modes
    if start is not None:
        p = start.density
    elif direction == "up":
        p = np.full(x.size, 1.0 / (x.size * solver.dx))
    else:
        top = solver.fixed_point(np.full(x.size, 1.0 / (x.size * solver.dx)), grid[0] / m,
                                 tol, max_iter, seed_amplitude)
        p = top.profile.density

    n = grid.size
    out = SweepResult(grid, np.zeros(n), np.zeros((n, m)), np.zeros(n, dtype=int),
                      np.zeros(n, dtype=bool), direction)
    for i, zt in enumerate(grid):
        res = solver.fixed_point(p, zt / m, tol, max_iter, seed_amplitude)
        p = res.profile.density
        out.theta_bar[i] = res.order.theta_bar
        out.theta[i] = res.order.theta
        out.iterations[i] = res.iterations
        out.converged[i] = res.converged
        out.profiles.append(res.profile)
    out.meta = {"seed_amplitude": seed_amplitude, "tol": tol, "max_iter": max_iter,
                "cells_per_lambda": cells_per_lambda, "width": float(solver.dx * x.size),
                "n_modes": m}
    return out


def threshold_detect(result: SweepResult, cut: float = DEFAULT_CUT) -> float:
    """Pump value where the total order parameter first crosses ``cut``.

    The crossing is linearly interpolated between the bracketing grid points,
    scanning in the sweep direction.
    """
    tb = np.asarray(result.theta_bar)
    z = np.asarray(result.zeta_tot)
    above = tb >= cut
    for i in range(1, tb.size):
        if above[i] != above[i - 1]:
            if not (result.converged[i] and result.converged[i - 1]):
                warnings.warn("threshold bracket contains an unconverged point", RuntimeWarning,
                              stacklevel=2)
            f = (cut - tb[i - 1]) / (tb[i] - tb[i - 1])
            return float(z[i - 1] + f * (z[i] - z[i - 1]))
    raise NoCrossing(f"total order parameter never crosses {cut}")


def analytic_threshold(chi_value: float, n_lambda: int) -> float:
    """Multi-mode threshold estimate from a full-width lambda_c grating.

    ``2 N^2 / sum_{i,j} sinc(pi chi (i - j) / N)`` over the ``N = n_lambda``
    grating sites.
    """
    n = int(n_lambda)
    if n < 1 or n != n_lambda:
        raise ValueError("n_lambda must be a positive integer")
    j = np.arange(n)
    d = j[:, None] - j[None, :]
    return float(2.0 * n * n / sinc(np.pi * chi_value * d / n).sum())


def mean_field_potential(x, theta, params: SystemParams, ladder: ModeLadder) -> np.ndarray:
    """Single-particle potential ``U_MF(x)`` in units of hbar*omega_R."""
    kT = stationary_temperature(params)
    w2 = ladder.weights**2
    return -2.0 * kT * rescaled_pump(params) * ((w2 * np.asarray(theta)) @ ladder.mode_functions(x))


def potential_energy(source, params: SystemParams, ladder: ModeLadder) -> float:
    """Total potential energy ``-k_B T_st N zeta sum_m Theta_m^2``.

    ``source`` is either an array of atom positions or a DensityProfile.
    """
    if isinstance(source, DensityProfile):
        theta = MeanFieldSolver(ladder, source.x).theta(source.density)
    else:
        theta = mode_sums(source, ladder)
    kT = stationary_temperature(params)
    return float(-kT * params.n_atoms * rescaled_pump(params) * np.sum(ladder.weights**2 * theta**2))


def desk_ladder(chi_value: float, width: float = 50 * LAMBDA_C, delta_k: float = 6.4e-4,
                k_center: float = 1.0) -> ModeLadder:
    """Comb centred on ``k_center`` whose bandwidth gives ``chi`` on ``width``.

    The mode spacing is held fixed; ``chi`` is matched by the nearest even
    mode count (at least two), so the realised value is
    ``width * M * delta_k / (2 pi)``.
    """
    bandwidth = 2.0 * np.pi * chi_value / width
    m = max(2, 2 * int(round(bandwidth / delta_k / 2.0)))
    return ModeLadder.equidistant(k_center - 0.5 * (m - 1) * delta_k, delta_k, m)


@dataclass
class PhaseBoundary:
    chi: float
    n_modes: int
    up: SweepResult
    down: SweepResult
    up_threshold: float
    down_threshold: float
    analytic: float


def phase_boundary(chi_value: float, zeta_tot_grid, *, width: float = 50 * LAMBDA_C,
                   delta_k: float = 6.4e-4, params: SystemParams | None = None,
                   cut: float = DEFAULT_CUT, **kw) -> PhaseBoundary:
    """Up- and down-sweep thresholds for one bandwidth.

    The down-sweep starts from the final state of the up-sweep.
    """
    ladder = desk_ladder(chi_value, width, delta_k)
    if params is None:
        params = SystemParams(kappa=400.0, delta_c=-400.0, eta=0.0, n_atoms=1,
                              n_modes=ladder.n_modes, delta_k_frac=delta_k)
    grid = np.sort(np.asarray(zeta_tot_grid, dtype=float))
    up = sweep(params, ladder, grid, "up", width=width, **kw)
    down = sweep(params, ladder, grid[::-1], "down", width=width, start=up.profiles[-1], **kw)

    def safe(res):
        try:
            return threshold_detect(res, cut)
        except NoCrossing:
            return math.nan

    realised = width * ladder.bandwidth / (2.0 * np.pi)
    n_lambda = int(round(width / LAMBDA_C))
    return PhaseBoundary(realised, ladder.n_modes, up, down, safe(up), safe(down),
                         analytic_threshold(realised, n_lambda))
