"""Physical parameters and derived scalars for the comb-pumped cavity.

Internal units: hbar = 1, k_c = 1 and frequencies/energies are measured in
the central recoil frequency omega_R = hbar k_c^2 / (2 m_a).  With these
choices the atomic mass is m_a = 1/2, so dx/dt = 2 p and the kinetic energy
of one atom is p^2.  Lengths are in units of 1/k_c, so lambda_c = 2 pi.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import scipy.constants as const

ATOM_MASS = 0.5
LAMBDA_C = 2.0 * math.pi

_REL_TOL = 1e-9


class ParameterError(ValueError):
    """Raised when a parameter set violates a physical invariant."""


@dataclass(frozen=True)
class SystemParams:
    """Cavity, pump and ensemble parameters in recoil units.

    ``bandwidth_frac`` is the full width of the rectangular comb envelope,
    which holds ``n_modes`` lines spaced by ``delta_k_frac``; it is derived
    when omitted.
    """

    kappa: float
    delta_c: float
    eta: float
    n_atoms: int
    n_modes: int = 1
    delta_k_frac: float = 4.26e-4
    bandwidth_frac: float | None = None
    trap_freq: float = 0.0
    k_center: float = 1.0

    def __post_init__(self):
        if self.bandwidth_frac is None:
            object.__setattr__(self, "bandwidth_frac", self.n_modes * self.delta_k_frac)
        problems = self.violations()
        if problems:
            raise ParameterError("; ".join(problems))

    def violations(self) -> list[str]:
        out = []
        if not self.delta_c < 0:
            out.append("delta_c must be negative")
        if not self.kappa > 0:
            out.append("kappa must be positive")
        if not self.eta >= 0:
            out.append("eta must be non-negative")
        if self.n_atoms < 1:
            out.append("n_atoms must be >= 1")
        if self.n_modes < 1:
            out.append("n_modes must be >= 1")
        if not self.delta_k_frac > 0:
            out.append("delta_k_frac must be positive")
        if self.trap_freq < 0:
            out.append("trap_freq must be non-negative")
        if self.k_center != 1.0:
            out.append("k_center is the length unit and must equal 1")
        expected = self.n_modes * self.delta_k_frac
        if not math.isclose(self.bandwidth_frac, expected, rel_tol=_REL_TOL, abs_tol=1e-15):
            out.append(
                f"bandwidth_frac={self.bandwidth_frac!r} inconsistent with "
                f"n_modes*delta_k_frac={expected!r}"
            )
        return out

    @classmethod
    def from_zeta_tot(
        cls,
        zeta_tot: float,
        *,
        kappa: float,
        delta_c: float,
        n_atoms: int,
        n_modes: int = 1,
        delta_k_frac: float = 4.26e-4,
        trap_freq: float = 0.0,
    ) -> "SystemParams":
        """Build parameters from the total pump ``zeta_tot = M * zeta``."""
        if zeta_tot < 0:
            raise ParameterError("zeta_tot must be non-negative")
        zeta = zeta_tot / n_modes
        d2k2 = delta_c**2 + kappa**2
        eta = math.sqrt(zeta * d2k2**2 / (4.0 * n_atoms * delta_c**2)) if delta_c else 0.0
        return cls(
            kappa=kappa,
            delta_c=delta_c,
            eta=eta,
            n_atoms=n_atoms,
            n_modes=n_modes,
            delta_k_frac=delta_k_frac,
            trap_freq=trap_freq,
        )

    def with_zeta_tot(self, zeta_tot: float) -> "SystemParams":
        return SystemParams.from_zeta_tot(
            zeta_tot,
            kappa=self.kappa,
            delta_c=self.delta_c,
            n_atoms=self.n_atoms,
            n_modes=self.n_modes,
            delta_k_frac=self.delta_k_frac,
            trap_freq=self.trap_freq,
        )

    @property
    def zeta(self) -> float:
        return rescaled_pump(self)

    @property
    def zeta_tot(self) -> float:
        return self.n_modes * rescaled_pump(self)

    @property
    def kT_st(self) -> float:
        return stationary_temperature(self)

    def to_dict(self) -> dict:
        return asdict(self)


def rescaled_pump(params: SystemParams) -> float:
    """Per-mode rescaled pump ``zeta = 4 N eta^2 Delta_c^2 / (Delta_c^2 + kappa^2)^2``."""
    d2k2 = params.delta_c**2 + params.kappa**2
    return 4.0 * params.n_atoms * params.eta**2 * params.delta_c**2 / d2k2**2


def total_pump(params: SystemParams) -> float:
    return params.n_modes * rescaled_pump(params)


def stationary_temperature(params: SystemParams) -> float:
    """Self-consistent stationary temperature ``k_B T_st`` in units of hbar*omega_R."""
    if not params.delta_c < 0:
        raise ParameterError("stationary temperature requires delta_c < 0")
    return (params.delta_c**2 + params.kappa**2) / (-4.0 * params.delta_c)


@dataclass(frozen=True)
class ValidityReport:
    detuning_ratio: float
    pump_bound: float
    detuning_ok: bool
    pump_ok: bool
    messages: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.detuning_ok and self.pump_ok


def thermal_validity_check(params: SystemParams, factor: float = 10.0) -> ValidityReport:
    """Check the conditions under which the stationary state is thermal.

    Both ``|Delta_c| >> omega_R`` and ``|Delta_c| >> 4 zeta`` are tested as
    ``>= factor`` times the right-hand side.  Failures emit a warning and are
    listed in the report; nothing is raised.
    """
    ratio = abs(params.delta_c)
    bound = 4.0 * rescaled_pump(params)
    detuning_ok = ratio >= factor
    pump_ok = ratio >= factor * bound
    messages = []
    if not detuning_ok:
        messages.append(f"|delta_c|/omega_R = {ratio:g} is not >> 1 (needs >= {factor:g})")
    if not pump_ok:
        messages.append(
            f"|delta_c|/omega_R = {ratio:g} is not >> 4*zeta = {bound:g} "
            f"(needs >= {factor * bound:g})"
        )
    for msg in messages:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return ValidityReport(ratio, bound, detuning_ok, pump_ok, messages)


def recoil_frequency_si(wavelength: float, mass: float) -> float:
    """omega_R = hbar k_c^2 / (2 m_a) in rad/s for a wavelength in metres and mass in kg."""
    k = 2.0 * math.pi / wavelength
    return const.hbar * k**2 / (2.0 * mass)


_FREQ_FIELDS = ("kappa", "delta_c", "eta", "trap_freq")


def to_si(params: SystemParams, wavelength: float, mass: float) -> dict:
    """Express the rate parameters in rad/s and the centre wavenumber in 1/m."""
    w_r = recoil_frequency_si(wavelength, mass)
    out = params.to_dict()
    for name in _FREQ_FIELDS:
        out[name] = out[name] * w_r
    out["k_center"] = 2.0 * math.pi / wavelength
    out["wavelength"] = wavelength
    out["mass"] = mass
    return out


def from_si(values: dict) -> SystemParams:
    """Inverse of :func:`to_si`."""
    values = dict(values)
    wavelength = values.pop("wavelength")
    mass = values.pop("mass")
    w_r = recoil_frequency_si(wavelength, mass)
    for name in _FREQ_FIELDS:
        values[name] = values[name] / w_r
    values["k_center"] = 1.0
    return SystemParams(**values)
