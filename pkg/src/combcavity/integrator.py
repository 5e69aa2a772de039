"""Stochastic atom-field dynamics.

Positions and momenta follow the dipole force of the intracavity fields,
and every mode obeys a damped, driven Langevin equation with additive
complex white noise.  Steps use Euler-Maruyama for the fields and a
semi-implicit (symplectic) Euler update for the atoms: the momentum kick is
applied first and the drift of ``x`` uses the updated momentum.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .model import ATOM_MASS, SystemParams
from .modes import ModeLadder, mode_sums

DEFAULT_KAPPA_DT = 0.02
MAX_KAPPA_DT = 0.1
NOISE_CHUNK = 2048


class NonFiniteError(FloatingPointError):
    """The integration produced NaN or Inf."""

    def __init__(self, time: float):
        super().__init__(f"non-finite state at t = {time:.6g} (dt too large or parameter blow-up)")
        self.time = time


@dataclass
class EnsembleState:
    time: float
    positions: np.ndarray
    momenta: np.ndarray
    fields: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.momenta = np.asarray(self.momenta, dtype=float)
        self.fields = np.asarray(self.fields, dtype=complex)
        if self.positions.shape != self.momenta.shape or self.positions.ndim != 1:
            raise ValueError("positions and momenta must be 1D arrays of equal length")

    @property
    def n_atoms(self) -> int:
        return self.positions.size

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.positions)) and np.all(np.isfinite(self.momenta))
                    and np.all(np.isfinite(self.fields)))

    def check(self, params: SystemParams, ladder: ModeLadder):
        if self.n_atoms != params.n_atoms or self.fields.size != ladder.n_modes:
            raise ValueError("state dimensions do not match the parameters")
        if not self.is_finite():
            raise NonFiniteError(self.time)

    def copy(self) -> "EnsembleState":
        return EnsembleState(self.time, self.positions.copy(), self.momenta.copy(),
                             self.fields.copy())


@dataclass
class TrajectoryRecord:
    """Sampled observables of one trajectory (or an ensemble mean).

    ``ekin`` is the mean kinetic energy per atom, ``<p^2>/(2 m_a)``, and
    ``photons`` the total intracavity photon number.
    """

    times: np.ndarray
    theta: np.ndarray
    theta_bar: np.ndarray
    photons: np.ndarray
    ekin: np.ndarray
    positions: np.ndarray | None = None
    fields: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.times.size


@dataclass(frozen=True)
class Schedule:
    t_end: float
    dt: float
    sample_stride: int = 1

    @classmethod
    def from_kappa(cls, params: SystemParams, kappa_t_end: float,
                   kappa_dt: float = DEFAULT_KAPPA_DT, n_samples: int = 200) -> "Schedule":
        dt = kappa_dt / params.kappa
        n_steps = int(round(kappa_t_end / kappa_dt))
        return cls(n_steps * dt, dt, max(1, n_steps // n_samples))

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


def _check_dt(dt: float, params: SystemParams):
    if not dt > 0:
        raise ValueError("dt must be positive")
    if dt * params.kappa > MAX_KAPPA_DT * (1 + 1e-12):
        raise ValueError(f"dt = {dt:g} exceeds the cap {MAX_KAPPA_DT:g}/kappa")


def _couplings(params: SystemParams, ladder: ModeLadder) -> np.ndarray:
    return params.eta * ladder.weights


def deterministic_drift(state: EnsembleState, params: SystemParams, ladder: ModeLadder):
    """Right-hand sides ``(dx/dt, dp/dt, dalpha/dt)`` without noise."""
    g = ladder.mode_functions(state.positions)
    k = ladder.wavenumbers[:, None]
    # sin(k x - phi): sin(kx) for cosine modes, -cos(kx) for sine modes
    arg = k * state.positions[None, :]
    s = np.where(ladder.cosine[:, None], np.sin(arg), -np.cos(arg))
    eta_m = _couplings(params, ladder)
    drive = 2.0 * eta_m * ladder.wavenumbers * state.fields.real
    pdot = drive @ s - ATOM_MASS * params.trap_freq**2 * state.positions
    n_theta = g.sum(axis=1)
    adot = (1j * params.delta_c - params.kappa) * state.fields - 1j * eta_m * n_theta
    return state.momenta / ATOM_MASS, pdot, adot


def adiabatic_fields(positions, params: SystemParams, ladder: ModeLadder) -> np.ndarray:
    """Stationary fields ``alpha_m = eta N Theta_m / (Delta_c + i kappa)``."""
    theta = mode_sums(positions, ladder)
    return _couplings(params, ladder) * params.n_atoms * theta / (params.delta_c + 1j * params.kappa)


# ---------------------------------------------------------------- kernels


@njit(cache=True, nogil=True)
def _mode_pass(x, k0, dk, cosine, drive, theta, force, zr, zi, wr, wi):
    n = x.size
    m_count = cosine.size
    for j in range(n):
        zr[j] = math.cos(k0 * x[j])
        zi[j] = math.sin(k0 * x[j])
        wr[j] = math.cos(dk * x[j])
        wi[j] = math.sin(dk * x[j])
        force[j] = 0.0
    for m in range(m_count):
        if m > 0:
            for j in range(n):
                r = zr[j] * wr[j] - zi[j] * wi[j]
                zi[j] = zr[j] * wi[j] + zi[j] * wr[j]
                zr[j] = r
        c = drive[m]
        acc = 0.0
        if cosine[m]:
            for j in range(n):
                acc += zr[j]
                force[j] += c * zi[j]
        else:
            for j in range(n):
                acc += zi[j]
                force[j] -= c * zr[j]
        theta[m] = acc / n


@njit(cache=True, nogil=True)
def _advance(x, p, ar, ai, k0, dk, cosine, eta_m, n_atoms, kappa, delta_c, trap_coef, dt,
             noise, step0, stride, adiabatic, rec_theta, rec_photons, rec_ekin, rec_pos,
             rec_ar, rec_ai, rec_i):
    """Integrate ``noise.shape[0]`` steps in place.

    Returns ``(next_record_index, failed_step)`` where ``failed_step`` is -1
    on success or the chunk-local index of the first non-finite step.
    """
    n = x.size
    m_count = cosine.size
    theta = np.empty(m_count)
    drive = np.empty(m_count)
    force = np.empty(n)
    zr = np.empty(n)
    zi = np.empty(n)
    wr = np.empty(n)
    wi = np.empty(n)
    k_m = k0 + dk * np.arange(m_count)
    norm = delta_c * delta_c + kappa * kappa
    keep_pos = rec_pos.shape[1] > 0
    for s in range(noise.shape[0]):
        if adiabatic:
            for m in range(m_count):
                drive[m] = 0.0
            _mode_pass(x, k0, dk, cosine, drive, theta, force, zr, zi, wr, wi)
            for m in range(m_count):
                a = eta_m[m] * n_atoms * theta[m] / norm
                ar[m] = a * delta_c
                ai[m] = -a * kappa
        for m in range(m_count):
            drive[m] = 2.0 * eta_m[m] * k_m[m] * ar[m]
        _mode_pass(x, k0, dk, cosine, drive, theta, force, zr, zi, wr, wi)
        check = 0.0
        for m in range(m_count):
            check += theta[m] + ar[m] + ai[m]
        if not math.isfinite(check):
            return rec_i, s
        if (step0 + s) % stride == 0:
            _record(x, p, ar, ai, theta, rec_theta, rec_photons, rec_ekin, rec_pos, rec_ar,
                    rec_ai, rec_i, keep_pos)
            rec_i += 1
        if not adiabatic:
            for m in range(m_count):
                dar = -kappa * ar[m] - delta_c * ai[m]
                dai = delta_c * ar[m] - kappa * ai[m] - eta_m[m] * n_atoms * theta[m]
                ar[m] += dt * dar + noise[s, m, 0]
                ai[m] += dt * dai + noise[s, m, 1]
        for j in range(n):
            p[j] += dt * (force[j] - trap_coef * x[j])
            x[j] += dt * p[j] / 0.5
    return rec_i, -1


@njit(cache=True, nogil=True)
def _record(x, p, ar, ai, theta, rec_theta, rec_photons, rec_ekin, rec_pos, rec_ar, rec_ai,
            i, keep_pos):
    m_count = theta.size
    ph = 0.0
    for m in range(m_count):
        rec_theta[i, m] = theta[m]
        rec_ar[i, m] = ar[m]
        rec_ai[i, m] = ai[m]
        ph += ar[m] * ar[m] + ai[m] * ai[m]
    rec_photons[i] = ph
    ek = 0.0
    for j in range(x.size):
        ek += p[j] * p[j]
    rec_ekin[i] = ek / x.size / (2.0 * 0.5)
    if keep_pos:
        for j in range(x.size):
            rec_pos[i, j] = x[j]


@njit(cache=True, nogil=True)
def _final_record(x, p, ar, ai, k0, dk, cosine, eta_m, n_atoms, kappa, delta_c, adiabatic,
                  rec_theta, rec_photons, rec_ekin, rec_pos, rec_ar, rec_ai, rec_i):
    n = x.size
    m_count = cosine.size
    theta = np.empty(m_count)
    drive = np.zeros(m_count)
    force = np.empty(n)
    zr = np.empty(n)
    zi = np.empty(n)
    wr = np.empty(n)
    wi = np.empty(n)
    _mode_pass(x, k0, dk, cosine, drive, theta, force, zr, zi, wr, wi)
    if adiabatic:
        norm = delta_c * delta_c + kappa * kappa
        for m in range(m_count):
            a = eta_m[m] * n_atoms * theta[m] / norm
            ar[m] = a * delta_c
            ai[m] = -a * kappa
    _record(x, p, ar, ai, theta, rec_theta, rec_photons, rec_ekin, rec_pos, rec_ar, rec_ai,
            rec_i, rec_pos.shape[1] > 0)


# ---------------------------------------------------------------- drivers


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def trajectory_seeds(master_seed: int, index: int):
    """Independent (initial-condition, noise) seed sequences for one trajectory."""
    return (np.random.SeedSequence(master_seed, spawn_key=(index, 0)),
            np.random.SeedSequence(master_seed, spawn_key=(index, 1)))


class _Integration:
    """Mutable integration buffers shared by :func:`simulate` and :func:`stochastic_step`."""

    def __init__(self, state, params, ladder, dt, adiabatic):
        state.check(params, ladder)
        _check_dt(dt, params)
        self.params = params
        self.ladder = ladder
        self.dt = dt
        self.adiabatic = adiabatic
        self.t0 = state.time
        self.x = state.positions.copy()
        self.p = state.momenta.copy()
        self.ar = np.ascontiguousarray(state.fields.real, dtype=float)
        self.ai = np.ascontiguousarray(state.fields.imag, dtype=float)
        self.eta_m = np.ascontiguousarray(_couplings(params, ladder))
        self.trap = ATOM_MASS * params.trap_freq**2
        self.noise_scale = math.sqrt(params.kappa * dt / 2.0)
        self.step = 0

    def noise(self, rng, n):
        m = self.ladder.n_modes
        if self.adiabatic:
            return np.zeros((n, m, 2))
        return rng.standard_normal((n, m, 2)) * self.noise_scale

    def run(self, rng, n_steps, stride, buffers):
        ladder = self.ladder
        done = 0
        rec_i = 0
        while done < n_steps:
            n = min(NOISE_CHUNK, n_steps - done)
            rec_i, failed = _advance(
                self.x, self.p, self.ar, self.ai, ladder.k_first, ladder.delta_k, ladder.cosine,
                self.eta_m, float(self.params.n_atoms), self.params.kappa, self.params.delta_c,
                self.trap, self.dt, self.noise(rng, n), done, stride, self.adiabatic,
                *buffers, rec_i)
            if failed >= 0:
                raise NonFiniteError(self.t0 + (done + failed) * self.dt)
            done += n
        self.step += n_steps
        return rec_i

    def state(self) -> EnsembleState:
        return EnsembleState(self.t0 + self.step * self.dt, self.x.copy(), self.p.copy(),
                             self.ar + 1j * self.ai)


def _buffers(n_samples, n_modes, n_atoms, keep_positions):
    return (np.zeros((n_samples, n_modes)), np.zeros(n_samples), np.zeros(n_samples),
            np.zeros((n_samples, n_atoms if keep_positions else 0)),
            np.zeros((n_samples, n_modes)), np.zeros((n_samples, n_modes)))


def stochastic_step(state: EnsembleState, params: SystemParams, ladder: ModeLadder, dt: float,
                    rng, adiabatic: bool = False) -> EnsembleState:
    """Advance ``state`` by a single step of size ``dt`` (``dt <= 0.1/kappa``)."""
    run = _Integration(state, params, ladder, dt, adiabatic)
    run.run(make_rng(rng), 1, 1, _buffers(1, ladder.n_modes, state.n_atoms, False))
    out = run.state()
    if not out.is_finite():
        raise NonFiniteError(out.time)
    return out


def simulate(initial: EnsembleState, params: SystemParams, ladder: ModeLadder,
             schedule: Schedule, seed, *, adiabatic: bool = False,
             keep_positions: bool = False) -> TrajectoryRecord:
    """Integrate one trajectory and sample observables every ``sample_stride`` steps.

    Samples are taken at step indices ``0, stride, 2*stride, ...`` up to and
    including the final step.  The run is fully determined by ``seed``.
    """
    run = _Integration(initial, params, ladder, schedule.dt, adiabatic)
    n_steps, stride = schedule.n_steps, int(schedule.sample_stride)
    if n_steps < 1 or stride < 1:
        raise ValueError("schedule needs at least one step and a positive stride")
    n_samples = n_steps // stride + 1
    buffers = _buffers(n_samples, ladder.n_modes, initial.n_atoms, keep_positions)
    rec_i = run.run(make_rng(seed), n_steps, stride, buffers)
    if n_steps % stride == 0:
        _final_record(run.x, run.p, run.ar, run.ai, ladder.k_first, ladder.delta_k,
                      ladder.cosine, run.eta_m, float(params.n_atoms), params.kappa,
                      params.delta_c, adiabatic, *buffers, rec_i)
        rec_i += 1
    if rec_i != n_samples:
        raise RuntimeError("sample bookkeeping mismatch")
    if not (np.all(np.isfinite(run.x)) and np.all(np.isfinite(run.p))):
        raise NonFiniteError(initial.time + n_steps * schedule.dt)
    theta, photons, ekin, pos, rec_ar, rec_ai = buffers
    times = initial.time + np.arange(n_samples) * stride * schedule.dt
    return TrajectoryRecord(
        times=times,
        theta=theta,
        theta_bar=np.sqrt(np.mean(theta**2, axis=1)),
        photons=photons,
        ekin=ekin,
        positions=pos if keep_positions else None,
        fields=rec_ar + 1j * rec_ai,
        meta={
            "scheme": "adiabatic-fields" if adiabatic else "euler-maruyama/symplectic-euler",
            "dt": schedule.dt,
            "kappa_dt": schedule.dt * params.kappa,
            "sample_stride": stride,
            "n_steps": n_steps,
        },
    )


def thermal_cloud(params: SystemParams, n_modes: int, width: float, kT: float, rng,
                  time: float = 0.0) -> EnsembleState:
    """Uniform positions on ``[-width/2, width/2]``, Gaussian momenta, empty fields.

    Momenta satisfy ``<p^2>/(2 m_a) = kT/2``.
    """
    rng = make_rng(rng)
    x = rng.uniform(-0.5 * width, 0.5 * width, params.n_atoms)
    p = rng.normal(0.0, math.sqrt(ATOM_MASS * kT), params.n_atoms)
    return EnsembleState(time, x, p, np.zeros(n_modes, dtype=complex))


def ensemble_average(records: list[TrajectoryRecord]) -> TrajectoryRecord:
    """Pointwise mean over trajectories sharing one sample grid."""
    if not records:
        raise ValueError("no records to average")
    ref = records[0].times
    for r in records[1:]:
        if r.times.shape != ref.shape or not np.array_equal(r.times, ref):
            raise ValueError("records have mismatched sample grids")

    def mean(name):
        return np.mean([getattr(r, name) for r in records], axis=0)

    meta = dict(records[0].meta)
    meta["n_trajectories"] = len(records)
    return TrajectoryRecord(
        times=ref.copy(),
        theta=mean("theta"),
        theta_bar=mean("theta_bar"),
        photons=mean("photons"),
        ekin=mean("ekin"),
        meta=meta,
    )


def run_ensemble(params: SystemParams, ladder: ModeLadder, schedule: Schedule, master_seed: int,
                 n_trajectories: int, width: float, kT: float, *, threads: int = 1,
                 adiabatic: bool = False, keep_positions: bool = False,
                 first_index: int = 0) -> list[TrajectoryRecord]:
    """Independent thermal-start trajectories, one seed stream per index."""

    def one(i):
        ic_seed, noise_seed = trajectory_seeds(master_seed, i)
        init = thermal_cloud(params, ladder.n_modes, width, kT, ic_seed)
        rec = simulate(init, params, ladder, schedule, noise_seed, adiabatic=adiabatic,
                       keep_positions=keep_positions)
        rec.meta["trajectory"] = i
        return rec

    indices = range(first_index, first_index + n_trajectories)
    if threads <= 1:
        return [one(i) for i in indices]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, indices))


__all__ = [
    "EnsembleState", "TrajectoryRecord", "Schedule", "NonFiniteError", "deterministic_drift",
    "adiabatic_fields", "stochastic_step", "simulate", "ensemble_average", "run_ensemble",
    "thermal_cloud", "trajectory_seeds", "make_rng",
]
