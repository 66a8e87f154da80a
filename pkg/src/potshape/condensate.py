"""Stationary states of a quasi-1d condensate in the dimensional crossover.

The effective 1d interaction is non-polynomial in the line density,

    h(rho) = omega_perp * ((1 + 3 b rho) / sqrt(1 + 2 b rho) - 1),  b = a_s N,

which reduces to 2 omega_perp b rho for b rho << 1 and grows like
sqrt(rho) once the transversal cloud swells.  The ground state of the
corresponding nonlinear eigenvalue problem is found by imaginary-time
split-step propagation with per-step renormalisation; the Thomas-Fermi
routine drops the kinetic term and inverts h pointwise by bisection.

Units: lengths in um, times in ms, energies in rad/ms (hbar = 1), and
the wave function is normalised to int |phi|^2 dz = 1 so rho is a
probability density in 1/um (atom number enters only through b).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.fft

from .core import ComplexField1D, RealField1D, integrate, require_same_grid

__all__ = [
    "CondensateParams",
    "SolverConfig",
    "MeasurementConfig",
    "GroundState",
    "ConvergenceError",
    "nonlinearity",
    "interaction_energy_density",
    "interaction_parameter",
    "chemical_potential",
    "total_energy",
    "ground_state",
    "thomas_fermi_density",
    "measure_density",
]

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """An iterative solve failed to produce a usable result."""


@dataclass(frozen=True)
class CondensateParams:
    """Physical constants of the condensate.

    mass in ms/um^2, scattering_length in um, omega_perp in rad/ms.
    scattering_length = 0 gives the linear (non-interacting) limit.
    """

    mass: float = 1.368
    scattering_length: float = 5.2e-3
    atom_number: float = 5000.0
    omega_perp: float = 2.0 * np.pi * 1.4

    def __post_init__(self):
        if self.mass <= 0 or self.omega_perp <= 0:
            raise ValueError("mass and omega_perp must be positive")
        if self.scattering_length < 0 or self.atom_number < 0:
            raise ValueError("scattering_length and atom_number must be >= 0")

    @property
    def coupling(self) -> float:
        """b = a_s N, the interaction length scale in um."""
        return self.scattering_length * self.atom_number


@dataclass(frozen=True)
class SolverConfig:
    """Imaginary-time solver settings.

    ``tol`` is on the relative chemical-potential change per step.
    ``record_history`` additionally stores per-step mu, energy and norm
    (used by the invariant checks; costs one extra transform per step).
    """

    dtau: float = 1e-3
    max_steps: int = 200_000
    tol: float = 1e-10
    record_history: bool = False

    def __post_init__(self):
        if self.dtau <= 0 or self.tol <= 0 or self.max_steps < 1:
            raise ValueError("dtau, tol and max_steps must be positive")


@dataclass(frozen=True)
class MeasurementConfig:
    """Additive Gaussian density noise; std in 1/um, 0 means ideal."""

    noise_std: float = 0.0
    seed: int | None = None
    clamp_negative: bool = True

    def __post_init__(self):
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


@dataclass(frozen=True)
class GroundState:
    phi: ComplexField1D
    mu: float
    n_steps: int
    converged: bool
    mu_history: np.ndarray | None = None
    energy_history: np.ndarray | None = None
    norm_history: np.ndarray | None = None

    @property
    def density(self) -> RealField1D:
        return RealField1D(grid=self.phi.grid, values=np.abs(self.phi.values) ** 2)


def nonlinearity(rho, params: CondensateParams):
    """Interaction term h(rho) in rad/ms; vacuum limit h(0) = 0."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise ValueError("density must be non-negative")
    x = params.coupling * rho
    return params.omega_perp * ((1.0 + 3.0 * x) / np.sqrt(1.0 + 2.0 * x) - 1.0)


def interaction_energy_density(rho, params: CondensateParams):
    """Antiderivative W(rho) of h, the interaction energy per length.

    W(rho) = omega_perp * (rho * sqrt(1 + 2 b rho) - rho), dW/drho = h.
    """
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise ValueError("density must be non-negative")
    x = params.coupling * rho
    return params.omega_perp * rho * (np.sqrt(1.0 + 2.0 * x) - 1.0)


def interaction_parameter(rho: RealField1D, params: CondensateParams) -> float:
    """Peak of 2 b rho, the crossover parameter of the 1d reduction.

    Values below 1 mean the transversal cloud stays close to its ground
    mode everywhere; the caller decides what to do with larger values.
    """
    return float(2.0 * params.coupling * np.max(rho.values))


def _spectral_second_derivative(values: np.ndarray, grid) -> np.ndarray:
    k2 = grid.wavenumbers**2
    return scipy.fft.ifft(-k2 * scipy.fft.fft(values))


def chemical_potential(phi: ComplexField1D, potential: RealField1D, params) -> float:
    """mu = <phi| T + V + h(|phi|^2) |phi> for a normalised phi."""
    require_same_grid(phi, potential)
    v = phi.values
    rho = np.abs(v) ** 2
    d2 = _spectral_second_derivative(v, phi.grid)
    integrand = np.conj(v) * (
        -d2 / (2.0 * params.mass) + (potential.values + nonlinearity(rho, params)) * v
    )
    return float(np.real(np.trapezoid(integrand, dx=phi.grid.dz)))


def total_energy(phi: ComplexField1D, potential: RealField1D, params) -> float:
    """Energy functional whose stationary point is the ground state."""
    require_same_grid(phi, potential)
    grid = phi.grid
    v = phi.values
    rho = np.abs(v) ** 2
    dphi = scipy.fft.ifft(1j * grid.wavenumbers * scipy.fft.fft(v))
    dens = (
        np.abs(dphi) ** 2 / (2.0 * params.mass)
        + potential.values * rho
        + interaction_energy_density(rho, params)
    )
    return float(np.trapezoid(dens, dx=grid.dz))


def _initial_guess(potential: RealField1D, params: CondensateParams) -> np.ndarray:
    if params.coupling > 0:
        try:
            rho_tf, _ = thomas_fermi_density(potential, params)
            if np.max(rho_tf.values) > 0:
                return np.sqrt(rho_tf.values) + 1e-6
        except ConvergenceError:
            pass
    z = potential.grid.samples
    return np.exp(-(z**2) / (2.0 * 10.0**2))


def _healing_resolution_check(grid, potential, params, mu):
    gap = max(float(np.max(mu - potential.values)), params.omega_perp)
    dz_max = 0.5 / np.sqrt(2.0 * params.mass * gap)
    if grid.dz > dz_max:
        log.warning(
            "grid spacing %.4g um exceeds the healing-length resolution "
            "limit %.4g um; ground state may be under-resolved",
            grid.dz,
            dz_max,
        )


def ground_state(
    potential: RealField1D,
    params: CondensateParams,
    cfg: SolverConfig,
    initial: ComplexField1D | None = None,
) -> GroundState:
    """Imaginary-time Strang split-step relaxation to the ground state.

    Each step applies half a kinetic step in wavenumber space, a full
    potential-plus-interaction step in position space, the second kinetic
    half step, and renormalises.  Convergence is declared when the
    relative change of mu over one step drops below cfg.tol.  ``initial``
    warm-starts the relaxation (any normalisation); otherwise the
    Thomas-Fermi profile is used where available, falling back to a
    10 um Gaussian.
    """
    grid = potential.grid
    if not np.all(np.isfinite(potential.values)):
        raise ValueError("potential must be finite")
    if initial is not None:
        require_same_grid(initial, potential)
        phi = initial.values.astype(complex)
    else:
        phi = _initial_guess(potential, params).astype(complex)
    nrm = np.trapezoid(np.abs(phi) ** 2, dx=grid.dz)
    if not nrm > 0:
        raise ValueError("initial state has zero norm")
    phi = phi / np.sqrt(nrm)

    half_kin = np.exp(-grid.wavenumbers**2 * cfg.dtau / (4.0 * params.mass))
    vvals = potential.values
    mu = chemical_potential(ComplexField1D(grid=grid, values=phi), potential, params)
    mus, energies, norms = [], [], []
    converged = False
    steps = 0
    last_change = np.nan
    for steps in range(1, cfg.max_steps + 1):
        phi = scipy.fft.ifft(half_kin * scipy.fft.fft(phi))
        rho = np.abs(phi) ** 2
        phi = phi * np.exp(-cfg.dtau * (vvals + nonlinearity(rho, params)))
        phi = scipy.fft.ifft(half_kin * scipy.fft.fft(phi))
        nrm = np.trapezoid(np.abs(phi) ** 2, dx=grid.dz)
        if not np.isfinite(nrm) or nrm <= 0:
            raise ConvergenceError(
                f"wave function became non-finite after {steps} imaginary-time steps"
            )
        phi = phi / np.sqrt(nrm)
        field = ComplexField1D(grid=grid, values=phi)
        mu_new = chemical_potential(field, potential, params)
        if cfg.record_history:
            mus.append(mu_new)
            energies.append(total_energy(field, potential, params))
            norms.append(float(np.trapezoid(np.abs(phi) ** 2, dx=grid.dz)))
        if not np.isfinite(mu_new):
            raise ConvergenceError("chemical potential became non-finite")
        last_change = abs(mu_new - mu) / max(abs(mu_new), 1e-30)
        mu = mu_new
        if last_change < cfg.tol:
            converged = True
            break
    # gauge the global phase away; the ground state is real up to rounding
    peak = np.argmax(np.abs(phi))
    phase = phi[peak] / np.abs(phi[peak])
    phi = phi / phase
    gs = GroundState(
        phi=ComplexField1D(grid=grid, values=phi),
        mu=mu,
        n_steps=steps,
        converged=converged,
        mu_history=np.array(mus) if cfg.record_history else None,
        energy_history=np.array(energies) if cfg.record_history else None,
        norm_history=np.array(norms) if cfg.record_history else None,
    )
    _healing_resolution_check(grid, potential, params, mu)
    if params.coupling > 0:
        log.info(
            "crossover parameter max 2 b rho = %.3f", interaction_parameter(gs.density, params)
        )
    if not converged:
        log.warning(
            "imaginary-time relaxation not converged after %d steps "
            "(last relative mu change %.3g)",
            steps,
            last_change,
        )
    return gs


def _invert_nonlinearity(target: np.ndarray, params: CondensateParams, tol: float) -> np.ndarray:
    """Solve h(rho) = target elementwise for rho >= 0 (target >= 0)."""
    hi = np.ones_like(target)
    for _ in range(200):
        short = nonlinearity(hi, params) < target
        if not np.any(short):
            break
        hi[short] *= 2.0
    else:
        raise ConvergenceError("upper bound search for the density inversion failed")
    lo = np.zeros_like(target)
    # bisection halves the bracket each pass; run until below tol everywhere
    n_iter = int(np.ceil(np.log2(max(float(np.max(hi)), 1.0) / tol))) + 2
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        too_low = nonlinearity(mid, params) < target
        lo = np.where(too_low, mid, lo)
        hi = np.where(too_low, hi, mid)
    return 0.5 * (lo + hi)


def thomas_fermi_density(
    potential: RealField1D,
    params: CondensateParams,
    norm_tol: float = 1e-10,
    rho_tol: float = 1e-12,
):
    """Density with the kinetic term dropped: h(rho) = mu - V where positive.

    Returns (rho, mu) with mu adjusted by bisection until the density
    integrates to 1 within norm_tol.
    """
    if params.coupling <= 0:
        raise ConvergenceError(
            "Thomas-Fermi inversion needs interactions (a_s N > 0)"
        )
    v = potential.values
    if not np.all(np.isfinite(v)):
        raise ValueError("potential must be finite")
    grid = potential.grid

    def density_for(mu):
        target = np.clip(mu - v, 0.0, None)
        rho = np.zeros_like(v)
        occ = target > 0
        if np.any(occ):
            rho[occ] = _invert_nonlinearity(target[occ], params, rho_tol)
        return rho

    def norm_for(mu):
        return np.trapezoid(density_for(mu), dx=grid.dz)

    mu_lo = float(np.min(v))
    span = max(float(np.max(v) - np.min(v)), params.omega_perp)
    mu_hi = mu_lo + span
    for _ in range(200):
        if norm_for(mu_hi) >= 1.0:
            break
        mu_hi = mu_lo + 2.0 * (mu_hi - mu_lo)
    else:
        raise ConvergenceError("could not bracket the chemical potential")
    for _ in range(200):
        mu_mid = 0.5 * (mu_lo + mu_hi)
        n_mid = norm_for(mu_mid)
        if abs(n_mid - 1.0) <= norm_tol:
            mu_lo = mu_hi = mu_mid
            break
        if n_mid < 1.0:
            mu_lo = mu_mid
        else:
            mu_hi = mu_mid
    mu = 0.5 * (mu_lo + mu_hi)
    rho = density_for(mu)
    n = np.trapezoid(rho, dx=grid.dz)
    if abs(n - 1.0) > 1e3 * norm_tol:
        raise ConvergenceError(
            f"chemical-potential bisection stalled at int rho dz = {n!r}"
        )
    return RealField1D(grid=grid, values=rho), float(mu)


def measure_density(
    rho: RealField1D, cfg: MeasurementConfig, rng: np.random.Generator | None = None
) -> RealField1D:
    """Simulated destructive density measurement.

    With noise_std = 0 the input is returned unchanged.  Otherwise
    additive Gaussian noise is drawn from ``rng`` (or a generator seeded
    from cfg.seed) and negative values are clamped if configured.
    """
    if np.any(rho.values < 0):
        raise ValueError("density must be non-negative")
    if cfg.noise_std == 0.0:
        return rho
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    noisy = rho.values + rng.normal(0.0, cfg.noise_std, size=rho.values.shape)
    if cfg.clamp_negative:
        noisy = np.clip(noisy, 0.0, None)
    return RealField1D(grid=rho.grid, values=noisy)
