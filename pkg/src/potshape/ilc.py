"""Iterative learning of the virtual input from measured density errors.

The measured error is expressed on amplitude level, e = sqrt(rho) -
sqrt(rho_d), because the stationary density responds to the potential
through the local chemical-potential balance.  Linearising that balance
around the desired state gives a spatial gain alpha(z) and, after
replacing it with its maximum, a shift-invariant plant

    e(k) = G(k) dnu(k),   G(k) = -alpha_bar * F{g_z}(k),

whose regularised pseudo-inverse is the learning kernel

    L(k) = G*(k) / (gamma + |G(k)|^2).

Applying the kernel with a negative sign, nu <- clamp(nu - L * e, 0, 1),
contracts every spatial mode by 1 - |G|^2/(gamma + |G|^2) in the
linearised model; the regularisation keeps the filter bounded where the
optical response has no authority.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import scipy.fft

from .core import (
    RealField1D,
    SpatialGrid1D,
    Spectrum1D,
    convolve,
    require_same_grid,
    spectrum,
)
from .optics import PsfModel

__all__ = [
    "GainProfile",
    "LinearizedModel",
    "LearningKernel",
    "VirtualInput",
    "UpdateResult",
    "density_error",
    "gain_profile",
    "transfer_function",
    "linearized_model",
    "default_regularization",
    "design_kernel",
    "update",
]

KERNEL_TAIL_CUT = 1e-8


def density_error(rho_meas: RealField1D, rho_desired: RealField1D) -> RealField1D:
    """Amplitude-level error sqrt(rho_meas) - sqrt(rho_desired)."""
    require_same_grid(rho_meas, rho_desired)
    if np.any(rho_meas.values < 0) or np.any(rho_desired.values < 0):
        raise ValueError("densities must be non-negative")
    return RealField1D(
        grid=rho_meas.grid,
        values=np.sqrt(rho_meas.values) - np.sqrt(rho_desired.values),
    )


@dataclass(frozen=True)
class GainProfile:
    """Spatial linearisation gain and its maximum over the support."""

    alpha: RealField1D
    alpha_bar: float
    support: np.ndarray
    kappa: float
    eps_opt: float
    eps_mu: float

    def __post_init__(self):
        s = np.asarray(self.support, dtype=bool).copy()
        s.flags.writeable = False
        object.__setattr__(self, "support", s)


def gain_profile(
    v_desired: RealField1D,
    v_magnetic: RealField1D,
    mu_desired: float,
    params,
    e_perp_max: float,
    alpha_v: float = 1.0,
    eps_opt: float | None = None,
    eps_mu: float | None = None,
) -> GainProfile:
    """Gain alpha(z) = kappa E_max sqrt(alpha_v (V_d - V_mag)/(mu_d - V_d)).

    Evaluated only on the support S where the optical part of the desired
    potential exceeds eps_opt and the desired state is occupied by at
    least eps_mu; both square roots are singular at the respective edges.
    Defaults: eps_opt = 5% of max V_d, eps_mu = 5% of omega_perp.
    """
    require_same_grid(v_desired, v_magnetic)
    if e_perp_max <= 0 or alpha_v <= 0:
        raise ValueError("e_perp_max and alpha_v must be positive")
    if params.coupling <= 0:
        raise ValueError("linearisation gain needs interactions (a_s N > 0)")
    if eps_opt is None:
        eps_opt = 0.05 * float(np.max(v_desired.values))
    if eps_mu is None:
        eps_mu = 0.05 * params.omega_perp
    s_opt = v_desired.values - v_magnetic.values
    s_mu = mu_desired - v_desired.values
    mask = (s_opt > eps_opt) & (s_mu > eps_mu)
    if not np.any(mask):
        raise ValueError(
            "gain support is empty: nowhere is the desired potential both "
            "optically dominated and occupied"
        )
    kappa = 1.0 / np.sqrt(3.0 * params.omega_perp * params.coupling)
    alpha = np.zeros_like(s_opt)
    alpha[mask] = kappa * e_perp_max * np.sqrt(alpha_v * s_opt[mask] / s_mu[mask])
    alpha_bar = float(np.max(alpha[mask]))
    return GainProfile(
        alpha=RealField1D(grid=v_desired.grid, values=alpha),
        alpha_bar=alpha_bar,
        support=mask,
        kappa=float(kappa),
        eps_opt=float(eps_opt),
        eps_mu=float(eps_mu),
    )


def transfer_function(alpha_bar: float, psf: PsfModel, grid: SpatialGrid1D) -> Spectrum1D:
    """Plant spectrum G(k) = -alpha_bar * F{g_z}(k) on the grid's band.

    The sampled point-spread kernel is renormalised to unit discrete
    mass so that G(0) = -alpha_bar exactly.
    """
    if alpha_bar <= 0:
        raise ValueError("alpha_bar must be positive")
    gz = psf.gz(grid.samples)
    gz = gz / (gz.sum() * grid.dz)
    g = spectrum(RealField1D(grid=grid, values=gz))
    return Spectrum1D(grid=grid, wavenumbers=g.wavenumbers, values=-alpha_bar * g.values)


@dataclass(frozen=True)
class LinearizedModel:
    """Bundle of the scalar gain and the tabulated plant spectrum."""

    gain: GainProfile
    transfer: Spectrum1D

    @property
    def alpha_bar(self) -> float:
        return self.gain.alpha_bar


def linearized_model(gain: GainProfile, psf: PsfModel, grid: SpatialGrid1D) -> LinearizedModel:
    return LinearizedModel(gain=gain, transfer=transfer_function(gain.alpha_bar, psf, grid))


def default_regularization(g: Spectrum1D) -> float:
    """Customary regularisation: one percent of the peak plant power."""
    return 1e-2 * float(np.max(np.abs(g.values) ** 2))


@dataclass(frozen=True)
class LearningKernel:
    """Real-space learning filter with its design metadata."""

    kernel: RealField1D
    gamma: float
    transfer_sha256: str


def _spectrum_sha256(g: Spectrum1D) -> str:
    h = hashlib.sha256()
    h.update(np.asarray([g.grid.length, float(g.grid.n_points)]).tobytes())
    h.update(np.ascontiguousarray(g.values).tobytes())
    return h.hexdigest()


def design_kernel(
    g: Spectrum1D, gamma: float | None = None, tail_cut: float = KERNEL_TAIL_CUT
) -> LearningKernel:
    """Regularised pseudo-inverse filter L = F^-1{G*/(gamma + |G|^2)}.

    gamma of None selects the default of 1e-2 max|G|^2.  The kernel is
    sampled on integer lags q * dz with a literal z = 0 sample, so that
    convolving it with a field on the design grid reduces to an exact
    sliding sum whether or not that grid itself contains z = 0.  It is
    then truncated to the symmetric window outside which it falls below
    tail_cut of its peak, so convolutions pay only for the effective
    support.
    """
    if gamma is None:
        gamma = default_regularization(g)
    if gamma <= 0:
        raise ValueError("regularisation gamma must be positive")
    lhat = np.conj(g.values) / (gamma + np.abs(g.values) ** 2)
    gr = g.grid
    n, dz = gr.n_points, gr.dz
    z0 = gr.samples[0]
    # inverse transform evaluated at the integer-lag positions: shift the
    # usual sample positions z0 + j dz onto multiples of dz
    j0 = round(z0 / dz)
    vals = scipy.fft.ifft(lhat * np.exp(1j * g.wavenumbers * (j0 * dz))) / dz
    lags = (j0 + np.arange(n)) * dz
    peak = np.max(np.abs(vals))
    if peak > 0 and np.max(np.abs(vals.imag)) > 1e-9 * peak:
        raise ValueError("learning kernel has a non-negligible imaginary part")
    vals = vals.real
    mag = np.abs(vals)
    keep = mag >= tail_cut * mag.max()
    z_t = float(np.max(np.abs(lags[keep])))
    z_t = min(z_t, -float(lags[0]), float(lags[-1]))
    # a perfectly concentrated kernel (constant spectrum) would truncate to a
    # single tap; keep at least one neighbour on each side
    z_t = max(z_t, dz)
    sel = np.abs(lags) <= z_t * (1.0 + 1e-12) + 1e-12 * dz
    kernel = RealField1D(grid=SpatialGrid1D.from_samples(lags[sel]), values=vals[sel])
    return LearningKernel(kernel=kernel, gamma=float(gamma), transfer_sha256=_spectrum_sha256(g))


@dataclass(frozen=True)
class VirtualInput:
    """Per-column drive level, bounded to [0, 1] at all times."""

    field: RealField1D

    def __post_init__(self):
        v = self.field.values
        if np.any(v < 0.0) or np.any(v > 1.0):
            raise ValueError("virtual input must stay within [0, 1]")

    @property
    def values(self) -> np.ndarray:
        return self.field.values

    @property
    def grid(self) -> SpatialGrid1D:
        return self.field.grid


@dataclass(frozen=True)
class UpdateResult:
    nu: VirtualInput
    clamp_count: int
    correction: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.correction, dtype=float).copy()
        c.flags.writeable = False
        object.__setattr__(self, "correction", c)


def update(nu: VirtualInput, e_rho: RealField1D, kernel: LearningKernel) -> UpdateResult:
    """One learning step: nu <- clamp(nu - L * e, 0, 1).

    The kernel is convolved with the error on the error's (fine) grid,
    then sampled at the input's column positions; positions outside the
    error grid take the nearest edge value.  ``correction`` holds the
    signed values subtracted at the columns before clamping, and
    ``clamp_count`` how many columns saturated.
    """
    conv = convolve(e_rho, kernel.kernel)
    corr_cols = np.interp(nu.grid.samples, e_rho.grid.samples, conv.values)
    raw = nu.values - corr_cols
    clipped = np.clip(raw, 0.0, 1.0)
    clamp_count = int(np.count_nonzero((raw < 0.0) | (raw > 1.0)))
    return UpdateResult(
        nu=VirtualInput(field=RealField1D(grid=nu.grid, values=clipped)),
        clamp_count=clamp_count,
        correction=corr_cols,
    )
