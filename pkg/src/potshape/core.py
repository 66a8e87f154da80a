"""Grids, field containers, quadrature and spectral transforms.

Every module in the package shares one unit system: lengths in
micrometres (um), times in milliseconds (ms), and energies expressed as
angular frequencies in rad/ms (the reduced Planck constant is 1).  A
potential of 2*pi*1 rad/ms therefore corresponds to h * 1 kHz.

Spatial spectra follow the convention

    F(k) = int f(z) exp(-i k z) dz
    f(z) = (1 / (2 pi)) int F(k) exp(+i k z) dk

so the discrete transform is an FFT scaled by the sample spacing, with a
phase factor accounting for the position of the leftmost sample.
Convolutions are zero padded (not periodic) and carry the same dz
scaling, which makes them discrete approximations of the continuous
integral (f * g)(z) = int f(xi) g(z - xi) dxi.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft

__all__ = [
    "UNIT_SYSTEM",
    "SpatialGrid1D",
    "RealField1D",
    "ComplexField1D",
    "Spectrum1D",
    "same_grid",
    "integrate",
    "spectrum",
    "inverse_spectrum",
    "real_part",
    "convolve",
]

#: Unit conventions shared by all modules.
UNIT_SYSTEM = {
    "length": "um",
    "time": "ms",
    "energy": "rad/ms (angular frequency, hbar = 1)",
    "density": "1/um (integrates to 1)",
}

# Edge magnitude (relative to peak) above which a convolution kernel is
# considered insufficiently decayed for zero-padded convolution.
KERNEL_EDGE_TOL = 1e-8


@dataclass(frozen=True)
class SpatialGrid1D:
    """Uniform grid of n_points samples spanning [-length/2, +length/2].

    Both endpoints are included, so the spacing is length/(n_points - 1)
    and the samples are symmetric about z = 0 (for even n_points the
    origin itself falls between two samples).
    """

    length: float
    n_points: int
    samples: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not np.isfinite(self.length) or self.length <= 0:
            raise ValueError("grid length must be positive and finite")
        if self.n_points < 2:
            raise ValueError("grid needs at least two samples")
        z = np.linspace(-0.5 * self.length, 0.5 * self.length, self.n_points)
        z.flags.writeable = False
        object.__setattr__(self, "samples", z)

    @property
    def dz(self) -> float:
        return self.length / (self.n_points - 1)

    @property
    def wavenumbers(self) -> np.ndarray:
        """Angular wavenumbers of the discrete transform, FFT ordering."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.dz)

    @classmethod
    def from_samples(cls, samples) -> "SpatialGrid1D":
        """Build a grid from an explicit sample array, validating uniformity."""
        z = np.asarray(samples, dtype=float)
        if z.ndim != 1 or z.size < 2:
            raise ValueError("need a 1d array of at least two samples")
        steps = np.diff(z)
        dz = steps.mean()
        if dz <= 0 or np.any(np.abs(steps - dz) > 1e-12 * abs(dz) * len(z)):
            raise ValueError("samples are not uniformly spaced")
        length = z[-1] - z[0]
        if abs(z[0] + z[-1]) > 1e-9 * length:
            raise ValueError("samples must be symmetric about z = 0")
        return cls(length=float(length), n_points=len(z))


def same_grid(a: SpatialGrid1D, b: SpatialGrid1D) -> bool:
    """True when two grids have identical sampling (within float tolerance)."""
    return a.n_points == b.n_points and abs(a.length - b.length) <= 1e-12 * max(
        a.length, b.length
    )


def require_same_grid(*fields):
    """Raise unless all fields are sampled on the same grid."""
    first = fields[0].grid
    for f in fields[1:]:
        if not same_grid(first, f.grid):
            raise ValueError(
                f"fields live on different grids: {first.n_points} points over "
                f"{first.length:g} um vs {f.grid.n_points} over {f.grid.length:g} um"
            )


def _validated(values, n, dtype) -> np.ndarray:
    v = np.asarray(values, dtype=dtype)
    if v.shape != (n,):
        raise ValueError(f"expected shape ({n},), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("field values must be finite")
    v = v.copy()
    v.flags.writeable = False
    return v


@dataclass(frozen=True)
class RealField1D:
    """Real-valued samples on a SpatialGrid1D.

    ``flags`` carries warning markers attached by operations (for example
    a convolution whose kernel has not decayed at the domain edges).
    """

    grid: SpatialGrid1D
    values: np.ndarray
    flags: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(
            self, "values", _validated(self.values, self.grid.n_points, float)
        )


@dataclass(frozen=True)
class ComplexField1D:
    """Complex-valued samples on a SpatialGrid1D (fields, wavefunctions)."""

    grid: SpatialGrid1D
    values: np.ndarray
    flags: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(
            self, "values", _validated(self.values, self.grid.n_points, complex)
        )


@dataclass(frozen=True)
class Spectrum1D:
    """Samples of a spatial spectrum F(k) on the wavenumber grid of ``grid``.

    Wavenumbers are stored in FFT ordering (0, positive, negative).
    """

    grid: SpatialGrid1D
    wavenumbers: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.wavenumbers, dtype=float)
        v = _validated(self.values, self.grid.n_points, complex)
        if k.shape != v.shape:
            raise ValueError("wavenumber and value arrays must match")
        k = k.copy()
        k.flags.writeable = False
        object.__setattr__(self, "wavenumbers", k)
        object.__setattr__(self, "values", v)


def integrate(f: RealField1D | ComplexField1D) -> float | complex:
    """Trapezoidal integral of a sampled field over its domain."""
    if not np.all(np.isfinite(f.values)):
        raise ValueError("cannot integrate non-finite values")
    out = np.trapezoid(f.values, dx=f.grid.dz)
    return complex(out) if np.iscomplexobj(f.values) else float(out)


def spectrum(f: RealField1D | ComplexField1D) -> Spectrum1D:
    """Forward transform F(k) = int f(z) exp(-i k z) dz on the FFT k grid."""
    g = f.grid
    k = g.wavenumbers
    vals = g.dz * np.exp(-1j * k * g.samples[0]) * scipy.fft.fft(f.values)
    return Spectrum1D(grid=g, wavenumbers=k, values=vals)


def inverse_spectrum(s: Spectrum1D) -> ComplexField1D:
    """Inverse of :func:`spectrum`; exact round trip on the same grid."""
    g = s.grid
    vals = scipy.fft.ifft(s.values * np.exp(1j * s.wavenumbers * g.samples[0]))
    return ComplexField1D(grid=g, values=vals / g.dz)


def real_part(f: ComplexField1D, tol: float = 1e-9) -> RealField1D:
    """Drop an imaginary part that is negligible relative to the peak.

    Raises if the imaginary part exceeds ``tol`` times the peak magnitude,
    which would indicate a phase or symmetry error upstream.
    """
    scale = np.max(np.abs(f.values))
    imag = np.max(np.abs(f.values.imag))
    if scale > 0 and imag > tol * scale:
        raise ValueError(f"imaginary part {imag:.3e} exceeds {tol:.1e} of peak")
    return RealField1D(grid=f.grid, values=f.values.real, flags=f.flags)


def convolve(f: RealField1D, kernel: RealField1D) -> RealField1D:
    """Continuous-convention convolution (f * kernel)(z) on the grid of f.

    The kernel may live on the same grid as f, or on a compact grid with
    the same spacing, odd length and centre sample at z = 0 (the shape
    produced by tail truncation).  Either way the result equals the
    direct quadrature

        out_i = dz * sum_j kernel(z_i - z_j) f_j

    with the field zero outside its grid.  The same-grid case runs zero
    padded in the spectral domain with the phase bookkeeping of
    :func:`spectrum`; the compact case is a direct sliding sum.  A kernel
    that has not decayed below ``KERNEL_EDGE_TOL`` of its peak at its
    outermost samples taints the result with a ``"kernel_edge"`` flag.
    """
    g = f.grid
    kg = kernel.grid
    kv = kernel.values
    peak = np.max(np.abs(kv))
    flags = set()
    if peak > 0 and max(abs(kv[0]), abs(kv[-1])) > KERNEL_EDGE_TOL * peak:
        flags.add("kernel_edge")
    if same_grid(g, kg):
        n = g.n_points
        n_pad = scipy.fft.next_fast_len(2 * n)
        k_pad = 2.0 * np.pi * np.fft.fftfreq(n_pad, d=g.dz)
        prod = scipy.fft.fft(f.values, n=n_pad) * scipy.fft.fft(kv, n=n_pad)
        out = scipy.fft.ifft(prod * np.exp(-1j * k_pad * g.samples[0]))[:n]
        return RealField1D(grid=g, values=out.real * g.dz, flags=frozenset(flags))
    if abs(kg.dz - g.dz) > 1e-12 * g.dz:
        raise ValueError("kernel grid spacing differs from field spacing")
    mid = kg.n_points // 2
    if kg.n_points % 2 == 0 or abs(kg.samples[mid]) > 1e-9 * g.dz:
        raise ValueError("compact kernel must have odd length and a sample at z = 0")
    out = g.dz * np.convolve(f.values, kv, mode="same")
    return RealField1D(grid=g, values=out, flags=frozenset(flags))
