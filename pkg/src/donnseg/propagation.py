"""Free-space Fresnel diffraction over a distance z.

The production path multiplies the field spectrum by the closed-form Fresnel
transfer function

    H(nu_x, nu_y) = exp(i k z) * exp(-i pi lambda z (nu_x^2 + nu_y^2)),

which has unit modulus at every frequency sample (energy conserving). A second
construction builds the transfer function as the DFT of the sampled impulse
response

    h(x, y, z) = exp(i k z) / (i lambda z) * exp(i k / (2 z) * (x^2 + y^2)),

which makes FFT propagation bit-compatible with direct discrete convolution;
``propagate_direct`` performs that O(N^4) summation and serves as the
verification oracle for the FFT path.
"""

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import GridMismatchError
from .field import ComplexField2D, GridSpec


class CriticalSamplingWarning(UserWarning):
    """The requested distance violates the sampling bound of the chosen kernel."""


@dataclass(frozen=True)
class PropagationKernel:
    """Precomputed spectral transfer function for one (grid, z, pad) triple."""

    grid: GridSpec
    distance_m: float
    pad_factor: int
    transfer: np.ndarray
    analytic: bool = True

    def __post_init__(self):
        n = self.pad_factor * self.grid.side_px
        arr = np.asarray(self.transfer, dtype=np.complex128)
        if arr.shape != (n, n):
            raise GridMismatchError(
                f"transfer function shape {arr.shape} does not match padded side {n}"
            )
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "transfer", arr)

    @property
    def padded_side(self):
        return self.pad_factor * self.grid.side_px


def critical_distance(grid):
    """Largest z for which the analytic transfer function is alias-free.

    Equal to side_px * pitch^2 / lambda; beyond it the quadratic spectral
    phase changes by more than pi between adjacent frequency samples.
    """
    return grid.side_px * grid.pitch_m**2 / grid.wavelength_m


def _check_distance(z):
    if not z > 0:
        raise ValueError(f"propagation distance must be positive, got {z!r}")


def _check_pad(pad_factor):
    if pad_factor not in (1, 2):
        raise ValueError(f"pad_factor must be 1 or 2, got {pad_factor!r}")


def make_fresnel_kernel(grid, z, pad_factor=2):
    """Analytic Fresnel transfer function sampled on the padded FFT grid."""
    _check_distance(z)
    _check_pad(pad_factor)
    zc = critical_distance(grid)
    if z > zc:
        warnings.warn(
            f"z={z:g} m exceeds the critical sampling distance {zc:g} m for a "
            f"{grid.side_px}px grid; the analytic transfer function aliases",
            CriticalSamplingWarning,
            stacklevel=2,
        )
    n = pad_factor * grid.side_px
    nu = np.fft.fftfreq(n, d=grid.pitch_m)
    nx, ny = np.meshgrid(nu, nu, indexing="ij")
    phase = grid.wavenumber * z - np.pi * grid.wavelength_m * z * (nx**2 + ny**2)
    return PropagationKernel(grid, z, pad_factor, np.exp(1j * phase), analytic=True)


def _impulse_values(xx, yy, z, grid):
    # Sampled Fresnel impulse response, scaled by pitch^2 so that a discrete
    # sum over source samples approximates the diffraction integral.
    k = grid.wavenumber
    lam = grid.wavelength_m
    prefactor = np.exp(1j * k * z) / (1j * lam * z) * grid.pitch_m**2
    return prefactor * np.exp(1j * k / (2.0 * z) * (xx**2 + yy**2))


def make_sampled_kernel(grid, z, pad_factor=2):
    """Transfer function built as the DFT of the sampled impulse response.

    With pad_factor=2 the resulting FFT propagation reproduces direct linear
    convolution with the sampled kernel exactly (the padded grid is wide
    enough that circular wrap never engages). Unlike the analytic kernel it
    is not unit-modulus.
    """
    _check_distance(z)
    _check_pad(pad_factor)
    zc = critical_distance(grid)
    if z < zc:
        warnings.warn(
            f"z={z:g} m is below the critical sampling distance {zc:g} m for a "
            f"{grid.side_px}px grid; the sampled impulse response aliases",
            CriticalSamplingWarning,
            stacklevel=2,
        )
    n = pad_factor * grid.side_px
    idx = np.arange(n)
    offsets = ((idx + n // 2) % n - n // 2) * grid.pitch_m
    xx, yy = np.meshgrid(offsets, offsets, indexing="ij")
    transfer = np.fft.fft2(_impulse_values(xx, yy, z, grid))
    return PropagationKernel(grid, z, pad_factor, transfer, analytic=False)


@lru_cache(maxsize=64)
def fresnel_kernel_cached(grid, z, pad_factor=2):
    """Memoized analytic kernel; models reuse one kernel per distinct gap."""
    return make_fresnel_kernel(grid, z, pad_factor)


def _propagate_raw(values, kernel, adjoint=False):
    """FFT propagation on a raw complex array (the model/grad hot path).

    With ``adjoint=True`` the conjugated transfer function is used, which is
    the exact reverse-mode adjoint of the forward call (pad and crop swap
    roles but share the same centered geometry).
    """
    transfer = np.conj(kernel.transfer) if adjoint else kernel.transfer
    if kernel.pad_factor == 1:
        return np.fft.ifft2(np.fft.fft2(values) * transfer)
    s = kernel.grid.side_px
    n = kernel.padded_side
    o = (n - s) // 2
    padded = np.zeros((n, n), dtype=np.complex128)
    padded[o : o + s, o : o + s] = values
    out = np.fft.ifft2(np.fft.fft2(padded) * transfer)
    return out[o : o + s, o : o + s].copy()


def propagate(f, kernel):
    """Diffract a field over the kernel's distance (spectral method).

    Pads with zeros to the kernel's padded grid, multiplies the spectrum by
    the transfer function, and crops the centered window back out. With
    pad_factor=1 this is exactly circular convolution; with pad_factor=2 it
    realizes aperiodic free-space diffraction.
    """
    if f.grid != kernel.grid:
        raise GridMismatchError(f"field grid {f.grid} does not match kernel grid {kernel.grid}")
    return ComplexField2D(f.grid, _propagate_raw(f.values, kernel))


def propagate_padded(f, kernel):
    """Like ``propagate`` but returns the full padded-grid array (no crop).

    Useful for energy audits: with an analytic kernel the padded-grid power
    is conserved exactly, while cropping can only lose light.
    """
    if f.grid != kernel.grid:
        raise GridMismatchError(f"field grid {f.grid} does not match kernel grid {kernel.grid}")
    if kernel.pad_factor == 1:
        return np.fft.ifft2(np.fft.fft2(f.values) * kernel.transfer)
    s = kernel.grid.side_px
    n = kernel.padded_side
    o = (n - s) // 2
    padded = np.zeros((n, n), dtype=np.complex128)
    padded[o : o + s, o : o + s] = f.values
    return np.fft.ifft2(np.fft.fft2(padded) * kernel.transfer)


def sampled_impulse_response(grid, z):
    """The Fresnel impulse response sampled on centered grid coordinates.

    Coordinates are x_i = (i - side/2) * pitch; values carry the pitch^2
    quadrature factor, so discrete convolution with this field approximates
    the continuous diffraction integral.
    """
    _check_distance(z)
    coords = (np.arange(grid.side_px) - grid.side_px / 2.0) * grid.pitch_m
    xx, yy = np.meshgrid(coords, coords, indexing="ij")
    return ComplexField2D(grid, _impulse_values(xx, yy, z, grid))


def propagate_direct(f, z):
    """Direct O(N^4) discrete diffraction sum; verification oracle.

    Computes out(x, y) = sum_{x0, y0} f(x0, y0) * h(x - x0, y - y0, z) with
    exact linear-convolution semantics (no wraparound). Guarded to small
    grids because of its cost.
    """
    _check_distance(z)
    s = f.grid.side_px
    if s > 64:
        raise ValueError(f"propagate_direct is limited to grids <= 64 px, got {s}")
    offsets = np.arange(-(s - 1), s) * f.grid.pitch_m
    xx, yy = np.meshgrid(offsets, offsets, indexing="ij")
    table = _impulse_values(xx, yy, z, f.grid)
    values = f.values
    out = np.empty((s, s), dtype=np.complex128)
    for i in range(s):
        for j in range(s):
            out[i, j] = np.sum(values * table[i : i + s, j : j + s][::-1, ::-1])
    return ComplexField2D(f.grid, out)
