"""Value-semantic complex fields on square sampling grids.

A field is a sampled scalar wavefunction ``f = A + iB`` on a uniform grid;
intensity is ``A^2 + B^2``. All containers here are immutable after
construction (arrays are copied and marked read-only), so they can be shared
freely across workers.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import GridMismatchError


@dataclass(frozen=True)
class GridSpec:
    """Square sampling grid: pixels per side, pixel pitch and wavelength."""

    side_px: int
    pitch_m: float
    wavelength_m: float

    def __post_init__(self):
        if not isinstance(self.side_px, (int, np.integer)) or self.side_px < 2:
            raise ValueError(f"side_px must be an integer >= 2, got {self.side_px!r}")
        if not self.pitch_m > 0:
            raise ValueError(f"pitch_m must be positive, got {self.pitch_m!r}")
        if not self.wavelength_m > 0:
            raise ValueError(f"wavelength_m must be positive, got {self.wavelength_m!r}")

    @property
    def aperture_m(self):
        """Physical side length of the grid."""
        return self.side_px * self.pitch_m

    @property
    def wavenumber(self):
        """Free-space wavenumber k = 2*pi/lambda."""
        return 2.0 * np.pi / self.wavelength_m


def _frozen_array(values, dtype, side):
    arr = np.array(values, dtype=dtype, order="C", copy=True)
    if arr.shape != (side, side):
        raise GridMismatchError(f"expected shape {(side, side)}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ComplexField2D:
    """A sampled complex scalar field together with its grid."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.values, np.complex128, self.grid.side_px)
        if not np.isfinite(arr.view(np.float64)).all():
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", arr)

    def energy(self):
        """Total power sum(|f|^2) over the grid."""
        v = self.values
        return float(np.sum(v.real**2 + v.imag**2))


@dataclass(frozen=True)
class IntensityMap:
    """A non-negative real intensity pattern together with its grid."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.values, np.float64, self.grid.side_px)
        if not np.isfinite(arr).all():
            raise ValueError("intensity values must be finite")
        if (arr < 0).any():
            raise ValueError("intensity values must be non-negative")
        object.__setattr__(self, "values", arr)


def field_from_amplitude(img, grid, sqrt_amplitude=False):
    """Encode a normalized image as a zero-phase field.

    Pixel value p maps to amplitude p (so an unmodulated pixel arrives at the
    detector with intensity p^2). With ``sqrt_amplitude=True`` the amplitude is
    sqrt(p) instead, making detector intensity equal to p.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.shape != (grid.side_px, grid.side_px):
        raise GridMismatchError(
            f"image shape {img.shape} does not match grid side {grid.side_px}"
        )
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    amp = np.sqrt(img) if sqrt_amplitude else img
    return ComplexField2D(grid, amp.astype(np.complex128))


def intensity(f):
    """Detector intensity I = Re(f)^2 + Im(f)^2."""
    return IntensityMap(f.grid, _kernels.intensity(f.values))


def add_fields(a, b):
    """Coherent (complex) sum of two fields on the same grid."""
    if a.grid != b.grid:
        raise GridMismatchError(f"grids differ: {a.grid} vs {b.grid}")
    return ComplexField2D(a.grid, a.values + b.values)


def add_intensities(parts):
    """Incoherent sum of intensity maps (e.g. per-channel detector patterns)."""
    parts = list(parts)
    if not parts:
        raise ValueError("add_intensities requires a non-empty list")
    grid = parts[0].grid
    total = parts[0].values.copy()
    for p in parts[1:]:
        if p.grid != grid:
            raise GridMismatchError(f"grids differ: {grid} vs {p.grid}")
        total += p.values
    return IntensityMap(grid, total)
