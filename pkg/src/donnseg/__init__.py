"""donnseg: differentiable wave-optics engine for diffractive optical networks.

Simulates stacks of trainable phase masks separated by free-space Fresnel
diffraction, with three independent color channels summed incoherently at the
detector, and trains them for binary image segmentation.
"""

from ._kernels import backend as kernel_backend
from .field import (
    ComplexField2D,
    GridSpec,
    IntensityMap,
    add_fields,
    add_intensities,
    field_from_amplitude,
    intensity,
)
from .propagation import (
    CriticalSamplingWarning,
    PropagationKernel,
    critical_distance,
    make_fresnel_kernel,
    make_sampled_kernel,
    propagate,
    propagate_direct,
    sampled_impulse_response,
)

__version__ = "0.1.0"
