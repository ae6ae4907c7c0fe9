"""Elementwise hot kernels with backend selection at import time.

The compiled Cython extension is used when it was built; otherwise the
pure-numpy fallback takes over with identical semantics. Set the environment
variable ``DONNSEG_PURE_PYTHON=1`` to force the fallback (used by the parity
tests and the kernel benchmark).
"""

import os

from . import _numpy_impl

if os.environ.get("DONNSEG_PURE_PYTHON"):
    _impl = _numpy_impl
    BACKEND = "numpy"
else:
    try:
        from . import _cyops as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _numpy_impl
        BACKEND = "numpy"

phase_modulate = _impl.phase_modulate
phase_modulate_backward = _impl.phase_modulate_backward
intensity = _impl.intensity
intensity_accumulate = _impl.intensity_accumulate
adam_update = _impl.adam_update


def backend():
    """Name of the active kernel backend: ``"cython"`` or ``"numpy"``."""
    return BACKEND
