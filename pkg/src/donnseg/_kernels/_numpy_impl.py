"""Pure-numpy implementations of the elementwise hot kernels.

These are the reference semantics for the compiled extension in ``_cyops.pyx``;
both expose the same functions and the backend is picked once at import time
(see ``donnseg._kernels``).
"""

import numpy as np


def phase_modulate(field, theta):
    """Apply a phase-only mask: ``field * exp(i*theta)``."""
    return field * np.exp(1j * theta)


def phase_modulate_backward(modulated, theta, cot):
    """Reverse-mode step through ``out = f * exp(i*theta)``.

    Parameters
    ----------
    modulated : complex ndarray
        The forward output ``f * exp(i*theta)``.
    theta : real ndarray
        Mask phases.
    cot : complex ndarray
        Cotangent of the forward output (d loss / d Re + i * d loss / d Im).

    Returns
    -------
    cot_prev : complex ndarray
        Cotangent of the pre-mask field ``f``: ``conj(exp(i*theta)) * cot``.
    g_theta : real ndarray
        Phase gradient ``Im(conj(modulated) * cot)``.
    """
    w = np.exp(1j * theta)
    cot_prev = np.conj(w) * cot
    g_theta = np.imag(np.conj(modulated) * cot)
    return cot_prev, g_theta


def intensity(field):
    """Detector intensity ``Re(f)^2 + Im(f)^2``."""
    return field.real**2 + field.imag**2


def intensity_accumulate(acc, field):
    """In-place ``acc += Re(f)^2 + Im(f)^2``."""
    acc += field.real**2 + field.imag**2


def adam_update(theta, m, v, grad, lr, beta1, beta2, eps, step):
    """One in-place adaptive-moment update of ``theta`` (bias-corrected)."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1**step)
    vhat = v / (1.0 - beta2**step)
    theta -= lr * mhat / (np.sqrt(vhat) + eps)
