# cython: boundscheck=False, wraparound=False, cdivision=True
"""Fused elementwise hot kernels (compiled backend).

Same surface as ``_numpy_impl``; each function runs a single pass over the
arrays instead of materializing numpy temporaries.
"""

import numpy as np

from libc.math cimport cos, sin, sqrt, pow


def phase_modulate(field, theta):
    """Apply a phase-only mask: ``field * exp(i*theta)``."""
    cdef const double complex[:, ::1] f = field
    cdef const double[:, ::1] th = theta
    out_arr = np.empty((f.shape[0], f.shape[1]), dtype=np.complex128)
    cdef double complex[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double c, s, fr, fi
    with nogil:
        for i in range(f.shape[0]):
            for j in range(f.shape[1]):
                c = cos(th[i, j])
                s = sin(th[i, j])
                fr = f[i, j].real
                fi = f[i, j].imag
                out[i, j].real = fr * c - fi * s
                out[i, j].imag = fr * s + fi * c
    return out_arr


def phase_modulate_backward(modulated, theta, cot):
    """Reverse-mode step through ``out = f * exp(i*theta)``.

    Returns ``(cot_prev, g_theta)`` with ``cot_prev = conj(exp(i*theta))*cot``
    and ``g_theta = Im(conj(modulated) * cot)``.
    """
    cdef const double complex[:, ::1] mod = modulated
    cdef const double[:, ::1] th = theta
    cdef const double complex[:, ::1] ct = cot
    prev_arr = np.empty((th.shape[0], th.shape[1]), dtype=np.complex128)
    gth_arr = np.empty((th.shape[0], th.shape[1]), dtype=np.float64)
    cdef double complex[:, ::1] prev = prev_arr
    cdef double[:, ::1] gth = gth_arr
    cdef Py_ssize_t i, j
    cdef double c, s, a, b
    with nogil:
        for i in range(th.shape[0]):
            for j in range(th.shape[1]):
                c = cos(th[i, j])
                s = sin(th[i, j])
                a = ct[i, j].real
                b = ct[i, j].imag
                prev[i, j].real = c * a + s * b
                prev[i, j].imag = c * b - s * a
                gth[i, j] = mod[i, j].real * b - mod[i, j].imag * a
    return prev_arr, gth_arr


def intensity(field):
    """Detector intensity ``Re(f)^2 + Im(f)^2``."""
    cdef const double complex[:, ::1] f = field
    out_arr = np.empty((f.shape[0], f.shape[1]), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(f.shape[0]):
            for j in range(f.shape[1]):
                out[i, j] = f[i, j].real * f[i, j].real + f[i, j].imag * f[i, j].imag
    return out_arr


def intensity_accumulate(acc, field):
    """In-place ``acc += Re(f)^2 + Im(f)^2``."""
    cdef double[:, ::1] a = acc
    cdef const double complex[:, ::1] f = field
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(a.shape[0]):
            for j in range(a.shape[1]):
                a[i, j] += f[i, j].real * f[i, j].real + f[i, j].imag * f[i, j].imag


def adam_update(theta, m, v, grad, double lr, double beta1, double beta2,
                double eps, long step):
    """One in-place adaptive-moment update of ``theta`` (bias-corrected)."""
    cdef double[:, ::1] th = theta
    cdef double[:, ::1] mm = m
    cdef double[:, ::1] vv = v
    cdef const double[:, ::1] g = grad
    cdef double bc1 = 1.0 - pow(beta1, <double> step)
    cdef double bc2 = 1.0 - pow(beta2, <double> step)
    cdef Py_ssize_t i, j
    cdef double mhat, vhat
    with nogil:
        for i in range(th.shape[0]):
            for j in range(th.shape[1]):
                mm[i, j] = beta1 * mm[i, j] + (1.0 - beta1) * g[i, j]
                vv[i, j] = beta2 * vv[i, j] + (1.0 - beta2) * g[i, j] * g[i, j]
                mhat = mm[i, j] / bc1
                vhat = vv[i, j] / bc2
                th[i, j] -= lr * mhat / (sqrt(vhat) + eps)
