# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; see ``_kernels_py`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def adam_update(double[::1] p_in not None, double[::1] g not None, double[::1] m not None,
                double[::1] v not None, double lr, double beta1, double beta2, double eps,
                double bc1, double bc2):
    cdef Py_ssize_t i, n = p_in.shape[0]
    cdef double gi, step = lr / bc1, inv_bc2 = 1.0 / bc2
    cdef double c1 = 1.0 - beta1, c2 = 1.0 - beta2
    with nogil:
        for i in range(n):
            gi = g[i]
            m[i] = beta1 * m[i] + c1 * gi
            v[i] = beta2 * v[i] + c2 * gi * gi
            p_in[i] -= step * m[i] / (sqrt(v[i] * inv_bc2) + eps)


cdef inline void _kahan(double* acc, double* comp, Py_ssize_t k, double x) noexcept nogil:
    cdef double y = x - comp[k]
    cdef double t = acc[k] + y
    comp[k] = (t - acc[k]) - y
    acc[k] = t


def fg_moments(int mode, cnp.int64_t[::1] widths not None, double[::1] wflat not None,
               double[::1] yflat not None, double[::1] sflat not None, double[::1] e not None,
               double[:, ::1] noise not None, bint perturb_output, double[::1] shift not None,
               double[::1] s1 not None, double[::1] c1 not None,
               double[::1] s2 not None, double[::1] c2 not None):
    cdef Py_ssize_t L = widths.shape[0] - 1
    cdef Py_ssize_t n_draws = noise.shape[0]
    cdef Py_ssize_t maxw = 0, l, i, j, k, r, c, wo, yo, so, off, go
    for l in range(L + 1):
        if widths[l] > maxw:
            maxw = widths[l]
    cdef double[::1] dprev = np.zeros(maxw)
    cdef double[::1] dcur = np.zeros(maxw)
    cdef double acc, dd, val, diff
    with nogil:
        for k in range(n_draws):
            for i in range(widths[0]):
                dprev[i] = 0.0
            wo = 0
            yo = 0
            so = 0
            off = 0
            for l in range(1, L + 1):
                r = widths[l]
                c = widths[l - 1]
                for i in range(r):
                    acc = 0.0
                    for j in range(c):
                        acc = acc + wflat[wo + i * c + j] * dprev[j]
                    if mode == 0:
                        if l < L or perturb_output:
                            for j in range(c):
                                acc = acc + noise[k, off + i * c + j] * yflat[yo + j]
                        dcur[i] = acc * sflat[so + i]
                    else:
                        dcur[i] = acc * sflat[so + i]
                        if l < L:
                            dcur[i] = dcur[i] + noise[k, off + i]
                if mode == 0:
                    if l < L or perturb_output:
                        off = off + r * c
                elif l < L:
                    off = off + r
                for i in range(r):
                    dprev[i] = dcur[i]
                wo = wo + r * c
                yo = yo + c
                so = so + r
            dd = 0.0
            for i in range(widths[L]):
                dd = dd + e[i] * dprev[i]
            # gradient entries, shifted and accumulated
            go = 0
            off = 0
            yo = 0
            so = 0
            for l in range(1, L + 1):
                r = widths[l]
                c = widths[l - 1]
                if mode == 0:
                    if l < L or perturb_output:
                        for i in range(r * c):
                            diff = dd * noise[k, off + i] - shift[go + i]
                            _kahan(&s1[0], &c1[0], go + i, diff)
                            _kahan(&s2[0], &c2[0], go + i, diff * diff)
                        off = off + r * c
                    else:
                        for i in range(r * c):
                            diff = -shift[go + i]
                            _kahan(&s1[0], &c1[0], go + i, diff)
                            _kahan(&s2[0], &c2[0], go + i, diff * diff)
                else:
                    for i in range(r):
                        if l < L:
                            val = dd * noise[k, off + i] * sflat[so + i]
                        else:
                            val = e[i]
                        for j in range(c):
                            diff = val * yflat[yo + j] - shift[go + i * c + j]
                            _kahan(&s1[0], &c1[0], go + i * c + j, diff)
                            _kahan(&s2[0], &c2[0], go + i * c + j, diff * diff)
                    if l < L:
                        off = off + r
                go = go + r * c
                yo = yo + c
                so = so + r
