# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled elementwise loss kernels and the two-sample sup-distance.

Mirrors ``_kernels_py`` exactly; see that module for the formulas.
"""
from libc.math cimport fabs, sqrt

cdef inline double _sign(double x) nogil:
    if x > 0.0:
        return 1.0
    if x < 0.0:
        return -1.0
    return 0.0


def square_eval(const double[::1] x, double[::1] rho, double[::1] psi,
                double[::1] psi1, double[::1] psi2):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double v
    with nogil:
        for i in range(n):
            v = x[i]
            rho[i] = 0.5 * v * v
            psi[i] = v
            psi1[i] = 1.0
            psi2[i] = 0.0


def smoothed_huber_eval(const double[::1] x, double k, double delta, double eps,
                        double[::1] rho, double[::1] psi, double[::1] psi1,
                        double[::1] psi2):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double a0 = k - delta
    cdef double a1 = k + delta
    cdef double L = 2.0 * delta
    cdef double c1 = 0.5 * a0 * a0 + L * (a0 + 0.35 * L)
    cdef double v, a, s, t, t2, rb, pb, w, dw
    with nogil:
        for i in range(n):
            v = x[i]
            a = fabs(v)
            s = _sign(v)
            if a <= a0:
                rb = 0.5 * a * a
                pb = a
                w = 1.0
                dw = 0.0
            elif a >= a1:
                rb = c1 + k * (a - a1)
                pb = k
                w = 0.0
                dw = 0.0
            else:
                t = (a - a0) / L
                t2 = t * t
                rb = 0.5 * a0 * a0 + L * (a0 * t + L * (0.5 * t2 - 0.25 * t2 * t2 + 0.1 * t2 * t2 * t))
                pb = a0 + L * (t - t2 * t + 0.5 * t2 * t2)
                w = 1.0 - 3.0 * t2 + 2.0 * t2 * t
                dw = -6.0 * t * (1.0 - t) / L
            rho[i] = rb + 0.5 * eps * v * v
            psi[i] = s * pb + eps * v
            psi1[i] = w + eps
            psi2[i] = s * dw


def pseudo_l1_eval(const double[::1] x, double delta, double eps,
                   double[::1] rho, double[::1] psi, double[::1] psi1,
                   double[::1] psi2):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double v, u, q, q2
    with nogil:
        for i in range(n):
            v = x[i]
            u = v / delta
            q2 = 1.0 + u * u
            q = sqrt(q2)
            rho[i] = delta * (u * u / (q + 1.0)) + 0.5 * eps * v * v
            psi[i] = u / q + eps * v
            psi1[i] = 1.0 / (delta * q2 * q) + eps
            psi2[i] = -3.0 * u / (delta * delta * q2 * q2 * q)


def sup_distance_sorted(const double[::1] a, const double[::1] b):
    """sup_x |F_a(x) - F_b(x)| for two ascending samples."""
    cdef Py_ssize_t m = a.shape[0], n = b.shape[0]
    cdef Py_ssize_t i = 0, j = 0
    cdef double v, d, best = 0.0
    with nogil:
        while i < m and j < n:
            v = a[i] if a[i] <= b[j] else b[j]
            while i < m and a[i] <= v:
                i += 1
            while j < n and b[j] <= v:
                j += 1
            d = fabs(<double>i / m - <double>j / n)
            if d > best:
                best = d
    return best
