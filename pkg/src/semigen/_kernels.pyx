# cython: language_level=3
"""Compiled inner loops for the pairwise likelihood terms and mode assignment.

Every function here has a numpy twin in ``_kernels_py`` with the same
signature; ``semigen.kernels`` picks one at import.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()


def gaussian_lme(const double[:, ::1] x, const double[:, ::1] theta, double inv_two_var):
    """Mean over rows of x of logsumexp_j(-|x_i - theta_j|^2 * inv_two_var).

    Returns ``(value, grad_theta)`` where grad_theta is d value / d theta.
    """
    cdef Py_ssize_t n = x.shape[0], m = theta.shape[0], d = x.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc, diff, amax, s, total = 0.0, w, scale
    a_arr = np.empty(m, dtype=np.float64)
    grad_arr = np.zeros((m, d), dtype=np.float64)
    cdef double[::1] a = a_arr
    cdef double[:, ::1] grad = grad_arr

    for i in range(n):
        amax = -1e308
        for j in range(m):
            acc = 0.0
            for k in range(d):
                diff = x[i, k] - theta[j, k]
                acc += diff * diff
            a[j] = -acc * inv_two_var
            if a[j] > amax:
                amax = a[j]
        s = 0.0
        for j in range(m):
            a[j] = exp(a[j] - amax)
            s += a[j]
        total += amax + log(s)
        scale = 2.0 * inv_two_var / (s * n)
        for j in range(m):
            w = a[j] * scale
            for k in range(d):
                grad[j, k] += w * (x[i, k] - theta[j, k])
    return total / n, grad_arr


def poisson_lme(const double[::1] x, const double[::1] theta):
    """Mean over x of logsumexp_j(x_i log theta_j - theta_j) and its theta gradient."""
    cdef Py_ssize_t n = x.shape[0], m = theta.shape[0]
    cdef Py_ssize_t i, j
    cdef double amax, s, total = 0.0, w
    logt_arr = np.empty(m, dtype=np.float64)
    a_arr = np.empty(m, dtype=np.float64)
    grad_arr = np.zeros(m, dtype=np.float64)
    cdef double[::1] logt = logt_arr
    cdef double[::1] a = a_arr
    cdef double[::1] grad = grad_arr

    for j in range(m):
        logt[j] = log(theta[j])
    for i in range(n):
        amax = -1e308
        for j in range(m):
            a[j] = x[i] * logt[j] - theta[j]
            if a[j] > amax:
                amax = a[j]
        s = 0.0
        for j in range(m):
            a[j] = exp(a[j] - amax)
            s += a[j]
        total += amax + log(s)
        for j in range(m):
            w = a[j] / (s * n)
            grad[j] += w * (x[i] / theta[j] - 1.0)
    return total / n, grad_arr


def nearest_center(const double[:, ::1] samples, const double[:, ::1] centers):
    """Index of, and squared distance to, the nearest center (lowest index on ties)."""
    cdef Py_ssize_t s_count = samples.shape[0], kc = centers.shape[0], d = samples.shape[1]
    cdef Py_ssize_t i, j, k, best
    cdef double acc, diff, best_d
    labels_arr = np.empty(s_count, dtype=np.int64)
    dist_arr = np.empty(s_count, dtype=np.float64)
    cdef cnp.int64_t[::1] labels = labels_arr
    cdef double[::1] dist = dist_arr

    for i in range(s_count):
        best = 0
        best_d = 1e308
        for j in range(kc):
            acc = 0.0
            for k in range(d):
                diff = samples[i, k] - centers[j, k]
                acc += diff * diff
            if acc < best_d:
                best_d = acc
                best = j
        labels[i] = best
        dist[i] = best_d
    return labels_arr, dist_arr
