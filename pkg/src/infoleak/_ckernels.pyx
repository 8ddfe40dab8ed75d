# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. ``_pykernels`` holds the reference twins."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()


cdef extern from *:
    int __builtin_ctzll(unsigned long long) nogil


def subset_sup(const double[::1] p, const double[::1] q, double gamma):
    """Return ``(value, mask)`` maximizing P(A) - gamma*Q(A) over subsets.

    Gray-code walk: each step toggles one symbol, so the running sum is
    updated in O(1). The reported value is re-summed from the winning
    mask to drop the accumulated rounding of the walk.
    """
    cdef Py_ssize_t n = p.shape[0]
    cdef unsigned long long total = (<unsigned long long>1) << n
    cdef unsigned long long k, gray, prev = 0, diff, best_mask = 0
    cdef int bit
    cdef double cur = 0.0, best = 0.0, w
    with nogil:
        for k in range(1, total):
            gray = k ^ (k >> 1)
            diff = gray ^ prev
            bit = __builtin_ctzll(diff)
            w = p[bit] - gamma * q[bit]
            if gray & diff:
                cur += w
            else:
                cur -= w
            if cur > best:
                best = cur
                best_mask = gray
            prev = gray
    best = 0.0
    for bit in range(n):
        if (best_mask >> bit) & 1:
            best += p[bit] - gamma * q[bit]
    return best, int(best_mask)


def gauss_log_mean(const double[:, ::1] points, const double[:, ::1] centers,
                   const double[::1] bandwidth):
    """log of the mean product-Gaussian kernel density at each point.

    Single pass per point with a running log-sum-exp.
    """
    cdef Py_ssize_t n = points.shape[0], m = centers.shape[0]
    cdef Py_ssize_t dim = points.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double z, acc, run_max, total, norm = 0.0
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] res = out
    cdef double[::1] inv_h = np.empty(dim, dtype=np.float64)
    for k in range(dim):
        inv_h[k] = 1.0 / bandwidth[k]
        norm += log(bandwidth[k]) + 0.5 * log(2.0 * 3.141592653589793)
    with nogil:
        for i in range(n):
            run_max = -1e308
            total = 0.0
            for j in range(m):
                acc = 0.0
                for k in range(dim):
                    z = (points[i, k] - centers[j, k]) * inv_h[k]
                    acc -= 0.5 * z * z
                if acc > run_max:
                    total = total * exp(run_max - acc) + 1.0
                    run_max = acc
                else:
                    total += exp(acc - run_max)
            res[i] = run_max + log(total) - log(<double>m) - norm
    return out
