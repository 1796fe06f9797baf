# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled gather-multiply-scatter loops for quadratic constraint systems."""

cimport cython


def quad_residual(const double[::1] x, const Py_ssize_t[::1] rows, const Py_ssize_t[::1] ii,
                  const Py_ssize_t[::1] jj, const double[::1] coef, double[::1] out):
    """out[rows[t]] += coef[t] * x[ii[t]] * x[jj[t]]"""
    cdef Py_ssize_t t, n = coef.shape[0]
    with nogil:
        for t in range(n):
            out[rows[t]] += coef[t] * x[ii[t]] * x[jj[t]]


def quad_jacobian(const double[::1] x, const Py_ssize_t[::1] ii, const Py_ssize_t[::1] jj,
                  const double[::1] coef, const Py_ssize_t[::1] slot_i, const Py_ssize_t[::1] slot_j,
                  double[::1] out):
    """out[slot_i[t]] += coef[t] * x[jj[t]];  out[slot_j[t]] += coef[t] * x[ii[t]]"""
    cdef Py_ssize_t t, n = coef.shape[0]
    with nogil:
        for t in range(n):
            out[slot_i[t]] += coef[t] * x[jj[t]]
            out[slot_j[t]] += coef[t] * x[ii[t]]


def quad_hessian(const double[::1] w, const Py_ssize_t[::1] rows, const double[::1] coef,
                 const Py_ssize_t[::1] slot_ij, const Py_ssize_t[::1] slot_ji, double[::1] out):
    """out[slot_ij[t]] += w[rows[t]] * coef[t];  same for slot_ji"""
    cdef Py_ssize_t t, n = coef.shape[0]
    cdef double v
    with nogil:
        for t in range(n):
            v = w[rows[t]] * coef[t]
            out[slot_ij[t]] += v
            out[slot_ji[t]] += v
