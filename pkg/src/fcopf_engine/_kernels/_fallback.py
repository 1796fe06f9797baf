"""Pure numpy versions of the compiled kernels (same signatures)."""
import numpy as np


def quad_residual(x, rows, ii, jj, coef, out):
    out += np.bincount(rows, weights=coef * x[ii] * x[jj], minlength=out.size)


def quad_jacobian(x, ii, jj, coef, slot_i, slot_j, out):
    out += np.bincount(slot_i, weights=coef * x[jj], minlength=out.size)
    out += np.bincount(slot_j, weights=coef * x[ii], minlength=out.size)


def quad_hessian(w, rows, coef, slot_ij, slot_ji, out):
    v = w[rows] * coef
    out += np.bincount(slot_ij, weights=v, minlength=out.size)
    out += np.bincount(slot_ji, weights=v, minlength=out.size)
