"""Independent central-finite-difference gradient oracle for the test suite.

Kept free of any autodiff internals: it perturbs raw numpy buffers and
re-runs a scalar-valued closure, so it can check the tape without sharing
code with it.
"""

import numpy as np


def numerical_gradient(f, arrays, h=1e-5):
    """Central differences of the scalar ``f()`` w.r.t. each array in ``arrays``.

    ``f`` must recompute from the current contents of the arrays (the test
    builds its tensors around these same buffers).
    """
    grads = []
    for arr in arrays:
        grad = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = f()
            flat[i] = orig - h
            f_minus = f()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * h)
        grads.append(grad)
    return grads


def relative_error(analytic, numeric):
    """Max elementwise |a - n| / max(1, |a|, |n|)."""
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0
