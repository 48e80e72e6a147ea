"""Shared test oracles: finite differences and gradient comparison."""

import numpy as np


def central_difference(f, tensors, h=1e-5):
    """Numeric gradient of scalar-valued f() w.r.t. each tensor's data.

    f rebuilds its graph from the tensors' current .data on every call,
    so this stays independent of the reverse-mode path it checks.
    """
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            f_plus = f()
            flat[i] = saved - h
            f_minus = f()
            flat[i] = saved
            gf[i] = (f_plus - f_minus) / (2.0 * h)
        grads.append(g)
    return grads


def assert_grads_close(analytic, numeric, rtol=1e-4, atol=1e-8):
    np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol)
