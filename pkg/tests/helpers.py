"""Shared test utilities: central finite-difference gradient oracle."""

import numpy as np

from mmrlab.autodiff import Tensor


def numerical_gradient(fn, arrays, eps=1e-5):
    """Central finite differences of a scalar fn over a list of numpy arrays.

    fn receives the arrays (it must read their current values) and returns
    a float. Returns one gradient array per input array.
    """
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = fn()
            flat[i] = orig - eps
            f_minus = fn()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * eps)
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric, floor=None):
    """Worst-case elementwise relative error between two gradient arrays.

    Elements far below the array's gradient scale have no meaningful relative
    error (central differences bottom out at roundoff), so the denominator is
    floored at 1e-4 of the largest gradient magnitude.
    """
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    if floor is None:
        scale = max(np.abs(analytic).max(initial=0.0),
                    np.abs(numeric).max(initial=0.0))
        floor = max(1e-6, 1e-4 * scale)
    denom = np.maximum(floor, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(loss_fn, params, eps=1e-5, tol=1e-4):
    """Compare autodiff gradients of loss_fn against central differences.

    loss_fn() must rebuild the graph from the params' current .data and
    return a scalar Tensor. params is a list of Tensors with
    requires_grad=True. Returns the worst relative error seen.
    """
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    numeric = numerical_gradient(lambda: float(loss_fn().data), [p.data for p in params], eps=eps)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        worst = max(worst, max_rel_error(a, n))
    assert worst <= tol, f"gradient mismatch: worst rel err {worst:.3e} > {tol}"
    return worst


def tensor(data, requires_grad=False):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=requires_grad)
