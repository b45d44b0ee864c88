"""Finite-difference verification of analytic gradients.

The numeric side runs in a 64-bit shadow: the probed tensor is cast to
float64 before both the analytic backward pass and the central-difference
evaluations, which keeps the oracle trustworthy at h around 1e-3.
"""

import numpy as np

from .tensor import Tensor, backward, no_grad


def finite_difference(fn, x, h=1e-3):
    """Central-difference gradient of scalar-valued ``fn`` at ``x``.

    ``fn`` must be deterministic (fix any mask draws before calling).
    """
    base = x.data.astype(np.float64)
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn(Tensor(base)).item()
            flat[i] = orig - h
            fm = fn(Tensor(base)).item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def grad_check(fn, x, h=1e-3):
    """Max over coordinates of |analytic - numeric| / max(1, |numeric|)."""
    x64 = Tensor(x.data.astype(np.float64), requires_grad=True)
    loss = fn(x64)
    backward(loss)
    analytic = x64.grad if x64.grad is not None else np.zeros_like(x64.data)
    numeric = finite_difference(fn, x64, h)
    denom = np.maximum(1.0, np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))
