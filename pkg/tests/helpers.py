"""Shared test oracles: central finite differences and simplex utilities."""
from __future__ import annotations

import numpy as np

from rpalab.tensor import Tensor


def finite_diff_grad(fn, tensors: list[Tensor], h: float = 1e-5) -> list[np.ndarray]:
    """Central-difference gradient of scalar fn() w.r.t. each tensor's data."""
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = fn()
            flat[i] = orig - h
            f_minus = fn()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * h)
        grads.append(g)
    return grads


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Worst elementwise relative error with an absolute floor."""
    denom = np.maximum(np.abs(a) + np.abs(b), 1e-4)
    return float(np.max(np.abs(a - b) / denom))


def check_grads(fn, tensors: list[Tensor], rtol: float = 1e-3, h: float = 1e-5) -> float:
    """Compare tape gradients of fn() against central differences."""
    for t in tensors:
        t.grad = None
    loss = fn(as_tensor=True)
    loss.backward()
    ad = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    fd = finite_diff_grad(lambda: fn(as_tensor=False), tensors, h=h)
    worst = max(rel_err(a, f) for a, f in zip(ad, fd))
    assert worst < rtol, f"gradient mismatch: worst rel err {worst:.3e} >= {rtol}"
    return worst
