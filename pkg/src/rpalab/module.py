"""Tiny parameter-container base: attribute scan, no registration boilerplate.

A ``Param`` is just a Tensor with requires_grad=True. ``named_params`` walks
attributes (and lists of submodules) depth-first with slash-joined names, which
also fixes the checkpoint key layout.
"""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


def param(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


class ParamModule:
    def named_params(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                out[key] = value
            elif isinstance(value, ParamModule):
                out.update(value.named_params(f"{key}/"))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, ParamModule):
                        out.update(item.named_params(f"{key}.{i}/"))
        return out

    def zero_grad(self) -> None:
        for p in self.named_params().values():
            p.grad = None

    def load_state(self, state: dict[str, np.ndarray], prefix: str = "") -> None:
        params = self.named_params(prefix)
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state missing parameters: {sorted(missing)[:4]} ...")
        for name, tensor in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != tensor.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {tensor.data.shape}")
            tensor.data = arr.copy()

    def state(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_params(prefix).items()}


def linear_init(rng, n_in: int, n_out: int) -> np.ndarray:
    """Uniform(-1/sqrt(n_in), 1/sqrt(n_in)) weight of shape [n_in, n_out]."""
    bound = 1.0 / np.sqrt(n_in)
    return rng.uniform((n_in, n_out), -bound, bound)


class Linear(ParamModule):
    def __init__(self, rng, n_in: int, n_out: int, bias: bool = True,
                 w_scale: float | None = None):
        if w_scale is None:
            self.w = param(linear_init(rng, n_in, n_out))
        else:
            self.w = param(rng.normal((n_in, n_out), scale=w_scale))
        self.b = param(np.zeros(n_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.w
        if self.b is not None:
            out = out + self.b
        return out


class LayerNorm(ParamModule):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = param(np.ones(dim))
        self.bias = param(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered / (var + self.eps).sqrt() * self.gain + self.bias
