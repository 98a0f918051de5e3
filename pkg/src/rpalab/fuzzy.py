"""Gaussian regime memberships over token states, with entropy diagnostics.

Each token gets a graded membership vector mu_t on the R-simplex from squared
distances to learned centers, sharpened/flattened by per-regime scales. The
membership entropy and the saturation fraction are the two health signals the
controllers consume.
"""
from __future__ import annotations

import math

import numpy as np

from .module import Linear, ParamModule, param
from .tensor import Tensor, contract


class GaussianFuzzy(ParamModule):
    """Membership head: project, measure distance to centers, row-softmax.

    Logits are clamped to [-30, 30] before the softmax and any NaN rows are
    replaced by the uniform 1/R vector.
    """

    def __init__(self, rng, d_model: int, n_regimes: int):
        if n_regimes < 1:
            raise ValueError("need at least one regime")
        self.R = n_regimes
        self.proj = Linear(rng.child("proj"), d_model, d_model)
        self.centers = param(rng.child("centers").normal((n_regimes, d_model))
                             / math.sqrt(d_model))
        self.log_sigma = param(np.zeros(n_regimes))

    def __call__(self, h: Tensor) -> Tensor:
        z = self.proj(h)                                        # [B,T,D]
        # ||z - c||^2 expanded so everything stays rank <= 4
        z2 = (z * z).sum(axis=-1, keepdims=True)                # [B,T,1]
        c2 = (self.centers * self.centers).sum(axis=-1)         # [R]
        cross = contract(z, self.centers, "btd,rd->btr")
        dist2 = z2 + c2 - 2.0 * cross                           # [B,T,R]
        inv2sig2 = (self.log_sigma * -2.0).exp().clamp(1e-3, 1e3)
        logits = (dist2 * inv2sig2 * -0.5).clamp(-30.0, 30.0)
        mu = logits.softmax_last()
        return mu.nan_to_num(nan=1.0 / self.R)


def membership_entropy(mu: Tensor) -> Tensor:
    """Mean over positions of -sum_r mu log mu, entries clamped >= 1e-8."""
    plogp = mu * mu.clamp_min(1e-8).log()
    return -plogp.sum(axis=-1).mean()


def saturation_fraction(mu: Tensor | np.ndarray, threshold: float = 0.9) -> float:
    """Share of positions whose max membership reaches the threshold."""
    m = mu.data if isinstance(mu, Tensor) else np.asarray(mu)
    R = m.shape[-1]
    if not (1.0 / R < threshold <= 1.0):
        raise ValueError(f"threshold must lie in (1/R, 1], got {threshold}")
    return float((m.max(axis=-1) >= threshold).mean())
