"""Length-aware attention prior from regime-position alignment.

Pipeline: raised-cosine soft blocks over positions -> regime/block co-occurrence
scores -> Sinkhorn balancing -> per-position reconstruction -> global z-score,
temperature division, clip, warm-in scale. Also houses the legacy
similarity+distance bias, the KL-regularized-MAP softmax identity, and the
doubly-stochastic row-sum identity used by the verification suites.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, contract


@dataclass
class RpaConfig:
    n_blocks: int = 0           # 0 means "use R"
    tau_align: float = 0.70
    sinkhorn_iters: int = 6
    posmix: float = 0.10
    detach_scores: bool = True
    warm_steps: int = 1200
    clip: float = 4.0
    tau_max: float = 1.6

    def __post_init__(self):
        if self.tau_align <= 0:
            raise ValueError("tau_align must be positive")
        if self.sinkhorn_iters < 1:
            raise ValueError("need at least one sinkhorn iteration")


@dataclass
class PositionalBasis:
    phi: np.ndarray          # [T,K], rows ~ 1 after the +1e-6 guard
    centers: np.ndarray      # [K]
    half_width: float


@dataclass
class AlignmentPlan:
    scores: Tensor           # [R,K] co-occurrence
    plan: Tensor             # [R,K] after Sinkhorn balancing


@dataclass
class PriorBias:
    bias: Tensor             # [T,T], clipped, warm-scaled
    warm_scale: float
    clip: float
    tau_used: float


def soft_blocks(T: int, K: int) -> PositionalBasis:
    """Raised-cosine blocks tiling positions 0..T-1 with ~unit row sums."""
    if T < 1 or K < 1:
        raise ValueError(f"need T >= 1 and K >= 1, got T={T}, K={K}")
    t = np.arange(T, dtype=np.float64)
    c = np.linspace(0.0, T - 1.0, K)
    w = max(1.0, (T / max(1, K)) * 1.5)
    dist = np.abs(t[:, None] - c[None, :]) / w
    phi = 0.5 * (1.0 + np.cos(np.clip(dist, 0.0, 1.0) * math.pi))
    phi = phi * (dist <= 1.0)
    phi = phi / (phi.sum(axis=1, keepdims=True) + 1e-6)
    return PositionalBasis(phi=phi, centers=c, half_width=w)


def sinkhorn(x: Tensor | np.ndarray, iters: int) -> Tensor:
    """Alternating row-then-column normalization toward doubly-stochastic form.

    The final operation is a column normalization, so column sums land within
    the 1e-9 guard of 1; row sums converge with iteration count.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    for _ in range(iters):
        x = x / (x.sum(axis=1, keepdims=True) + 1e-9)
        x = x / (x.sum(axis=0, keepdims=True) + 1e-9)
    return x


def sinkhorn_marginals(x: np.ndarray, row_marginals: np.ndarray,
                       col_marginals: np.ndarray, tol: float = 1e-13,
                       max_iters: int = 100_000) -> np.ndarray:
    """Scale a positive matrix to prescribed row/column marginals."""
    a = np.array(x, dtype=np.float64)
    r = np.asarray(row_marginals, dtype=np.float64)
    c = np.asarray(col_marginals, dtype=np.float64)
    if a.ndim != 2 or a.shape != (r.size, c.size):
        raise ValueError("marginal sizes must match matrix shape")
    if np.any(a <= 0):
        raise ValueError("matrix must be strictly positive")
    for _ in range(max_iters):
        a *= (r / a.sum(axis=1))[:, None]
        a *= (c / a.sum(axis=0))[None, :]
        if np.abs(a.sum(axis=1) - r).max() < tol:
            break
    return a


def align_scores(mu: Tensor, phi: np.ndarray, tau_align: float,
                 iters: int, detach: bool = True) -> AlignmentPlan:
    """Regime/block co-occurrence and its Sinkhorn balancing.

    scores[r,k] = batch mean of sum_t mu[b,t,r] * phi[t,k]. Detaching the
    scores keeps the balancing out of the gradient path (the default).
    """
    if tau_align <= 0:
        raise ValueError("tau_align must be positive")
    B = mu.shape[0]
    s = contract(mu, Tensor(phi), "btr,tk->rk") * (1.0 / B)
    if detach:
        s = s.detach()
    x = (s * (1.0 / tau_align)).exp().clamp(1e-9, 1e9)
    return AlignmentPlan(scores=s, plan=sinkhorn(x, iters))


def positional_distance(T: int) -> np.ndarray:
    i = np.arange(T, dtype=np.float64)
    return np.abs(i[:, None] - i[None, :]) / max(1.0, T - 1.0)


def znorm(x: Tensor) -> Tensor:
    """Global z-score with the 1e-6 std guard (sample std, n-1)."""
    n = x.size
    mu = x.mean()
    centered = x - mu
    if n > 1:
        std = ((centered * centered).sum() * (1.0 / (n - 1))).sqrt()
    else:
        std = Tensor(0.0)
    return centered / (std + 1e-6)


def warm_in_scale(step: int, warm_steps: int) -> float:
    return min(1.0, step / max(1, warm_steps))


def _finish_bias(curve: Tensor, tau_att: Tensor, clip: float, tau_max: float,
                 warm_scale: float) -> PriorBias:
    curve = curve.nan_to_num(nan=0.0, posinf=clip, neginf=-clip)
    tau = tau_att.clamp(0.6, tau_max)
    bias = (curve / tau).clamp(-clip, clip)
    scale = min(1.0, max(0.0, warm_scale))
    return PriorBias(bias=bias * scale, warm_scale=scale, clip=clip,
                     tau_used=float(tau.data))


def rpa_bias(mu: Tensor, cfg: RpaConfig, tau_att: Tensor, pos_beta: Tensor,
             warm_scale: float) -> PriorBias:
    """Aligned prior over [T,T]: reconstruct co-assignment, z-score, clip."""
    B, T, R = mu.shape
    if T < 1:
        raise ValueError("need at least one position")
    K = cfg.n_blocks if cfg.n_blocks > 0 else R
    basis = soft_blocks(T, K)
    plan = align_scores(mu, basis.phi, cfg.tau_align, cfg.sinkhorn_iters,
                        cfg.detach_scores)
    m = contract(mu, plan.plan, "btr,rk->btk")                 # [B,T,K]
    raw = contract(m, Tensor(basis.phi), "bsk,tk->bst").mean(axis=0)
    if cfg.posmix > 0.0:
        pos = -pos_beta.clamp_min(0.0) * Tensor(positional_distance(T))
        raw = raw * (1.0 - cfg.posmix) + pos * cfg.posmix
    return _finish_bias(znorm(raw), tau_att, cfg.clip, cfg.tau_max, warm_scale)


def legacy_bias(mu: Tensor, pos_beta: Tensor, kappa: Tensor, tau_att: Tensor,
                clip: float = 4.0, tau_max: float = 1.6,
                warm_scale: float = 1.0) -> PriorBias:
    """Pre-alignment bias: z-scored membership similarity blended with the
    negative-distance curve through a sigmoid mixing weight."""
    T = mu.shape[1]
    fuzz = contract(mu, mu, "btr,bsr->bts").mean(axis=0)       # [T,T]
    fuzz = znorm(fuzz)
    pos = -pos_beta.clamp_min(0.0) * Tensor(positional_distance(T))
    gate = kappa.sigmoid()
    curve = gate * fuzz + (1.0 - gate) * pos
    return _finish_bias(curve, tau_att, clip, tau_max, warm_scale)


def kl_map_attention(z: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """softmax(z + log pi): the maximizer of a.z - KL(a || pi) on the simplex."""
    z = np.asarray(z, dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    if np.any(pi <= 0):
        raise ValueError("prior must be strictly positive")
    logits = z + np.log(pi)
    logits = logits - logits.max()
    e = np.exp(logits)
    return e / e.sum()


def row_sum_check(a: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Row sums of A @ A.T for A with marginals 1/N (rows) and 1/K (cols).

    Validates the marginals first and names the worst offender; every returned
    row sum should equal 1/(N*K).
    """
    a = np.asarray(a, dtype=np.float64)
    n, k = a.shape
    row_err = np.abs(a.sum(axis=1) - 1.0 / n)
    col_err = np.abs(a.sum(axis=0) - 1.0 / k)
    if row_err.max() > tol:
        raise ValueError(f"row marginal violated at row {int(row_err.argmax())}: "
                         f"|err|={row_err.max():.3e} > {tol}")
    if col_err.max() > tol:
        raise ValueError(f"column marginal violated at column {int(col_err.argmax())}: "
                         f"|err|={col_err.max():.3e} > {tol}")
    return (a @ a.T).sum(axis=1)


class PriorCache:
    """Length-keyed cache of finished bias matrices for evaluation reuse.

    Keyed by (T, parameter fingerprint); safe for concurrent reads, writes
    serialized by a lock.
    """

    def __init__(self):
        self._store: dict[tuple, np.ndarray] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def fingerprint(self, arrays: list[np.ndarray]) -> int:
        h = 0
        for a in arrays:
            h = hash((h, a.tobytes()))
        return h

    def get(self, key: tuple) -> np.ndarray | None:
        out = self._store.get(key)
        if out is None:
            self.misses += 1
        else:
            self.hits += 1
        return out

    def put(self, key: tuple, value: np.ndarray) -> None:
        with self._lock:
            self._store[key] = value.copy()

    def clear(self) -> None:
        with self._lock:
            self._store.clear()
            self.hits = self.misses = 0
