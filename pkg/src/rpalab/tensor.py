"""Dense float64 tensors (rank <= 4) with a reverse-mode tape.

Each op that touches a graph-connected input records per-parent vjp closures;
``backward()`` on a scalar walks the tape in reverse topological order and
accumulates into ``.grad``. Values are plain C-order numpy arrays, so anything
detached is safe to hand across threads.
"""
from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from scipy.special import erf as _sp_erf

_GRAD_ENABLED = True

_MAX_RANK = 4

# Additive mask value: exp(x - max) underflows to exactly 0.0 for masked slots.
NEG_MASK = -1e30


@contextmanager
def no_grad():
    """Disable tape recording inside the block (pure evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _as_array(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim > _MAX_RANK:
        raise ValueError(f"rank {a.ndim} exceeds supported maximum {_MAX_RANK}")
    return a


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjps")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._vjps: tuple = ()

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents, vjps) -> "Tensor":
        out = Tensor(data)
        if _GRAD_ENABLED:
            keep = [(p, v) for p, v in zip(parents, vjps) if p.requires_grad or p._parents]
            if keep:
                out.requires_grad = True
                out._parents = tuple(p for p, _ in keep)
                out._vjps = tuple(v for _, v in keep)
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Value-copy cut off from the tape."""
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, grad={'yes' if self.requires_grad else 'no'})"

    # -- autodiff ------------------------------------------------------------

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar value")
        if not (self.requires_grad or self._parents):
            raise ValueError("backward() on a detached value: nothing to differentiate")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and not node._parents:
                node.grad = g if node.grad is None else node.grad + g
            for parent, vjp in zip(node._parents, node._vjps):
                contrib = vjp(g)
                pid = id(parent)
                if pid in grads:
                    grads[pid] = grads[pid] + contrib
                else:
                    grads[pid] = np.array(contrib, dtype=np.float64, copy=True)

    def zero_grad(self) -> None:
        self.grad = None

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        o = other if isinstance(other, Tensor) else Tensor(other)
        data = self.data + o.data
        return Tensor._make(
            data,
            (self, o),
            (lambda g: _unbroadcast(g, self.shape), lambda g: _unbroadcast(g, o.shape)),
        )

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), (lambda g: -g,))

    def __sub__(self, other):
        o = other if isinstance(other, Tensor) else Tensor(other)
        data = self.data - o.data
        return Tensor._make(
            data,
            (self, o),
            (lambda g: _unbroadcast(g, self.shape), lambda g: _unbroadcast(-g, o.shape)),
        )

    def __rsub__(self, other):
        return Tensor(other) - self

    def __mul__(self, other):
        o = other if isinstance(other, Tensor) else Tensor(other)
        data = self.data * o.data
        return Tensor._make(
            data,
            (self, o),
            (
                lambda g: _unbroadcast(g * o.data, self.shape),
                lambda g: _unbroadcast(g * self.data, o.shape),
            ),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = other if isinstance(other, Tensor) else Tensor(other)
        data = self.data / o.data
        return Tensor._make(
            data,
            (self, o),
            (
                lambda g: _unbroadcast(g / o.data, self.shape),
                lambda g: _unbroadcast(-g * self.data / (o.data * o.data), o.shape),
            ),
        )

    def __rtruediv__(self, other):
        return Tensor(other) / self

    def __pow__(self, exponent: float):
        e = float(exponent)
        data = self.data**e
        return Tensor._make(data, (self,), (lambda g: g * e * self.data ** (e - 1.0),))

    def __matmul__(self, other):
        o = other if isinstance(other, Tensor) else Tensor(other)
        data = np.matmul(self.data, o.data)

        def vjp_a(g):
            return _unbroadcast(np.matmul(g, np.swapaxes(o.data, -1, -2)), self.shape)

        def vjp_b(g):
            return _unbroadcast(np.matmul(np.swapaxes(self.data, -1, -2), g), o.shape)

        return Tensor._make(data, (self, o), (vjp_a, vjp_b))

    # -- elementwise nonlinearities -------------------------------------------

    def exp(self):
        data = np.exp(self.data)
        return Tensor._make(data, (self,), (lambda g: g * data,))

    def log(self):
        return Tensor._make(np.log(self.data), (self,), (lambda g: g / self.data,))

    def sqrt(self):
        data = np.sqrt(self.data)
        return Tensor._make(data, (self,), (lambda g: g * 0.5 / data,))

    def tanh(self):
        data = np.tanh(self.data)
        return Tensor._make(data, (self,), (lambda g: g * (1.0 - data * data),))

    def sigmoid(self):
        data = np.where(self.data >= 0, 1.0 / (1.0 + np.exp(-self.data)),
                        np.exp(self.data) / (1.0 + np.exp(self.data)))
        return Tensor._make(data, (self,), (lambda g: g * data * (1.0 - data),))

    def relu(self):
        data = np.maximum(self.data, 0.0)
        return Tensor._make(data, (self,), (lambda g: g * (self.data > 0.0),))

    def gelu(self):
        # Exact erf form; derivative is Phi(x) + x * phi(x).
        x = self.data
        cdf = 0.5 * (1.0 + _sp_erf(x / math.sqrt(2.0)))
        data = x * cdf
        pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
        return Tensor._make(data, (self,), (lambda g: g * (cdf + x * pdf),))

    def clamp(self, lo: float | None = None, hi: float | None = None):
        data = np.clip(self.data, lo, hi)
        inside = np.ones_like(self.data, dtype=bool)
        if lo is not None:
            inside &= self.data >= lo
        if hi is not None:
            inside &= self.data <= hi
        return Tensor._make(data, (self,), (lambda g: g * inside,))

    def clamp_min(self, lo: float):
        return self.clamp(lo=lo)

    def nan_to_num(self, nan: float = 0.0, posinf: float | None = None,
                   neginf: float | None = None):
        """Replace NaN/Inf; gradient passes only where the input was finite."""
        hi = np.finfo(np.float64).max if posinf is None else posinf
        lo = -np.finfo(np.float64).max if neginf is None else neginf
        data = np.nan_to_num(self.data, nan=nan, posinf=hi, neginf=lo)
        finite = np.isfinite(self.data)
        return Tensor._make(data, (self,), (lambda g: g * finite,))

    # -- shape ops -------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        data = self.data.reshape(shape)
        if data.ndim > _MAX_RANK:
            raise ValueError(f"rank {data.ndim} exceeds supported maximum {_MAX_RANK}")
        return Tensor._make(data, (self,), (lambda g: g.reshape(old),))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = tuple(np.argsort(axes))
        data = np.transpose(self.data, axes)
        return Tensor._make(data, (self,), (lambda g: np.transpose(g, inv),))

    # -- reductions --------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        data = self.data.sum(axis=axis, keepdims=keepdims)

        def vjp(g):
            if axis is None:
                return np.broadcast_to(g, self.shape)
            gg = g if keepdims else np.expand_dims(g, axis)
            return np.broadcast_to(gg, self.shape)

        return Tensor._make(data, (self,), (vjp,))

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = 1
            for ax in axes:
                n *= self.shape[ax]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- softmax family ------------------------------------------------------------

    def softmax_last(self):
        """Row softmax over the last axis; rowwise max subtracted first.

        Adding any per-row constant that embeds exactly in float64 leaves the
        output bit-identical: the max shifts by the same amount and cancels.
        """
        m = self.data.max(axis=-1, keepdims=True)
        e = np.exp(self.data - m)
        data = e / e.sum(axis=-1, keepdims=True)

        def vjp(g):
            dot = (g * data).sum(axis=-1, keepdims=True)
            return data * (g - dot)

        return Tensor._make(data, (self,), (vjp,))

    def log_softmax_last(self):
        m = self.data.max(axis=-1, keepdims=True)
        z = self.data - m
        lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
        data = z - lse
        soft = np.exp(data)

        def vjp(g):
            return g - soft * g.sum(axis=-1, keepdims=True)

        return Tensor._make(data, (self,), (vjp,))


# -- free functions -----------------------------------------------------------


def contract(a: Tensor, b: Tensor, spec: str) -> Tensor:
    """Two-operand index contraction, e.g. ``contract(mu, phi, "btr,tk->rk")``.

    Repeated indices within a single operand (traces) are not supported.
    """
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)
    try:
        lhs, out = spec.replace(" ", "").split("->")
        ta, tb = lhs.split(",")
    except ValueError as exc:
        raise ValueError(f"contract spec {spec!r} must look like 'ab,bc->ac'") from exc
    for term, t in ((ta, a), (tb, b)):
        if len(set(term)) != len(term):
            raise ValueError(f"contract spec {spec!r}: repeated index in operand term {term!r}")
        if len(term) != t.ndim:
            raise ValueError(
                f"contract spec {spec!r}: term {term!r} has {len(term)} indices "
                f"but operand has rank {t.ndim}"
            )
    if not set(out) <= set(ta) | set(tb):
        raise ValueError(f"contract spec {spec!r}: output index missing from operands")
    dims: dict[str, int] = {}
    for term, t in ((ta, a), (tb, b)):
        for letter, n in zip(term, t.shape):
            if dims.setdefault(letter, n) != n:
                raise ValueError(
                    f"contract spec {spec!r}: index {letter!r} has extent "
                    f"{dims[letter]} vs {n}"
                )
    data = np.einsum(spec, a.data, b.data)

    def make_vjp(term_x: str, term_y: str, y: np.ndarray, x_shape: tuple):
        known = set(out) | set(term_y)
        reduced = "".join(c for c in term_x if c in known)

        def vjp(g):
            gx = np.einsum(f"{out},{term_y}->{reduced}", g, y)
            if reduced != term_x:
                expand = [slice(None) if c in known else None for c in term_x]
                gx = np.broadcast_to(gx[tuple(expand)], x_shape)
            return gx

        return vjp

    return Tensor._make(
        data, (a, b),
        (make_vjp(ta, tb, b.data, a.shape), make_vjp(tb, ta, a.data, b.shape)),
    )


def take_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Embedding lookup: out[..., :] = table[ids[...], :]."""
    ids = np.asarray(ids)
    if ids.min() < 0 or ids.max() >= table.shape[0]:
        raise ValueError(f"ids out of range [0, {table.shape[0]})")
    data = table.data[ids]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return gt

    return Tensor._make(data, (table,), (vjp,))


def gather_last(x: Tensor, idx: np.ndarray) -> Tensor:
    """out[i] = x[i, idx[i]] for 2-D x and 1-D integer idx."""
    idx = np.asarray(idx)
    if x.ndim != 2 or idx.ndim != 1:
        raise ValueError("gather_last expects 2-D input and 1-D index")
    if idx.min() < 0 or idx.max() >= x.shape[-1]:
        raise ValueError(f"index out of range [0, {x.shape[-1]})")
    rows = np.arange(x.shape[0])
    data = x.data[rows, idx]

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[rows, idx] = g
        return gx

    return Tensor._make(data, (x,), (vjp,))


def dropout(x: Tensor, p: float, rng) -> Tensor:
    """Inverted-scaling dropout; identity when p == 0."""
    if p <= 0.0:
        return x
    mask = (rng.uniform(x.shape) >= p) / (1.0 - p)
    return x * Tensor(mask)


def stack_sum(tensors: list[Tensor]) -> Tensor:
    """Sum of a list of same-shape tensors."""
    out = tensors[0]
    for t in tensors[1:]:
        out = out + t
    return out
