"""Reverse-mode automatic differentiation over a small numpy op set.

Everything is float64. A Tensor wraps an ndarray plus an optional gradient
accumulator; ops build a tape of parent links and backward closures, and
``Tensor.backward()`` replays it in reverse topological order. Graph traversal
order is fixed by construction order, so gradient accumulation is
bit-reproducible run to run.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from ..errors import NonFiniteLoss, ShapeMismatch
from ..rng import RandomStream

_SQRT1_2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    # -- plumbing -------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'yes' if self.grad is not None else 'no'})"

    # -- arithmetic -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, key):
        return gather(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def swapaxes(self, a, b):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the parent's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise ----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as e:
        raise ShapeMismatch(str(e)) from None
    out = Tensor(data, parents=(a, b))

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad, b.shape))

    out._backward = backward if out.requires_grad else None
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as e:
        raise ShapeMismatch(str(e)) from None
    out = Tensor(data, parents=(a, b))

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad * a.data, b.shape))

    out._backward = backward if out.requires_grad else None
    return out


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data / b.data, parents=(a, b))

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-out.grad * a.data / (b.data * b.data), b.shape))

    out._backward = backward if out.requires_grad else None
    return out


def power(a, exponent: float) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data**exponent, parents=(a,))

    def backward():
        a._accumulate(out.grad * exponent * a.data ** (exponent - 1))

    out._backward = backward if out.requires_grad else None
    return out


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.exp(a.data), parents=(a,))

    def backward():
        a._accumulate(out.grad * out.data)

    out._backward = backward if out.requires_grad else None
    return out


def log(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.log(a.data), parents=(a,))

    def backward():
        a._accumulate(out.grad / a.data)

    out._backward = backward if out.requires_grad else None
    return out


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.sqrt(a.data), parents=(a,))

    def backward():
        a._accumulate(out.grad * 0.5 / out.data)

    out._backward = backward if out.requires_grad else None
    return out


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.tanh(a.data), parents=(a,))

    def backward():
        a._accumulate(out.grad * (1.0 - out.data * out.data))

    out._backward = backward if out.requires_grad else None
    return out


def gelu(a) -> Tensor:
    """Exact GELU, x * Phi(x) with the Gaussian CDF."""
    a = _as_tensor(a)
    cdf = 0.5 * (1.0 + erf(a.data * _SQRT1_2))
    out = Tensor(a.data * cdf, parents=(a,))

    def backward():
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * a.data * a.data)
        a._accumulate(out.grad * (cdf + a.data * pdf))

    out._backward = backward if out.requires_grad else None
    return out


# -- shape ops -------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape), parents=(a,))

    def backward():
        a._accumulate(out.grad.reshape(a.shape))

    out._backward = backward if out.requires_grad else None
    return out


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.transpose(axes), parents=(a,))

    def backward():
        inv = None if axes is None else tuple(np.argsort(axes))
        a._accumulate(out.grad.transpose(inv))

    out._backward = backward if out.requires_grad else None
    return out


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), parents=tuple(tensors))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward():
        pieces = np.split(out.grad, splits, axis=axis)
        for t, g in zip(tensors, pieces):
            if t.requires_grad:
                t._accumulate(g)

    out._backward = backward if out.requires_grad else None
    return out


def gather(a, key) -> Tensor:
    """Indexing/slicing; integer-array keys gather rows with scatter-add backward."""
    a = _as_tensor(a)
    out = Tensor(a.data[key], parents=(a,))

    def backward():
        g = np.zeros_like(a.data)
        np.add.at(g, key, out.grad)
        a._accumulate(g)

    out._backward = backward if out.requires_grad else None
    return out


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), parents=(a,))

    def backward():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape).copy())

    out._backward = backward if out.requires_grad else None
    return out


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / float(count))


# -- linear algebra ----------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data @ b.data
    except ValueError as e:
        raise ShapeMismatch(str(e)) from None
    out = Tensor(data, parents=(a, b))

    def backward():
        g = out.grad
        if a.requires_grad:
            ga = g @ b.data.swapaxes(-1, -2) if b.ndim > 1 else np.outer(g, b.data)
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = a.data.swapaxes(-1, -2) @ g if a.ndim > 1 else np.outer(a.data, g)
            b._accumulate(_unbroadcast(gb, b.shape))

    out._backward = backward if out.requires_grad else None
    return out


# -- neural ops --------------------------------------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, parents=(a,))

    def backward():
        g = out.grad
        dot = (g * y).sum(axis=axis, keepdims=True)
        a._accumulate(y * (g - dot))

    out._backward = backward if out.requires_grad else None
    return out


def masked_fill(a, mask: np.ndarray, value: float) -> Tensor:
    """Set entries where mask is True to a constant; gradient is zero there."""
    a = _as_tensor(a)
    data = np.where(mask, value, a.data)
    out = Tensor(data, parents=(a,))

    def backward():
        a._accumulate(_unbroadcast(np.where(mask, 0.0, out.grad), a.shape))

    out._backward = backward if out.requires_grad else None
    return out


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean / unit variance, then affine."""
    a, gain, bias = _as_tensor(a), _as_tensor(gain), _as_tensor(bias)
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = Tensor(xhat * gain.data + bias.data, parents=(a, gain, bias))

    def backward():
        g = out.grad
        n = a.shape[-1]
        if gain.requires_grad:
            gain._accumulate(_unbroadcast(g * xhat, gain.shape))
        if bias.requires_grad:
            bias._accumulate(_unbroadcast(g, bias.shape))
        if a.requires_grad:
            gx = g * gain.data
            a._accumulate(inv * (gx - gx.mean(axis=-1, keepdims=True)
                                 - xhat * (gx * xhat).mean(axis=-1, keepdims=True)))

    out._backward = backward if out.requires_grad else None
    return out


def embedding(table, ids: np.ndarray) -> Tensor:
    """Row lookup into an embedding table; backward scatter-adds."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    out = Tensor(table.data[ids], parents=(table,))

    def backward():
        g = np.zeros_like(table.data)
        np.add.at(g, ids, out.grad)
        table._accumulate(g)

    out._backward = backward if out.requires_grad else None
    return out


def dropout(a, p: float, rng: RandomStream | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must be in [0, 1)")
    a = _as_tensor(a)
    if not training or p == 0.0:
        return a
    if rng is None:
        raise ValueError("training-mode dropout needs a RandomStream")
    keep = (rng.uniform(a.shape) >= p) / (1.0 - p)
    out = Tensor(a.data * keep, parents=(a,))

    def backward():
        a._accumulate(out.grad * keep)

    out._backward = backward if out.requires_grad else None
    return out


def cross_entropy(logits, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer targets under row softmax.

    logits: [..., C]; targets: integer array matching the leading shape.
    """
    logits = _as_tensor(logits)
    targets = np.asarray(targets)
    if targets.shape != logits.shape[:-1]:
        raise ShapeMismatch(f"targets {targets.shape} vs logits {logits.shape}")
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    flat = logp.reshape(-1, logp.shape[-1])
    picked = flat[np.arange(flat.shape[0]), targets.reshape(-1)]
    out = Tensor(-picked.mean(), parents=(logits,))

    def backward():
        probs = np.exp(logp)
        onehot = np.zeros_like(flat)
        onehot[np.arange(flat.shape[0]), targets.reshape(-1)] = 1.0
        g = (probs - onehot.reshape(probs.shape)) / flat.shape[0]
        logits._accumulate(out.grad * g)

    out._backward = backward if out.requires_grad else None
    return out


def straight_through(soft: Tensor, hard: np.ndarray) -> Tensor:
    """Forward the hard values, backpropagate as if they were the soft ones."""
    out = Tensor(np.asarray(hard, dtype=np.float64), parents=(soft,))

    def backward():
        soft._accumulate(out.grad)

    out._backward = backward if out.requires_grad else None
    return out


def conv1d(x, weight, bias, stride: int) -> Tensor:
    """Valid-mode strided 1-D convolution.

    x: [L, C_in]; weight: [k, C_in, C_out]; bias: [C_out] -> [F, C_out] with
    F = floor((L - k) / stride) + 1.
    """
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    length, c_in = x.shape
    k, wc_in, c_out = weight.shape
    if wc_in != c_in:
        raise ShapeMismatch(f"conv1d input channels {c_in} vs weight {wc_in}")
    frames = (length - k) // stride + 1
    if frames < 1:
        raise ShapeMismatch(f"input of {length} samples shorter than kernel {k}")
    idx = stride * np.arange(frames)[:, None] + np.arange(k)[None, :]
    windows = x.data[idx]  # [F, k, C_in]
    out = Tensor(
        np.tensordot(windows, weight.data, axes=([1, 2], [0, 1])) + bias.data,
        parents=(x, weight, bias),
    )

    def backward():
        g = out.grad  # [F, C_out]
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=0))
        if weight.requires_grad:
            weight._accumulate(np.tensordot(windows, g, axes=([0], [0])))
        if x.requires_grad:
            gw = np.tensordot(g, weight.data, axes=([1], [2]))  # [F, k, C_in]
            gx = np.zeros_like(x.data)
            starts = stride * np.arange(frames)
            for j in range(k):
                # for fixed kernel tap j the target rows are all distinct
                gx[starts + j] += gw[:, j, :]
            x._accumulate(gx)

    out._backward = backward if out.requires_grad else None
    return out


def check_finite(loss: Tensor) -> Tensor:
    if not np.all(np.isfinite(loss.data)):
        raise NonFiniteLoss(f"loss evaluated to {loss.data!r}")
    return loss
