"""Transformer encoder building blocks (pre-norm residual wiring)."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from ..errors import OddDimension, ShapeMismatch
from ..rng import RandomStream
from . import tensor as T
from .tensor import Tensor


def init_uniform(rng: RandomStream, fan_in: int, shape) -> Tensor:
    """Projection init: uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor((rng.uniform(shape) * 2.0 - 1.0) * bound, requires_grad=True)


@dataclass
class Linear:
    w: Tensor
    b: Tensor

    @classmethod
    def create(cls, rng: RandomStream, d_in: int, d_out: int) -> "Linear":
        return cls(init_uniform(rng, d_in, (d_in, d_out)),
                   Tensor(np.zeros(d_out), requires_grad=True))

    def __call__(self, x: Tensor) -> Tensor:
        return T.matmul(x, self.w) + self.b


@dataclass
class EncoderBlockParams:
    """One encoder block: multi-head self-attention + feed-forward, pre-norm."""

    wq: Linear
    wk: Linear
    wv: Linear
    wo: Linear
    ff1: Linear
    ff2: Linear
    ln1_g: Tensor
    ln1_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    heads: int
    dropout_p: float

    @classmethod
    def create(cls, rng: RandomStream, d: int, heads: int, dropout_p: float = 0.1,
               ff_mult: int = 4) -> "EncoderBlockParams":
        if d % heads:
            raise ShapeMismatch(f"model dim {d} not divisible by {heads} heads")
        if not 0.0 <= dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")
        return cls(
            wq=Linear.create(rng, d, d),
            wk=Linear.create(rng, d, d),
            wv=Linear.create(rng, d, d),
            wo=Linear.create(rng, d, d),
            ff1=Linear.create(rng, d, ff_mult * d),
            ff2=Linear.create(rng, ff_mult * d, d),
            ln1_g=Tensor(np.ones(d), requires_grad=True),
            ln1_b=Tensor(np.zeros(d), requires_grad=True),
            ln2_g=Tensor(np.ones(d), requires_grad=True),
            ln2_b=Tensor(np.zeros(d), requires_grad=True),
            heads=heads,
            dropout_p=dropout_p,
        )

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, Linear):
                out[f"{prefix}{f.name}.w"] = v.w
                out[f"{prefix}{f.name}.b"] = v.b
            elif isinstance(v, Tensor):
                out[f"{prefix}{f.name}"] = v
        return out


def positional_encoding(length: int, d: int) -> np.ndarray:
    """Sinusoidal position features: sin on even columns, cos on odd ones."""
    if d % 2:
        raise OddDimension(f"dimension {d} must be even")
    pos = np.arange(length, dtype=np.float64)[:, None]
    rates = 10000.0 ** (-np.arange(0, d, 2, dtype=np.float64) / d)
    pe = np.empty((length, d))
    pe[:, 0::2] = np.sin(pos * rates)
    pe[:, 1::2] = np.cos(pos * rates)
    return pe


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, t, d = x.shape
    return x.reshape((*lead, t, heads, d // heads)).swapaxes(-2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    y = x.swapaxes(-2, -3)
    *lead, t, heads, hd = y.shape
    return y.reshape((*lead, t, heads * hd))


def self_attention(
    x: Tensor,
    params: EncoderBlockParams,
    mask: np.ndarray | None = None,
    return_weights: bool = False,
):
    """Scaled dot-product self-attention over [..., T, d].

    mask, when given, is a boolean key mask ([T] or broadcastable to the score
    shape) with True marking positions to exclude from every softmax row.
    """
    d = x.shape[-1]
    if d != params.wq.w.shape[0]:
        raise ShapeMismatch(f"input dim {d} vs projection dim {params.wq.w.shape[0]}")
    head_dim = d // params.heads
    q = _split_heads(params.wq(x), params.heads)
    k = _split_heads(params.wk(x), params.heads)
    v = _split_heads(params.wv(x), params.heads)
    scores = T.matmul(q, k.swapaxes(-1, -2)) * (1.0 / np.sqrt(head_dim))
    if mask is not None:
        scores = T.masked_fill(scores, np.asarray(mask, dtype=bool), -1e30)
    weights = T.softmax(scores, axis=-1)
    out = params.wo(_merge_heads(T.matmul(weights, v)))
    if return_weights:
        return out, weights.data
    return out


def encoder_block(
    x: Tensor,
    params: EncoderBlockParams,
    training: bool = False,
    rng: RandomStream | None = None,
    mask: np.ndarray | None = None,
) -> Tensor:
    """x + Drop(Attn(LN(x))), then + Drop(FFN(LN(.))). Shape-preserving."""
    h = T.layer_norm(x, params.ln1_g, params.ln1_b)
    x = x + T.dropout(self_attention(h, params, mask), params.dropout_p, rng, training)
    h = T.layer_norm(x, params.ln2_g, params.ln2_b)
    h = params.ff2(T.gelu(params.ff1(h)))
    return x + T.dropout(h, params.dropout_p, rng, training)
