"""Minimal tensor/autodiff substrate and transformer encoder blocks."""

from . import tensor
from .blocks import EncoderBlockParams, Linear, encoder_block, init_uniform, positional_encoding, self_attention
from .checkpoint import FORMAT_VERSION, load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .optim import Adam, warmup_linear
from .tensor import Tensor

__all__ = [
    "Adam",
    "EncoderBlockParams",
    "FORMAT_VERSION",
    "Linear",
    "Tensor",
    "encoder_block",
    "grad_check",
    "init_uniform",
    "load_checkpoint",
    "positional_encoding",
    "save_checkpoint",
    "self_attention",
    "tensor",
    "warmup_linear",
]
