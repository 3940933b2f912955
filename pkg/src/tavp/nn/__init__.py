"""Tiny numpy-backed autodiff substrate used by the trainable parts of the model."""

from .modules import (
    MLP,
    Conv2d,
    ConvTranspose2d,
    LayerNorm,
    Linear,
    Module,
    ModuleList,
    MultiHeadAttention,
    Parameter,
    bilinear_upsample_kernel,
    trunc_normal,
)
from .optim import Adam
from .tensor import Tensor, concatenate, is_grad_enabled, no_grad, unfold

__all__ = [
    "Tensor",
    "no_grad",
    "is_grad_enabled",
    "concatenate",
    "unfold",
    "Parameter",
    "Module",
    "ModuleList",
    "Linear",
    "Conv2d",
    "ConvTranspose2d",
    "LayerNorm",
    "MultiHeadAttention",
    "MLP",
    "trunc_normal",
    "bilinear_upsample_kernel",
    "Adam",
]
