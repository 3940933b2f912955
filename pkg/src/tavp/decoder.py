"""Prompt-conditioned mask decoder.

A small token set (4 output slots, 1 trainable high-level slot, N prompt
slots) attends to the prompt-conditioned image feature over two decoder
layers. Each layer runs token self-attention, token-to-image cross
attention, and image-to-token cross attention; after every layer the
high-level slot is refined by a point-wise MLP shared across layers. A
three-layer MLP turns the final high-level token into a dynamic kernel k,
and the mask logit at each position is the inner product of k with that
position's feature vector.

Only the high-level token, the shared point-wise MLP, and the kernel MLP
train; the attention stack, layer norms, output/prompt tokens, and the
mask-feature trunk stay frozen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cdtap import DenseEmbedding
from .mff import FusedFeature
from .nn import (
    MLP,
    Conv2d,
    ConvTranspose2d,
    Module,
    ModuleList,
    MultiHeadAttention,
    LayerNorm,
    Parameter,
    Tensor,
    concatenate,
    trunc_normal,
)

__all__ = [
    "MaskLogits",
    "TokenSet",
    "init_tokens",
    "MaskFeatureTrunk",
    "MaskDecoder",
    "PROMPT_COMBINE_MODES",
]

PROMPT_COMBINE_MODES = ("add", "mul")


@dataclass
class MaskLogits:
    logits: Tensor  # H_m x W_m


class TokenSet(Module):
    """Learnable token rows; only the high-level slot trains."""

    OUTPUT_SLOTS = 4
    HIGH_LEVEL_SLOT = 4  # row index once stacked [output | high | prompt]

    def __init__(self, output_tokens: np.ndarray, high_level_token: np.ndarray,
                 prompt_tokens: np.ndarray):
        if output_tokens.shape[1] != high_level_token.shape[1] or \
                output_tokens.shape[1] != prompt_tokens.shape[1]:
            raise ValueError("token groups must share width")
        if output_tokens.shape[0] != self.OUTPUT_SLOTS:
            raise ValueError(f"expected {self.OUTPUT_SLOTS} output tokens")
        if high_level_token.shape[0] != 1:
            raise ValueError("exactly one high-level token")
        self.output_tokens = Parameter(output_tokens, requires_grad=False)
        self.high_level_token = Parameter(high_level_token)
        self.prompt_tokens = Parameter(prompt_tokens, requires_grad=False)

    @property
    def width(self) -> int:
        return self.high_level_token.shape[1]

    @property
    def n_prompt(self) -> int:
        return self.prompt_tokens.shape[0]

    def stacked(self) -> Tensor:
        return concatenate(
            [self.output_tokens, self.high_level_token, self.prompt_tokens], axis=0)


def init_tokens(token_dim: int, n_prompt: int = 4, seed: int = 0) -> TokenSet:
    """Truncated-normal (std 0.02) token rows; fixed seed -> identical init."""
    if token_dim < 1 or n_prompt < 0:
        raise ValueError("token_dim must be positive and n_prompt nonnegative")
    rng = np.random.default_rng(seed)
    return TokenSet(
        output_tokens=trunc_normal((TokenSet.OUTPUT_SLOTS, token_dim), 0.02, rng),
        high_level_token=trunc_normal((1, token_dim), 0.02, rng),
        prompt_tokens=trunc_normal((n_prompt, token_dim), 0.02, rng),
    )


class MaskFeatureTrunk(Module):
    """Frozen 4x upsampling path producing the mask feature from the global one."""

    def __init__(self, encoder_channels: int, mask_channels: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.up = ConvTranspose2d(encoder_channels, mask_channels, 4, rng,
                                  init="bilinear")
        self.conv = Conv2d(mask_channels, mask_channels, 3, rng)
        self.freeze()

    def forward(self, global_feature: np.ndarray) -> np.ndarray:
        out = self.conv(self.up(Tensor(np.asarray(global_feature))))
        return out.data


class _DecoderLayer(Module):
    def __init__(self, token_dim: int, image_channels: int, heads: int,
                 rng: np.random.Generator):
        d, c = token_dim, image_channels
        self.self_attn = MultiHeadAttention(d, d, d, d, heads, rng)
        self.token_to_image = MultiHeadAttention(d, c, d, d, heads, rng)
        self.image_to_token = MultiHeadAttention(c, d, d, c, heads, rng)
        self.norm_self = LayerNorm(d)
        self.norm_t2i = LayerNorm(d)
        self.norm_i2t = LayerNorm(c)


class MaskDecoder(Module):
    """Two attention layers plus the dynamic-kernel head."""

    def __init__(self, image_channels: int, token_dim: int, heads: int = 2,
                 n_layers: int = 2, seed: int = 0):
        if image_channels < 1 or token_dim < 1 or n_layers < 1:
            raise ValueError("decoder dimensions must be positive")
        rng = np.random.default_rng(seed)
        self.image_channels = image_channels
        self.token_dim = token_dim
        self.layers = ModuleList([
            _DecoderLayer(token_dim, image_channels, heads, rng)
            for _ in range(n_layers)
        ])
        hidden = max(token_dim // 2, 4)
        self.shared_mlp = MLP([token_dim, hidden, token_dim], rng)
        self.kernel_mlp = MLP([token_dim, hidden, hidden, image_channels], rng)
        self.layers.freeze()  # attention stack and norms never train

    def decode(self, fused: FusedFeature, dense: DenseEmbedding, tokens: TokenSet,
               *, bypass_attention: bool = False,
               prompt_combine: str = "add") -> MaskLogits:
        if prompt_combine not in PROMPT_COMBINE_MODES:
            raise ValueError(f"prompt_combine must be one of {PROMPT_COMBINE_MODES}")
        feature = fused.feature
        z = dense.Z
        if z.shape != feature.shape:
            raise ValueError(
                f"dense embedding {z.shape} misaligned with fused feature {feature.shape}")
        if feature.shape[0] != self.image_channels:
            raise ValueError(
                f"decoder built for {self.image_channels} channels, got {feature.shape[0]}")
        if tokens.width != self.token_dim:
            raise ValueError(
                f"decoder built for width {self.token_dim}, tokens are {tokens.width}")
        c, h, w = feature.shape
        if prompt_combine == "add":
            x = feature + z
        else:
            x = feature * (1.0 + z)  # multiplicative conditioning, identity at z=0
        x_seq = x.reshape(c, h * w).transpose((1, 0))  # (HW, C)
        t = tokens.stacked()
        slot = TokenSet.HIGH_LEVEL_SLOT
        for layer in self.layers:
            if not bypass_attention:
                t = layer.norm_self(t + layer.self_attn(t, t))
                t = layer.norm_t2i(t + layer.token_to_image(t, x_seq))
                x_seq = layer.norm_i2t(x_seq + layer.image_to_token(x_seq, t))
            high = t[slot:slot + 1]
            high = high + self.shared_mlp(high)
            t = concatenate([t[:slot], high, t[slot + 1:]], axis=0)
        kernel = self.kernel_mlp(t[slot:slot + 1])  # (1, C_m)
        logits = (x_seq @ kernel.transpose((1, 0))).reshape(h, w)
        return MaskLogits(logits=logits)
