"""Frozen multi-level feature encoder.

A small patch-embedding transformer stands in for a large pretrained
encoder. It is frozen at construction: the framework's mechanics do not
depend on the encoder's weights, only on its multi-level feature geometry.
Two levels are exposed: the early local feature (token state after the
first `early_block_index` blocks) and the global feature (after the final
block plus norm). Both are returned as plain numpy arrays, detached from
any gradient graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import LayerNorm, Linear, Module, ModuleList, MultiHeadAttention, Parameter, Tensor, no_grad, trunc_normal

__all__ = ["EncoderConfig", "FeaturePyramid", "Backbone", "FrozenHandle",
           "FrozenParameterError", "freeze", "assert_frozen"]


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int = 64
    patch_size: int = 4
    depth: int = 8
    early_block_index: int = 2
    channels: int = 64
    heads: int = 4
    mlp_ratio: int = 6

    def validate(self) -> None:
        if min(self.image_size, self.patch_size, self.depth, self.channels,
               self.heads) < 1:
            raise ValueError("all encoder dimensions must be positive")
        if self.image_size % self.patch_size != 0:
            raise ValueError("image_size must be divisible by patch_size")
        if not (0 < self.early_block_index < self.depth):
            raise ValueError("need 0 < early_block_index < depth")
        if self.channels % self.heads != 0:
            raise ValueError("channels must be divisible by heads")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size


@dataclass
class FeaturePyramid:
    """Early + global encoder features; mask_feature is filled by the decoder trunk."""

    early_feature: np.ndarray
    global_feature: np.ndarray
    mask_feature: np.ndarray | None = None
    resolutions: dict = field(default_factory=dict)

    def require_full(self) -> None:
        if self.mask_feature is None:
            raise ValueError("pyramid is missing the mask_feature level")


class _Block(Module):
    def __init__(self, dim: int, heads: int, hidden: int, rng: np.random.Generator):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, dim, dim, dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h)
        return x + self.fc2(self.fc1(self.norm2(x)).gelu())


class Backbone(Module):
    def __init__(self, config: EncoderConfig, seed: int = 0):
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        p, c = config.patch_size, config.channels
        n_patches = config.grid * config.grid
        self.patch_embed = Linear(3 * p * p, c, rng)
        self.pos_embed = Parameter(trunc_normal((n_patches, c), 0.02, rng))
        self.blocks = ModuleList([
            _Block(c, config.heads, c * config.mlp_ratio, rng)
            for _ in range(config.depth)
        ])
        self.final_norm = LayerNorm(c)
        self.freeze()

    def _patchify(self, image: np.ndarray) -> np.ndarray:
        s, p = self.config.image_size, self.config.patch_size
        g = self.config.grid
        x = image.reshape(g, p, g, p, 3).transpose(0, 2, 1, 3, 4)
        return x.reshape(g * g, p * p * 3)

    def encode(self, image: np.ndarray) -> FeaturePyramid:
        """Forward one H x W x 3 image; returns detached numpy feature maps."""
        cfg = self.config
        if image.shape != (cfg.image_size, cfg.image_size, 3):
            raise ValueError(f"expected {cfg.image_size}x{cfg.image_size}x3 image, "
                             f"got {image.shape}")
        g, c = cfg.grid, cfg.channels
        with no_grad():
            # Inputs are in [0, 1]; shift to a zero-centered range so flat
            # patches of different colors embed with low shared component.
            x = self.patch_embed(Tensor(self._patchify(image) - 0.5)) + self.pos_embed
            early = None
            for i, block in enumerate(self.blocks):
                x = block(x)
                if i + 1 == cfg.early_block_index:
                    early = x.data
            final = self.final_norm(x).data

        def to_map(tokens: np.ndarray) -> np.ndarray:
            return tokens.reshape(g, g, c).transpose(2, 0, 1).copy()

        return FeaturePyramid(
            early_feature=to_map(early),
            global_feature=to_map(final),
            resolutions={"early": (g, g), "global": (g, g)},
        )

    def encode_batch(self, images: list[np.ndarray]) -> list[FeaturePyramid]:
        return [self.encode(im) for im in images]


class FrozenParameterError(AssertionError):
    """A parameter drifted from its frozen snapshot."""


@dataclass
class FrozenHandle:
    module: Module
    snapshot: dict[str, np.ndarray]


@dataclass
class FrozenReport:
    ok: bool
    n_checked: int


def freeze(module: Module) -> FrozenHandle:
    """Disable gradients on every parameter and snapshot their bytes."""
    module.freeze()
    return FrozenHandle(module=module, snapshot=module.state_dict())


def assert_frozen(handle: FrozenHandle, before_snapshot: dict[str, np.ndarray] | None = None) -> FrozenReport:
    """Bitwise-compare current parameters against the snapshot; raise on drift."""
    snapshot = handle.snapshot if before_snapshot is None else before_snapshot
    current = dict(handle.module.named_parameters())
    for name, want in snapshot.items():
        got = current[name].data
        if got.shape != want.shape or not np.array_equal(got, want):
            raise FrozenParameterError(f"parameter {name!r} drifted from its frozen snapshot")
    return FrozenReport(ok=True, n_checked=len(snapshot))
