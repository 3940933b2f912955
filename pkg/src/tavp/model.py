"""End-to-end episodic segmenter assembling the component modules.

Forward path per episode: the frozen encoder produces support and query
feature pyramids; the frozen trunk lifts the query's global feature to the
mask-feature grid; CDTAP solves the episode's anchor transform and emits a
dense prompt from the query image; fusion combines the (transformed) query
features with the mask feature; the decoder turns tokens plus conditioned
features into mask logits.

Ablation switches: use_cdtap=False replaces the transform with identity and
the dense prompt with zeros; use_mff=False feeds the trunk's mask feature
directly to the decoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backbone import Backbone, EncoderConfig, FeaturePyramid
from .cdtap import CdtapModule, DenseEmbedding
from .datasets import Episode
from .decoder import MaskDecoder, MaskFeatureTrunk, MaskLogits, TokenSet, init_tokens
from .mff import FeatureFusion, FusedFeature
from .nn import Module, Tensor, no_grad

__all__ = ["ModelConfig", "EpisodeOutput", "Segmenter", "NAMESPACES"]

NAMESPACES = ("backbone", "mff", "cdtap", "decoder_heads", "decoder_frozen")


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    mask_channels: int = 16
    token_dim: int = 64
    n_prompt: int = 4
    decoder_heads: int = 2
    prompt_combine: str = "add"
    use_cdtap: bool = True
    use_mff: bool = True

    def validate(self) -> None:
        self.encoder.validate()
        if self.mask_channels < 1 or self.token_dim < 1:
            raise ValueError("channel and token widths must be positive")
        if self.n_prompt < 0:
            raise ValueError("n_prompt must be nonnegative")
        if self.prompt_combine not in ("add", "mul"):
            raise ValueError("prompt_combine must be 'add' or 'mul'")

    @property
    def mask_size(self) -> int:
        return self.encoder.grid * 4


@dataclass
class EpisodeOutput:
    logits: MaskLogits
    dense: DenseEmbedding | None  # None when the cdtap path is disabled
    flags: dict


class Segmenter(Module):
    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0):
        config.validate()
        self.config = config
        enc = config.encoder
        self.backbone = Backbone(enc, seed=seed)
        self.trunk = MaskFeatureTrunk(enc.channels, config.mask_channels, seed=seed + 1)
        self.mff = FeatureFusion(enc.channels, config.mask_channels, seed=seed + 2)
        self.cdtap = CdtapModule(enc.channels, enc.image_size, config.mask_size,
                                 config.mask_channels, seed=seed + 3)
        self.decoder = MaskDecoder(config.mask_channels, config.token_dim,
                                   heads=config.decoder_heads, seed=seed + 4)
        self.tokens = init_tokens(config.token_dim, config.n_prompt, seed=seed + 5)

    # ------------------------------------------------------------------
    # parameter bookkeeping

    def namespace_of(self, name: str) -> str:
        if name.startswith(("backbone.", "trunk.")):
            return "backbone" if name.startswith("backbone.") else "decoder_frozen"
        if name.startswith("mff."):
            return "mff"
        if name.startswith("cdtap."):
            return "cdtap"
        if name.startswith(("decoder.shared_mlp", "decoder.kernel_mlp")) or \
                name == "tokens.high_level_token":
            return "decoder_heads"
        return "decoder_frozen"

    def namespace_parameters(self, namespaces=None) -> dict:
        """Parameters grouped by namespace; optionally filtered."""
        groups: dict[str, dict] = {ns: {} for ns in NAMESPACES}
        for name, p in self.named_parameters():
            groups[self.namespace_of(name)][name] = p
        if namespaces is not None:
            groups = {ns: groups[ns] for ns in namespaces}
        return groups

    def trainable_parameters(self, namespaces=("cdtap", "mff", "decoder_heads")) -> dict:
        out = {}
        for ns in namespaces:
            out.update(self.namespace_parameters()[ns])
        return out

    def parameter_budget(self, namespaces=("cdtap", "mff", "decoder_heads")):
        """(trainable, total, ratio) parameter counts under the given namespaces."""
        total = sum(p.data.size for _, p in self.named_parameters())
        trainable = sum(p.data.size for p in self.trainable_parameters(namespaces).values())
        return trainable, total, trainable / total

    # ------------------------------------------------------------------
    # forward

    def encode_episode(self, episode: Episode) -> tuple[list[FeaturePyramid], FeaturePyramid]:
        supports = self.backbone.encode_batch([s.image for s in episode.support])
        query = self.backbone.encode(episode.query.image)
        return supports, query

    def forward_episode(self, episode: Episode) -> EpisodeOutput:
        cfg = self.config
        supports, query = self.encode_episode(episode)
        mask_feature = self.trunk(query.global_feature)
        query.mask_feature = mask_feature
        flags: dict = {}

        if cfg.use_cdtap:
            p, flags = self.cdtap.episode_prototypes(
                [s.global_feature for s in supports],
                [s.mask for s in episode.support],
                query.global_feature)
            w = self.cdtap.transform_tensor(p)
            # tanh bounds the transformed features: the per-episode solve can
            # amplify off-prototype directions arbitrarily, and unbounded
            # outlier episodes would dominate the downstream gradients
            global_in = self.cdtap.apply_transform_tensor(
                w, query.global_feature).tanh()
            dense = self.cdtap.dense_prompt(episode.query.image)
        else:
            global_in = query.global_feature
            dense = None

        if cfg.use_mff:
            fused = self.mff(query.early_feature, global_in, mask_feature)
        else:
            fused = FusedFeature(feature=Tensor(np.asarray(mask_feature)))

        dense_in = dense if dense is not None else DenseEmbedding(
            Z=Tensor(np.zeros(fused.feature.shape)))
        logits = self.decoder.decode(fused, dense_in, self.tokens,
                                     prompt_combine=cfg.prompt_combine)
        return EpisodeOutput(logits=logits, dense=dense, flags=flags)

    def predict_episode(self, episode: Episode) -> np.ndarray:
        """Binary query mask: logits thresholded at zero, no graph recorded."""
        with no_grad():
            out = self.forward_episode(episode)
        return (out.logits.logits.data > 0.0).astype(np.uint8)
