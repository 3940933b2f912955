"""Task-adaptive prototypes, cycle-consistent matching, anchor transform, auto-prompts.

The pipeline per episode:

1. Masked average pooling turns support (and query) feature maps into
   foreground/background prototype vectors.
2. Cycle-consistent matching transfers support evidence to the query:
   each masked support position is matched to its most similar query
   position (cosine), and the query position is kept only if the reverse
   match lands inside the true support foreground. Kept query features are
   averaged into enhanced query prototypes.
3. The four L2-normalized prototypes are stacked into P and a linear map W
   is solved so that W projects prototypes onto learned anchor rows A
   (W P^T = A^T in the least-squares sense). W is applied to the query's
   anchor-layer features, aligning them to a domain-agnostic code.
4. A small convolutional encoder-decoder turns the raw query image into a
   dense embedding (auto-prompt) whose channel 0 is trained as a mask logit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .imageops import resize_bilinear, resize_nearest
from .nn import Conv2d, ConvTranspose2d, Module, ModuleList, Parameter, Tensor, trunc_normal

__all__ = [
    "DegenerateMask",
    "Prototype",
    "PrototypePair",
    "AnchorTransform",
    "DenseEmbedding",
    "MatchIndex",
    "CycleMatchResult",
    "masked_prototype",
    "normalize_pair",
    "cycle_match",
    "solve_transform",
    "apply_transform",
    "DensePromptNet",
    "CdtapModule",
    "POOL_EPS",
    "COSINE_EPS",
]

POOL_EPS = 1e-8
COSINE_EPS = 1e-12
ANCHOR_ROWS = 4  # support fg, support bg, query fg, query bg
_REGION_KINDS = {"fg": "foreground", "bg": "background"}


class DegenerateMask(ValueError):
    """A pooling region is empty (or vanishes after downsampling)."""


@dataclass
class Prototype:
    vector: np.ndarray
    kind: str  # "foreground" | "background"
    source: str  # "support" | "query"


@dataclass
class PrototypePair:
    fg: Prototype
    bg: Prototype


@dataclass
class AnchorTransform:
    """W solved from min ||W P^T - A^T||_F; rows of P and A are prototype slots."""

    W: np.ndarray
    A: np.ndarray
    P: np.ndarray

    @property
    def residual(self) -> float:
        return float(np.linalg.norm(self.W @ self.P.T - self.A.T))


@dataclass
class DenseEmbedding:
    Z: Tensor  # C_p x H_m x W_m; channel LOGIT_CHANNEL doubles as a mask logit

    LOGIT_CHANNEL = 0


@dataclass
class MatchIndex:
    i_s2q: tuple[int, int]  # matched position in the query feature map
    j_q2s: tuple[int, int]  # backward match in the support feature map
    cycle_consistent: bool


@dataclass
class CycleMatchResult:
    query_fg_prototype: Prototype
    query_bg_prototype: Prototype
    matches: list[MatchIndex] = field(default_factory=list)
    fg_fallback: bool = False
    bg_fallback: bool = False

    def __iter__(self):
        # unpacks as (query_fg_prototype, query_bg_prototype, matches)
        return iter((self.query_fg_prototype, self.query_bg_prototype, self.matches))


def masked_prototype(feature: np.ndarray, mask: np.ndarray, region: str,
                     source: str = "support") -> Prototype:
    """Mask-weighted spatial average of a C x H_l x W_l feature map.

    The mask may be at any resolution; it is bilinearly resized to the
    feature grid and broadcast over channels. region "bg" pools over the
    complement.
    """
    if region not in ("fg", "bg"):
        raise ValueError("region must be 'fg' or 'bg'")
    if feature.ndim != 3:
        raise ValueError("feature must be C x H x W")
    weights = np.asarray(mask, dtype=np.float64)
    if region == "bg":
        weights = 1.0 - weights
    if weights.sum() == 0:
        raise DegenerateMask(f"mask has no {region} pixels at full resolution")
    grid = feature.shape[1:]
    if weights.shape != grid:
        weights = resize_bilinear(weights, grid)
    denom = weights.sum()
    if denom < POOL_EPS:
        raise DegenerateMask(
            f"{region} weight sum {denom:.3e} below {POOL_EPS} after downsampling")
    vec = (feature * weights[None]).sum(axis=(1, 2)) / denom
    return Prototype(vector=vec, kind=_REGION_KINDS[region], source=source)


def normalize_pair(fg: Prototype, bg: Prototype) -> PrototypePair:
    """L2-normalize both prototypes; zero vectors are an error, not guarded."""
    out = []
    for p in (fg, bg):
        n = float(np.linalg.norm(p.vector))
        if n == 0.0:
            raise ValueError(f"cannot normalize zero {p.kind} prototype")
        out.append(Prototype(vector=p.vector / n, kind=p.kind, source=p.source))
    return PrototypePair(fg=out[0], bg=out[1])


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(norms, COSINE_EPS)


def cycle_match(support_feat: np.ndarray, support_mask: np.ndarray,
                query_feat: np.ndarray) -> CycleMatchResult:
    """Cycle-consistent transfer of support evidence onto the query.

    support_mask is binary; if it is not already at the feature grid it is
    nearest-neighbor downsampled. The query mask is never consulted. The
    returned match list covers the foreground pass, one record per masked
    support position in row-major order; the background pass runs
    symmetrically on the complement and contributes only its prototype.
    Argmax ties break to the lowest row-major index. If no query position
    survives a pass, the corresponding support prototype is used instead
    and the fallback flag is set.
    """
    if support_feat.shape[0] != query_feat.shape[0]:
        raise ValueError("support and query features must share channel count")
    c, h, w = support_feat.shape
    mask = np.asarray(support_mask)
    if mask.shape != (h, w):
        mask = resize_nearest(mask.astype(np.uint8), (h, w))
    mask_flat = mask.ravel().astype(bool)
    if not mask_flat.any():
        raise DegenerateMask("support foreground empty at feature resolution")
    if mask_flat.all():
        raise DegenerateMask("support background empty at feature resolution")

    s = _unit_rows(support_feat.reshape(c, h * w).T)  # (N, C)
    q = _unit_rows(query_feat.reshape(c, h * w).T)
    sim = s @ q.T  # (N_support, N_query) cosine similarities
    query_flat = query_feat.reshape(c, h * w).T

    def one_pass(region_flat: np.ndarray, region: str) -> tuple[Prototype, list[MatchIndex], bool]:
        positions = np.flatnonzero(region_flat)
        fwd = np.argmax(sim[positions], axis=1)  # best query index per support position
        matches = []
        kept = []
        for u, qi in zip(positions, fwd):
            back = int(np.argmax(sim[:, qi]))
            ok = bool(region_flat[back])
            matches.append(MatchIndex(i_s2q=divmod(int(qi), w), j_q2s=divmod(back, w),
                                      cycle_consistent=ok))
            if ok:
                kept.append(int(qi))
        if kept:
            uniq = np.unique(kept)
            vec = query_flat[uniq].mean(axis=0)
            return (Prototype(vector=vec, kind=_REGION_KINDS[region], source="query"),
                    matches, False)
        support_proto = masked_prototype(support_feat, mask, region, source="support")
        return (Prototype(vector=support_proto.vector, kind=_REGION_KINDS[region],
                          source="query"), matches, True)

    fg_proto, fg_matches, fg_fb = one_pass(mask_flat, "fg")
    bg_proto, _, bg_fb = one_pass(~mask_flat, "bg")
    return CycleMatchResult(query_fg_prototype=fg_proto, query_bg_prototype=bg_proto,
                            matches=fg_matches, fg_fallback=fg_fb, bg_fallback=bg_fb)


def solve_transform(P: np.ndarray, A: np.ndarray) -> AnchorTransform:
    """Least-squares solve of W P^T = A^T (minimum-norm when underdetermined)."""
    P = np.asarray(P, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    if P.shape != A.shape:
        raise ValueError(f"P and A must share shape, got {P.shape} vs {A.shape}")
    if np.any(np.all(P == 0.0, axis=1)):
        raise ValueError("P contains an all-zero prototype row")
    # ||W P^T - A^T||_F = ||P W^T - A||_F, so solve P X = A and take W = X^T
    x, _, rank, _ = np.linalg.lstsq(P, A, rcond=None)
    if rank < min(P.shape):
        warnings.warn("rank-deficient prototype matrix; returning the minimum-norm solution",
                      RuntimeWarning, stacklevel=2)
    return AnchorTransform(W=x.T, A=A.copy(), P=P.copy())


def apply_transform(W: np.ndarray, query_features: np.ndarray) -> np.ndarray:
    """Left-multiply every spatial position's channel vector by W."""
    c = query_features.shape[0]
    if W.shape != (c, c):
        raise ValueError(f"W must be {c}x{c}, got {W.shape}")
    return np.einsum("oc,chw->ohw", W, query_features)


class DensePromptNet(Module):
    """Conv encoder-decoder mapping the raw image to a dense prompt embedding.

    Four stride-2 convolutions down, transposed convolutions back up to the
    mask-feature grid, then a 1x1 projection to the embedding width. Channel
    0 of the output is supervised as a mask logit.
    """

    def __init__(self, image_size: int, out_size: int, out_channels: int,
                 seed: int = 0, width: int = 8):
        rng = np.random.default_rng(seed)
        widths = [width, 2 * width, 2 * width, 2 * width]
        downs = []
        prev = 3
        for w_ in widths:
            downs.append(Conv2d(prev, w_, 3, rng, stride=2, padding=1))
            prev = w_
        self.downs = ModuleList(downs)
        bottom = image_size // 16
        if bottom < 1 or out_size % bottom != 0:
            raise ValueError(f"cannot upsample {bottom} -> {out_size} with block deconvs")
        f, ups = out_size // bottom, []
        while f > 1:
            k = 4 if f % 4 == 0 else 2
            if f % k != 0:
                raise ValueError(f"cannot upsample {bottom} -> {out_size} with block deconvs")
            ups.append(ConvTranspose2d(prev, prev, k, rng, init="normal"))
            f //= k
        self.ups = ModuleList(ups)
        self.proj = Conv2d(prev, out_channels, 1, rng, padding=0)
        self.out_size = out_size
        self.image_size = image_size

    def forward(self, image: np.ndarray) -> DenseEmbedding:
        if image.shape != (self.image_size, self.image_size, 3):
            raise ValueError(f"expected {self.image_size}px square image, got {image.shape}")
        x = Tensor(np.ascontiguousarray(image.transpose(2, 0, 1)))
        for conv in self.downs:
            x = conv(x).relu()
        for up in self.ups:
            x = up(x).relu()
        z = self.proj(x)
        if z.shape[1:] != (self.out_size, self.out_size):
            raise ValueError(f"dense embedding came out {z.shape[1:]}, wanted {self.out_size}")
        return DenseEmbedding(Z=z)


class CdtapModule(Module):
    """Learnable pieces of the adaptive-prompt path: anchor rows + prompt net."""

    def __init__(self, encoder_channels: int, image_size: int, mask_size: int,
                 mask_channels: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.anchor = Parameter(trunc_normal((ANCHOR_ROWS, encoder_channels), 0.2, rng))
        self.prompt_net = DensePromptNet(image_size, mask_size, mask_channels,
                                         seed=seed + 1)
        self.encoder_channels = encoder_channels

    def episode_prototypes(self, support_feats: list[np.ndarray],
                           support_masks: list[np.ndarray],
                           query_feat: np.ndarray) -> tuple[np.ndarray, dict]:
        """Stack the four normalized prototype rows for one episode.

        Support rows average masked prototypes over the K shots; query rows
        average the cycle-matched enhanced prototypes over the K shots.
        Returns (P, flags) where P is (4, C) and flags records fallbacks.
        """
        sp_fg, sp_bg, q_fg, q_bg = [], [], [], []
        fg_fb = bg_fb = False
        for feat, mask in zip(support_feats, support_masks):
            sp_fg.append(masked_prototype(feat, mask, "fg").vector)
            sp_bg.append(masked_prototype(feat, mask, "bg").vector)
            grid_mask = resize_nearest(np.asarray(mask, dtype=np.uint8), feat.shape[1:])
            res = cycle_match(feat, grid_mask, query_feat)
            q_fg.append(res.query_fg_prototype.vector)
            q_bg.append(res.query_bg_prototype.vector)
            fg_fb |= res.fg_fallback
            bg_fb |= res.bg_fallback
        support_pair = normalize_pair(
            Prototype(np.mean(sp_fg, axis=0), "foreground", "support"),
            Prototype(np.mean(sp_bg, axis=0), "background", "support"))
        query_pair = normalize_pair(
            Prototype(np.mean(q_fg, axis=0), "foreground", "query"),
            Prototype(np.mean(q_bg, axis=0), "background", "query"))
        p = np.stack([support_pair.fg.vector, support_pair.bg.vector,
                      query_pair.fg.vector, query_pair.bg.vector])
        return p, {"fg_fallback": fg_fb, "bg_fallback": bg_fb}

    def transform_tensor(self, P: np.ndarray) -> Tensor:
        """W as a Tensor differentiable in the anchor rows.

        The prototypes come from the frozen encoder, so pinv(P^T) is a
        constant and W = A^T pinv(P^T) matches solve_transform's
        minimum-norm least-squares solution exactly.
        """
        g = np.linalg.pinv(P.T)  # (rows, C), constant w.r.t. trainables
        return self.anchor.transpose((1, 0)) @ Tensor(g)

    def apply_transform_tensor(self, w: Tensor, features: np.ndarray) -> Tensor:
        c, h, width = features.shape
        flat = Tensor(features.reshape(c, h * width))
        return (w @ flat).reshape(c, h, width)

    def dense_prompt(self, target_image: np.ndarray) -> DenseEmbedding:
        return self.prompt_net(target_image)
