"""Core data records: domains, samples, episodes, augmentation policy."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["SHAPE_FAMILIES", "TEXTURES", "PALETTES", "DomainSpec", "Sample", "Episode", "AugmentPolicy", "Dataset"]

SHAPE_FAMILIES = ("ellipse", "rectangle", "polygon", "blob")
TEXTURES = ("flat", "noise", "stripes")
PALETTES = ("rgb", "grayscale")


@dataclass(frozen=True)
class DomainSpec:
    """One synthetic domain: a shape family rendered with a texture and palette."""

    domain_id: str
    canvas_size: int = 64
    shape_family: str = "ellipse"
    texture: str = "flat"
    palette: str = "rgb"
    fg_scale_range: tuple[float, float] = (0.05, 0.35)
    noise_std: float = 0.0

    def validate(self) -> None:
        if not self.domain_id:
            raise ValueError("domain_id must be nonempty")
        if self.canvas_size < 16:
            raise ValueError(f"canvas_size must be >= 16, got {self.canvas_size}")
        if self.shape_family not in SHAPE_FAMILIES:
            raise ValueError(f"shape_family must be one of {SHAPE_FAMILIES}")
        if self.texture not in TEXTURES:
            raise ValueError(f"texture must be one of {TEXTURES}")
        if self.palette not in PALETTES:
            raise ValueError(f"palette must be one of {PALETTES}")
        lo, hi = self.fg_scale_range
        if not (0.0 < lo < hi <= 1.0):
            raise ValueError(f"fg_scale_range needs 0 < min < max <= 1, got {self.fg_scale_range}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


@dataclass
class Sample:
    """One image/mask pair. Image is H x W x 3 float in [0,1], mask H x W in {0,1}."""

    image: np.ndarray
    mask: np.ndarray
    class_id: int
    domain_id: str

    def validate(self) -> None:
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"image must be HxWx3, got {self.image.shape}")
        if self.mask.shape != self.image.shape[:2]:
            raise ValueError("image and mask must share spatial size")
        if self.image.min() < 0.0 or self.image.max() > 1.0:
            raise ValueError("image values must lie in [0,1]")
        vals = np.unique(self.mask)
        if not np.all(np.isin(vals, (0, 1))):
            raise ValueError(f"mask values must be in {{0,1}}, got {vals}")

    def foreground_ratio(self) -> float:
        return float(self.mask.mean())

    def copy(self) -> "Sample":
        return Sample(self.image.copy(), self.mask.copy(), self.class_id, self.domain_id)


@dataclass
class Episode:
    """One 1-way K-shot task: K supports plus one query, all of one class."""

    support: list[Sample]
    query: Sample
    class_id: int
    shot: int = field(init=False)
    way: int = 1

    def __post_init__(self) -> None:
        self.shot = len(self.support)
        if self.shot < 1:
            raise ValueError("episode needs at least one support sample")
        for s in self.support:
            if s.class_id != self.class_id:
                raise ValueError("support class_id differs from episode class_id")
        if self.query.class_id != self.class_id:
            raise ValueError("query class_id differs from episode class_id")


@dataclass(frozen=True)
class AugmentPolicy:
    """Jitter magnitudes; a zero field disables the corresponding transform.

    brightness: max additive intensity shift.
    contrast / saturation: max deviation of the multiplicative factor from 1.
    flip_h / flip_v: flip probabilities.
    rotation: max |angle| in degrees. translate: max shift as a canvas fraction.
    scale: max deviation of the zoom factor from 1.
    """

    brightness: float = 0.0
    contrast: float = 0.0
    saturation: float = 0.0
    flip_h: float = 0.0
    flip_v: float = 0.0
    rotation: float = 0.0
    translate: float = 0.0
    scale: float = 0.0

    def validate(self) -> None:
        for name in ("brightness", "contrast", "saturation", "rotation", "translate", "scale"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("flip_h", "flip_v"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"{name} must be a probability")

    def is_identity(self) -> bool:
        return all(getattr(self, f) == 0.0 for f in
                   ("brightness", "contrast", "saturation", "flip_h", "flip_v",
                    "rotation", "translate", "scale"))


class Dataset:
    """An ordered collection of Samples from a single domain."""

    def __init__(self, domain_id: str, samples: list[Sample]):
        self.domain_id = domain_id
        self.samples = list(samples)
        self._by_class: dict[int, list[int]] = {}
        for i, s in enumerate(self.samples):
            self._by_class.setdefault(s.class_id, []).append(i)

    def __len__(self) -> int:
        return len(self.samples)

    def classes(self) -> list[int]:
        return sorted(self._by_class)

    def class_indices(self, class_id: int) -> list[int]:
        return list(self._by_class.get(class_id, []))

    def samples_for_class(self, class_id: int) -> list[Sample]:
        return [self.samples[i] for i in self.class_indices(class_id)]
