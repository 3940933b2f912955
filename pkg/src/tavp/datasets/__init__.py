"""Synthetic domain generation, preprocessing, augmentation, and episodic sampling."""

from .augment import augment
from .episodes import EpisodeSamplingError, accept_episode, sample_episode, split_classes
from .preprocess import (
    DEEPGLOBE_INPUT,
    DEEPGLOBE_TILE,
    DEEPGLOBE_UNKNOWN,
    resize_benchmark,
    tile_deepglobe,
    tile_grid,
)
from .store import MANIFEST_NAME, load_dataset, load_datasets, save_datasets
from .synth import class_size_band, domain_seed, generate_synthetic_dataset
from .types import (
    PALETTES,
    SHAPE_FAMILIES,
    TEXTURES,
    AugmentPolicy,
    Dataset,
    DomainSpec,
    Episode,
    Sample,
)

__all__ = [
    "DomainSpec",
    "Sample",
    "Episode",
    "AugmentPolicy",
    "Dataset",
    "SHAPE_FAMILIES",
    "TEXTURES",
    "PALETTES",
    "generate_synthetic_dataset",
    "class_size_band",
    "domain_seed",
    "sample_episode",
    "accept_episode",
    "split_classes",
    "EpisodeSamplingError",
    "augment",
    "tile_grid",
    "tile_deepglobe",
    "resize_benchmark",
    "DEEPGLOBE_INPUT",
    "DEEPGLOBE_TILE",
    "DEEPGLOBE_UNKNOWN",
    "save_datasets",
    "load_datasets",
    "load_dataset",
    "MANIFEST_NAME",
]
