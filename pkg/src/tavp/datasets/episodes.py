"""Episodic sampling and the heterogenization acceptance test."""

from __future__ import annotations

import numpy as np

from .types import Dataset, Episode

__all__ = ["EpisodeSamplingError", "sample_episode", "accept_episode", "split_classes"]


class EpisodeSamplingError(RuntimeError):
    """Raised when a class cannot supply shot+1 distinct samples."""


def sample_episode(dataset: Dataset, shot: int, seed: int,
                   class_id: int | None = None) -> Episode:
    """Draw K distinct supports plus one distinct query of a single class.

    The class is chosen uniformly unless class_id pins it. Deterministic in
    (dataset order, shot, seed, class_id).
    """
    if shot < 1:
        raise ValueError("shot must be >= 1")
    rng = np.random.default_rng(seed)
    classes = dataset.classes()
    if not classes:
        raise EpisodeSamplingError("dataset has no classes")
    chosen = int(rng.choice(classes)) if class_id is None else class_id
    indices = dataset.class_indices(chosen)
    if len(indices) < shot + 1:
        raise EpisodeSamplingError(
            f"class {chosen} has {len(indices)} samples, needs {shot + 1}")
    picked = rng.choice(len(indices), size=shot + 1, replace=False)
    samples = [dataset.samples[indices[i]] for i in picked]
    return Episode(support=samples[:shot], query=samples[shot], class_id=chosen)


def accept_episode(episode: Episode, tau_min: float, tau_max: float) -> bool:
    """True iff every support and the query have fg ratio within [tau_min, tau_max]."""
    if not (0.0 <= tau_min < tau_max <= 1.0):
        raise ValueError("need 0 <= tau_min < tau_max <= 1")
    ratios = [s.foreground_ratio() for s in episode.support]
    ratios.append(episode.query.foreground_ratio())
    return all(tau_min <= r <= tau_max for r in ratios)


def split_classes(dataset: Dataset, n_folds: int, fold: int) -> tuple[Dataset, Dataset]:
    """Deterministic class-level fold: returns (train, validation) datasets.

    Classes at position == fold (mod n_folds) in sorted class order form the
    validation half; sample order within each half is preserved.
    """
    if n_folds < 2:
        raise ValueError("n_folds must be >= 2")
    if not 0 <= fold < n_folds:
        raise ValueError(f"fold must lie in [0, {n_folds})")
    classes = dataset.classes()
    held = {c for i, c in enumerate(classes) if i % n_folds == fold}
    train = [s for s in dataset.samples if s.class_id not in held]
    val = [s for s in dataset.samples if s.class_id in held]
    return Dataset(dataset.domain_id, train), Dataset(dataset.domain_id, val)
