"""Dataset-on-disk format.

Layout: <root>/<domain_id>/class_<k>/sample_<i>.png plus a sibling
sample_<i>_mask.png (single-channel, values {0,255}). A manifest at the tree
root lists one image per line as `relative_path,class_id,domain_id`; mask
paths are derived from the image path by the _mask suffix.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image

from .types import Dataset, Sample

__all__ = ["save_datasets", "load_datasets", "load_dataset", "MANIFEST_NAME"]

MANIFEST_NAME = "manifest.txt"


def _write_png(path: Path, arr: np.ndarray) -> None:
    Image.fromarray(arr).save(path, format="PNG")


def save_datasets(datasets: list[Dataset], root: str | os.PathLike) -> Path:
    """Write PNGs and the manifest; returns the manifest path."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    for ds in datasets:
        per_class_counter: dict[int, int] = {}
        for sample in ds.samples:
            idx = per_class_counter.get(sample.class_id, 0)
            per_class_counter[sample.class_id] = idx + 1
            rel = Path(ds.domain_id) / f"class_{sample.class_id:02d}" / f"sample_{idx:04d}.png"
            full = root / rel
            full.parent.mkdir(parents=True, exist_ok=True)
            img8 = np.rint(np.clip(sample.image, 0, 1) * 255).astype(np.uint8)
            _write_png(full, img8)
            mask8 = (sample.mask.astype(np.uint8) * 255)
            _write_png(full.with_name(full.stem + "_mask.png"), mask8)
            lines.append(f"{rel.as_posix()},{sample.class_id},{ds.domain_id}")
    manifest = root / MANIFEST_NAME
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def load_datasets(root: str | os.PathLike) -> list[Dataset]:
    """Read every domain listed in the manifest, preserving manifest order."""
    root = Path(root)
    manifest = root / MANIFEST_NAME
    if not manifest.exists():
        raise FileNotFoundError(f"no {MANIFEST_NAME} under {root}")
    by_domain: dict[str, list[Sample]] = {}
    for line in manifest.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        rel, class_id, domain_id = line.split(",")
        img_path = root / rel
        mask_path = img_path.with_name(img_path.stem + "_mask.png")
        img = np.asarray(Image.open(img_path), dtype=np.float64) / 255.0
        mask8 = np.asarray(Image.open(mask_path))
        sample = Sample(image=img, mask=(mask8 > 127).astype(np.uint8),
                        class_id=int(class_id), domain_id=domain_id)
        by_domain.setdefault(domain_id, []).append(sample)
    return [Dataset(d, samples) for d, samples in by_domain.items()]


def load_dataset(root: str | os.PathLike, domain_id: str) -> Dataset:
    for ds in load_datasets(root):
        if ds.domain_id == domain_id:
            return ds
    raise KeyError(f"domain {domain_id!r} not found under {root}")
