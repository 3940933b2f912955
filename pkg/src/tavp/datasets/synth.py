"""Synthetic domain generator.

Each domain renders one shape family with a fixed texture and palette. A
class within a domain owns a disjoint size band of the domain's
fg_scale_range plus a base color, so class identity is a (family, size,
color) signature. Every image also contains one unlabeled distractor shape
drawn from a different class signature, placed disjointly from the labeled
shape: a query image alone is therefore ambiguous about which object is the
target, and support conditioning carries real information.

Masks are the analytic rasterization of the labeled shape only, evaluated
at integer pixel centers.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from .types import Dataset, DomainSpec, Sample

__all__ = ["generate_synthetic_dataset", "class_size_band", "domain_seed"]


def domain_seed(seed: int, domain_id: str) -> int:
    """Per-domain generation seed, stable under domain-list reordering."""
    key = int.from_bytes(hashlib.sha256(domain_id.encode()).digest()[:4], "big")
    return int(np.random.SeedSequence(entropy=seed, spawn_key=(key,)).generate_state(1)[0])

log = logging.getLogger(__name__)

# rasterized foreground ratio must stay inside the class band; margin keeps
# the target draw away from the band edges so quantization noise fits
_BAND_MARGIN = 0.1
_MAX_SHAPE_TRIES = 60
_MIN_FG_PIXELS = 4


@dataclass(frozen=True)
class _Shape:
    family: str
    params: dict

    def membership(self, canvas: int) -> np.ndarray:
        yy, xx = np.mgrid[0:canvas, 0:canvas].astype(np.float64)
        p = self.params
        dx = xx - p["cx"]
        dy = yy - p["cy"]
        if self.family == "ellipse":
            ct, st = np.cos(p["theta"]), np.sin(p["theta"])
            u = dx * ct + dy * st
            v = -dx * st + dy * ct
            return (u / p["a"]) ** 2 + (v / p["b"]) ** 2 <= 1.0
        if self.family == "rectangle":
            ct, st = np.cos(p["theta"]), np.sin(p["theta"])
            u = dx * ct + dy * st
            v = -dx * st + dy * ct
            return (np.abs(u) <= p["hw"]) & (np.abs(v) <= p["hh"])
        if self.family == "polygon":
            verts = p["vertices"]  # (K, 2) in (x, y), counter-clockwise
            inside = np.ones_like(dx, dtype=bool)
            k = len(verts)
            for i in range(k):
                x0, y0 = verts[i]
                x1, y1 = verts[(i + 1) % k]
                cross = (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0)
                inside &= cross >= 0.0
            return inside
        if self.family == "blob":
            r2 = dx * dx + dy * dy
            phi = np.arctan2(dy, dx)
            r = p["r0"] * (1.0 + sum(a * np.cos(k * phi + psi)
                                     for k, a, psi in p["harmonics"]))
            return r2 <= r * r
        raise ValueError(f"unknown shape family {self.family!r}")


def class_size_band(spec: DomainSpec, n_classes: int, class_id: int) -> tuple[float, float]:
    """Disjoint per-class sub-interval of the domain's fg_scale_range."""
    lo, hi = spec.fg_scale_range
    width = (hi - lo) / n_classes
    return lo + class_id * width, lo + (class_id + 1) * width


def _class_color(spec: DomainSpec, n_classes: int, class_id: int) -> np.ndarray:
    if spec.palette == "grayscale":
        g = 0.55 + 0.4 * class_id / max(1, n_classes - 1)
        return np.array([g, g, g])
    hue = class_id / n_classes
    return _hsv_to_rgb(hue, 0.75, 0.9)


def _hsv_to_rgb(h: float, s: float, v: float) -> np.ndarray:
    i = int(h * 6.0) % 6
    f = h * 6.0 - int(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    rgb = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, t)][i]
    return np.array(rgb)


def _sample_shape(spec: DomainSpec, target_area: float, rng: np.random.Generator) -> _Shape:
    canvas = spec.canvas_size
    cx = rng.uniform(0.3, 0.7) * canvas
    cy = rng.uniform(0.3, 0.7) * canvas
    fam = spec.shape_family
    if fam == "ellipse":
        ecc = rng.uniform(0.5, 1.0)  # b/a ratio
        a = np.sqrt(target_area / (np.pi * ecc))
        return _Shape(fam, {"cx": cx, "cy": cy, "a": a, "b": a * ecc,
                            "theta": rng.uniform(0, np.pi)})
    if fam == "rectangle":
        aspect = rng.uniform(0.4, 1.0)
        hw = 0.5 * np.sqrt(target_area / aspect)
        return _Shape(fam, {"cx": cx, "cy": cy, "hw": hw, "hh": hw * aspect,
                            "theta": rng.uniform(0, np.pi)})
    if fam == "polygon":
        k = int(rng.integers(5, 9))
        angles = np.sort(rng.uniform(0, 2 * np.pi, size=k))
        # reject nearly-duplicate angles for well-conditioned polygons
        while np.min(np.diff(np.concatenate([angles, [angles[0] + 2 * np.pi]]))) < 0.15:
            angles = np.sort(rng.uniform(0, 2 * np.pi, size=k))
        radii = rng.uniform(0.7, 1.0, size=k)
        xs = radii * np.cos(angles)
        ys = radii * np.sin(angles)
        area = 0.5 * np.abs(np.dot(xs, np.roll(ys, -1)) - np.dot(ys, np.roll(xs, -1)))
        scale = np.sqrt(target_area / area)
        verts = np.stack([cx + xs * scale, cy + ys * scale], axis=1)
        return _Shape(fam, {"cx": cx, "cy": cy, "vertices": verts})
    if fam == "blob":
        harmonics = []
        for k in (2, 3, 4):
            harmonics.append((k, rng.uniform(0.03, 0.12), rng.uniform(0, 2 * np.pi)))
        # area of r(phi) = r0 (1 + sum a_k cos(...)) is pi r0^2 (1 + sum a_k^2 / 2)
        factor = 1.0 + 0.5 * sum(a * a for _, a, _ in harmonics)
        r0 = np.sqrt(target_area / (np.pi * factor))
        return _Shape(fam, {"cx": cx, "cy": cy, "r0": r0, "harmonics": harmonics})
    raise ValueError(f"unknown shape family {fam!r}")


def _rasterize_in_band(spec: DomainSpec, band: tuple[float, float],
                       rng: np.random.Generator) -> np.ndarray:
    """Draw a shape whose rasterized fg ratio lands inside `band`."""
    canvas = spec.canvas_size
    lo, hi = band
    margin = _BAND_MARGIN * (hi - lo)
    for _ in range(_MAX_SHAPE_TRIES):
        frac = rng.uniform(lo + margin, hi - margin)
        shape = _sample_shape(spec, frac * canvas * canvas, rng)
        mask = shape.membership(canvas)
        ratio = mask.mean()
        if lo <= ratio <= hi and mask.sum() >= _MIN_FG_PIXELS and not mask.all():
            return mask
    raise RuntimeError(
        f"could not rasterize a shape with fg ratio in [{lo:.4f}, {hi:.4f}] "
        f"on a {canvas}px canvas after {_MAX_SHAPE_TRIES} tries")


def _background(spec: DomainSpec, rng: np.random.Generator) -> np.ndarray:
    canvas = spec.canvas_size
    if spec.palette == "grayscale":
        base = np.full(3, rng.uniform(0.08, 0.3))
        alt = np.full(3, rng.uniform(0.3, 0.45))
    else:
        base = rng.uniform(0.05, 0.35, size=3)
        alt = rng.uniform(0.2, 0.5, size=3)
    img = np.broadcast_to(base, (canvas, canvas, 3)).copy()
    if spec.texture == "stripes":
        yy, xx = np.mgrid[0:canvas, 0:canvas].astype(np.float64)
        fx, fy = rng.integers(1, 5), rng.integers(1, 5)
        phase = rng.uniform(0, 2 * np.pi)
        wave = 0.5 + 0.5 * np.sin(2 * np.pi * (fx * xx + fy * yy) / canvas + phase)
        img = base + (alt - base) * wave[..., None]
    return img


def _render_sample(spec: DomainSpec, n_classes: int, class_id: int,
                   rng: np.random.Generator) -> Sample:
    canvas = spec.canvas_size
    mask = _rasterize_in_band(spec, class_size_band(spec, n_classes, class_id), rng)

    # distractor: another class signature, placed disjointly so neither shape
    # is cut by the other; an occluded shape would betray the labeled one
    others = [c for c in range(n_classes) if c != class_id]
    dis_class = int(rng.choice(others))
    dis_band = class_size_band(spec, n_classes, dis_class)
    dis_mask = _rasterize_in_band(spec, dis_band, rng)
    for _ in range(_MAX_SHAPE_TRIES):
        if not (dis_mask & mask).any():
            break
        dis_mask = _rasterize_in_band(spec, dis_band, rng)
    else:
        log.debug("accepting an overlapping distractor for domain %s",
                  spec.domain_id)

    img = _background(spec, rng)
    dis_color = np.clip(_class_color(spec, n_classes, dis_class) + rng.uniform(-0.05, 0.05, size=3), 0, 1)
    fg_color = np.clip(_class_color(spec, n_classes, class_id) + rng.uniform(-0.05, 0.05, size=3), 0, 1)
    if spec.palette == "grayscale":
        dis_color = np.full(3, dis_color.mean())
        fg_color = np.full(3, fg_color.mean())
    img[dis_mask] = dis_color
    img[mask] = fg_color
    if spec.texture == "noise" and spec.noise_std > 0:
        noise = rng.normal(0.0, spec.noise_std, size=(canvas, canvas, 1 if spec.palette == "grayscale" else 3))
        img = img + noise
    img = np.clip(img, 0.0, 1.0)
    if spec.palette == "grayscale":
        gray = img.mean(axis=2, keepdims=True)
        img = np.repeat(gray, 3, axis=2)
    sample = Sample(image=img, mask=mask.astype(np.uint8), class_id=class_id,
                    domain_id=spec.domain_id)
    sample.validate()
    return sample


def generate_synthetic_dataset(spec: DomainSpec, n_classes: int, n_per_class: int,
                               seed: int) -> Dataset:
    """Deterministically render n_classes x n_per_class samples for one domain."""
    spec.validate()
    if n_classes < 2:
        raise ValueError("n_classes must be >= 2")
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    lo, _ = spec.fg_scale_range
    if lo * spec.canvas_size ** 2 < _MIN_FG_PIXELS:
        raise ValueError(
            f"canvas {spec.canvas_size}px too small to render fg_scale_range "
            f"{spec.fg_scale_range} (fewer than {_MIN_FG_PIXELS} fg pixels)")
    rng = np.random.default_rng(seed)
    samples = []
    for class_id in range(n_classes):
        for _ in range(n_per_class):
            samples.append(_render_sample(spec, n_classes, class_id, rng))
    log.debug("generated %d samples for domain %s", len(samples), spec.domain_id)
    return Dataset(spec.domain_id, samples)
