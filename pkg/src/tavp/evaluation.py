"""mIoU evaluation, per-domain/shot report tables, qualitative overlays.

Episode seeds are derived from (run seed, domain id, shot, episode index)
alone, so a domain's row is identical whether it is evaluated standalone or
as part of a multi-domain suite.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .datasets import Dataset, Episode, sample_episode

__all__ = [
    "miou",
    "EvalRow",
    "EvalReport",
    "evaluate",
    "evaluate_suite",
    "episode_seed",
    "render_overlay",
    "OVERLAY_ALPHA",
]

OVERLAY_ALPHA = 0.5
_RED = np.array([1.0, 0.0, 0.0])
_GREEN = np.array([0.0, 1.0, 0.0])
_BLUE = np.array([0.0, 0.0, 1.0])


def miou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean of foreground and background IoU; empty-vs-empty counts as 1."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    p = pred.astype(bool)
    g = gt.astype(bool)
    ious = []
    for pc, gc in ((p, g), (~p, ~g)):
        union = (pc | gc).sum()
        ious.append(1.0 if union == 0 else float((pc & gc).sum()) / float(union))
    return float(np.mean(ious))


@dataclass
class EvalRow:
    domain: str
    shot: int
    miou: float
    episodes: int


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    seed: int = 0
    checkpoint_id: str = "live"

    def shots(self) -> list[int]:
        return sorted({r.shot for r in self.rows})

    def domains(self) -> list[str]:
        seen: list[str] = []
        for r in self.rows:
            if r.domain not in seen:
                seen.append(r.domain)
        return seen

    def averages(self) -> dict[int, float]:
        """Arithmetic mean over domains, per shot setting."""
        out = {}
        for shot in self.shots():
            vals = [r.miou for r in self.rows if r.shot == shot]
            out[shot] = float(np.mean(vals))
        return out

    def row(self, domain: str, shot: int) -> EvalRow:
        for r in self.rows:
            if r.domain == domain and r.shot == shot:
                return r
        raise KeyError((domain, shot))

    def to_csv(self) -> str:
        lines = ["domain,shot,miou,episodes"]
        for r in self.rows:
            lines.append(f"{r.domain},{r.shot},{r.miou!r},{r.episodes}")
        for shot, avg in self.averages().items():
            n = sum(r.episodes for r in self.rows if r.shot == shot)
            lines.append(f"average,{shot},{avg!r},{n}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        shots = self.shots()
        width = max([len(d) for d in self.domains()] + [len("average")]) + 2
        header = "domain".ljust(width) + "".join(f"{s}-shot".rjust(10) for s in shots)
        lines = [header, "-" * len(header)]
        for domain in self.domains():
            cells = []
            for shot in shots:
                try:
                    cells.append(f"{100.0 * self.row(domain, shot).miou:10.2f}")
                except KeyError:
                    cells.append(" " * 10)
            lines.append(domain.ljust(width) + "".join(cells))
        avgs = self.averages()
        lines.append("average".ljust(width)
                     + "".join(f"{100.0 * avgs[s]:10.2f}" for s in shots))
        lines.append(f"seed={self.seed} checkpoint={self.checkpoint_id}")
        return "\n".join(lines) + "\n"

    def save(self, csv_path, text_path=None) -> None:
        with open(csv_path, "w") as f:
            f.write(self.to_csv())
        if text_path is not None:
            with open(text_path, "w") as f:
                f.write(self.to_text())


def episode_seed(seed: int, domain_id: str, shot: int, index: int) -> int:
    """Stable per-episode seed independent of suite composition."""
    domain_key = int.from_bytes(
        hashlib.sha256(domain_id.encode()).digest()[:4], "big")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(domain_key, shot, index))
    return int(ss.generate_state(1)[0])


def _domain_row(model, dataset: Dataset, shot: int, n_episodes: int,
                seed: int) -> EvalRow:
    scores = []
    for i in range(n_episodes):
        episode = sample_episode(dataset, shot, episode_seed(seed, dataset.domain_id,
                                                             shot, i))
        pred = model.predict_episode(episode)
        scores.append(miou(pred, episode.query.mask))
    return EvalRow(domain=dataset.domain_id, shot=shot,
                   miou=float(np.mean(scores)), episodes=n_episodes)


def evaluate(model, dataset: Dataset, shot: int, n_episodes: int, seed: int,
             checkpoint_id: str = "live") -> EvalReport:
    """Evaluate one domain at one shot setting."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    row = _domain_row(model, dataset, shot, n_episodes, seed)
    return EvalReport(rows=[row], seed=seed, checkpoint_id=checkpoint_id)


def evaluate_suite(model, datasets: list[Dataset], shots, n_episodes: int,
                   seed: int, checkpoint_id: str = "live") -> EvalReport:
    """Evaluate every (domain, shot) pair into one report."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    if not datasets:
        raise ValueError("need at least one dataset")
    rows = [_domain_row(model, ds, shot, n_episodes, seed)
            for ds in datasets for shot in shots]
    return EvalReport(rows=rows, seed=seed, checkpoint_id=checkpoint_id)


def _blend(image: np.ndarray, mask: np.ndarray, color: np.ndarray,
           alpha: float = OVERLAY_ALPHA) -> np.ndarray:
    out = image.copy()
    m = np.asarray(mask).astype(bool)
    out[m] = (1.0 - alpha) * image[m] + alpha * color
    return out


def render_overlay(episode: Episode, prediction: np.ndarray, path) -> None:
    """Side-by-side panels: supports with red gt, query with green gt + blue pred."""
    if prediction.shape != episode.query.mask.shape:
        raise ValueError("prediction and query mask shapes differ")
    panels = [_blend(s.image, s.mask, _RED) for s in episode.support]
    query = _blend(episode.query.image, episode.query.mask, _GREEN)
    query = _blend(query, prediction, _BLUE)
    panels.append(query)
    canvas = np.concatenate(panels, axis=1)
    data = np.clip(np.round(canvas * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path, format="PNG")
