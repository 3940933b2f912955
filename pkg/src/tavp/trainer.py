"""Episodic trainer: frozen backbone, namespace-confined updates, checkpoints.

Episode sampling is fully deterministic: every (step, retry) pair derives its
own seed from the run seed via numpy SeedSequence spawn keys, so two runs
with the same config produce bitwise-identical parameter trajectories and
metric histories. Episodes whose foreground ratio leaves the acceptance band
are resampled up to max_resample times, then accepted with a flag.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .backbone import assert_frozen, freeze
from .datasets import Dataset, Episode, accept_episode, sample_episode
from .imageops import resize_nearest
from .losses import LossConfig, dem_loss, seg_loss, total_loss
from .model import NAMESPACES, Segmenter
from .nn import Adam, Tensor

__all__ = [
    "TrainConfig",
    "StepMetrics",
    "Checkpoint",
    "TrainingDivergedError",
    "train",
    "training_step",
    "adapt",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_digest",
]

CHECKPOINT_VERSION = 1
TRAINABLE_CHOICES = ("cdtap", "mff", "decoder_heads")


class TrainingDivergedError(RuntimeError):
    """Loss went non-finite; carries the offending episode seed."""

    def __init__(self, message: str, episode_seed: int):
        super().__init__(message)
        self.episode_seed = episode_seed


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 80
    episodes_per_epoch: int = 10
    shot: int = 1
    learning_rate: float = 1e-4
    seed: int = 0
    trainable_namespaces: tuple = TRAINABLE_CHOICES
    tau_min: float = 0.02
    tau_max: float = 0.98
    dice_weight: float = 0.5
    max_resample: int = 20
    target_shots_for_adaptation: int = 1

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.episodes_per_epoch < 0:
            raise ValueError("episodes_per_epoch must be >= 0")
        if self.shot < 1 or self.target_shots_for_adaptation < 1:
            raise ValueError("shot counts must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not self.trainable_namespaces:
            raise ValueError("at least one trainable namespace is required")
        bad = set(self.trainable_namespaces) - set(TRAINABLE_CHOICES)
        if bad:
            raise ValueError(
                f"trainable_namespaces may only contain {TRAINABLE_CHOICES}, got {sorted(bad)}")
        if not (0.0 <= self.tau_min < self.tau_max <= 1.0):
            raise ValueError("need 0 <= tau_min < tau_max <= 1")
        if self.max_resample < 0:
            raise ValueError("max_resample must be >= 0")
        LossConfig(dice_weight=self.dice_weight).validate()

    def loss_config(self) -> LossConfig:
        return LossConfig(dice_weight=self.dice_weight)


@dataclass
class StepMetrics:
    step: int
    epoch: int
    seg: float
    dem: float
    total: float
    grad_norms: dict
    episode_seed: int
    retries: int
    accept_flagged: bool
    fallback_flags: dict

    def record(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class Checkpoint:
    params: dict            # name -> array snapshot (all namespaces)
    opt_state: dict
    train_config: dict
    model_config: dict
    metrics: list = field(default_factory=list)
    global_step: int = 0
    version: int = CHECKPOINT_VERSION

    @property
    def digest(self) -> str:
        return _params_digest(self.params)


def _params_digest(params: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name]).tobytes())
    return h.hexdigest()[:16]


def checkpoint_digest(checkpoint: Checkpoint) -> str:
    return checkpoint.digest


def _episode_seed(run_seed: int, step: int, retry: int) -> tuple[int, int]:
    """Deterministic (domain draw, episode seed) for one sampling attempt."""
    ss = np.random.SeedSequence(entropy=run_seed, spawn_key=(step, retry))
    u_domain, u_episode = (int(x) for x in ss.generate_state(2))
    return u_domain, u_episode


def _sample_accepted(datasets: list[Dataset], config: TrainConfig,
                     step: int) -> tuple[Episode, int, int, bool]:
    """Resample until the fg-ratio band accepts, bounded; then accept flagged."""
    episode, seed = None, 0
    for retry in range(config.max_resample + 1):
        u_domain, seed = _episode_seed(config.seed, step, retry)
        dataset = datasets[u_domain % len(datasets)]
        episode = sample_episode(dataset, config.shot, seed)
        if accept_episode(episode, config.tau_min, config.tau_max):
            return episode, seed, retry, False
    return episode, seed, config.max_resample, True


def _loss_mask(episode: Episode, logits_shape: tuple) -> np.ndarray:
    mask = episode.query.mask.astype(np.float64)
    if mask.shape != tuple(logits_shape):
        mask = resize_nearest(mask, tuple(logits_shape)).astype(np.float64)
    return mask


def training_step(model: Segmenter, episode: Episode, config: TrainConfig,
                  optimizer: Adam, *, step: int = 0, epoch: int = 0,
                  episode_seed: int = 0, retries: int = 0,
                  accept_flagged: bool = False) -> StepMetrics:
    """One optimizer update on one episode; backbone gradients stay absent."""
    model.zero_grad()
    out = model.forward_episode(episode)
    mask = _loss_mask(episode, out.logits.logits.shape)
    seg = seg_loss(out.logits.logits, mask, config.loss_config())
    if out.dense is not None:
        dem = dem_loss(out.dense.Z[0], mask)
    else:
        dem = Tensor(np.asarray(0.0))  # dense path disabled: no dem supervision
    total = total_loss(seg, dem)
    total_value = float(total.data)
    if not np.isfinite(total_value):
        raise TrainingDivergedError(
            f"non-finite loss {total_value} at step {step} (episode seed {episode_seed})",
            episode_seed)
    total.backward()
    grad_norms = {}
    for ns, group in model.namespace_parameters().items():
        sq = 0.0
        for p in group.values():
            if p.grad is not None:
                sq += float((p.grad * p.grad).sum())
        grad_norms[ns] = float(np.sqrt(sq))
    optimizer.step()
    return StepMetrics(step=step, epoch=epoch, seg=float(seg.data),
                       dem=float(dem.data), total=total_value,
                       grad_norms=grad_norms, episode_seed=episode_seed,
                       retries=retries, accept_flagged=accept_flagged,
                       fallback_flags=dict(out.flags))


def _snapshot_params(model: Segmenter) -> dict:
    return {name: p.data.copy() for name, p in model.named_parameters()}


def train(model: Segmenter, datasets: list[Dataset], config: TrainConfig,
          *, metrics_path=None, resume: "Checkpoint | str | None" = None) -> Checkpoint:
    """Run the episodic loop and return a checkpoint with the full history."""
    config.validate()
    if not datasets:
        raise ValueError("need at least one training dataset")
    metrics: list = []
    start_step = 0
    optimizer = Adam(model.trainable_parameters(config.trainable_namespaces),
                     lr=config.learning_rate)
    if resume is not None:
        ckpt = load_checkpoint(resume) if not isinstance(resume, Checkpoint) else resume
        model.load_state_dict(ckpt.params)
        optimizer.load_state_dict(ckpt.opt_state)
        metrics = list(ckpt.metrics)
        start_step = ckpt.global_step
    backbone_handle = freeze(model.backbone)

    log_file = open(metrics_path, "a") if metrics_path else None
    try:
        step = start_step
        for epoch in range(config.epochs):
            for _ in range(config.episodes_per_epoch):
                episode, seed, retries, flagged = _sample_accepted(datasets, config, step)
                m = training_step(model, episode, config, optimizer, step=step,
                                  epoch=epoch, episode_seed=seed, retries=retries,
                                  accept_flagged=flagged)
                metrics.append(m.record())
                if log_file:
                    log_file.write(json.dumps(m.record(), sort_keys=True) + "\n")
                step += 1
    finally:
        if log_file:
            log_file.close()
    assert_frozen(backbone_handle)
    return Checkpoint(
        params=_snapshot_params(model),
        opt_state=optimizer.state_dict(),
        train_config=_jsonable(dataclasses.asdict(config)),
        model_config=_jsonable(dataclasses.asdict(model.config)),
        metrics=metrics,
        global_step=step,
    )


def _jsonable(obj):
    """Normalize tuples to lists so in-memory and reloaded configs compare equal."""
    return json.loads(json.dumps(obj))


def adapt(model: Segmenter, target_dataset: Dataset, config: TrainConfig,
          steps: int, *, metrics_path=None) -> Checkpoint:
    """Fine-tune on target-domain episodes at the configured adaptation shot."""
    adapted = dataclasses.replace(config, epochs=1, episodes_per_epoch=steps,
                                  shot=config.target_shots_for_adaptation)
    return train(model, [target_dataset], adapted, metrics_path=metrics_path)


# ---------------------------------------------------------------------------
# checkpoint files (single .npz with a JSON meta blob)


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    arrays = {f"param/{name}": arr for name, arr in checkpoint.params.items()}
    for key, value in checkpoint.opt_state.items():
        arrays[f"opt/{key}"] = np.asarray(value)
    meta = {
        "version": checkpoint.version,
        "train_config": checkpoint.train_config,
        "model_config": checkpoint.model_config,
        "metrics": checkpoint.metrics,
        "global_step": checkpoint.global_step,
        "digest": checkpoint.digest,
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(),
                                   dtype=np.uint8)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path) -> Checkpoint:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(bytes(data["meta"].tolist()).decode())
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        params = {key[len("param/"):]: data[key] for key in data.files
                  if key.startswith("param/")}
        opt_state = {key[len("opt/"):]: data[key] for key in data.files
                     if key.startswith("opt/")}
    opt_state = {k: (int(v) if v.ndim == 0 else v) for k, v in opt_state.items()}
    ckpt = Checkpoint(params=params, opt_state=opt_state,
                      train_config=meta["train_config"],
                      model_config=meta["model_config"],
                      metrics=meta["metrics"], global_step=meta["global_step"],
                      version=meta["version"])
    if ckpt.digest != meta["digest"]:
        raise ValueError("checkpoint digest mismatch; file corrupted")
    return ckpt
