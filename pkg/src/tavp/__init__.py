"""Few-shot segmentation across domain shifts with a frozen encoder.

The pipeline: a frozen multi-level encoder feeds a linear feature-fusion
stage; support/query prototypes steer a learnable anchor transform and a
dense prompt network; a mostly frozen two-way attention decoder turns the
fused features and prompts into a query mask. Training touches only the
small adapter namespaces, never the encoder.
"""

from .backbone import Backbone, EncoderConfig, FrozenParameterError, assert_frozen, freeze
from .cdtap import (
    CdtapModule,
    CycleMatchResult,
    DegenerateMask,
    DensePromptNet,
    Prototype,
    apply_transform,
    cycle_match,
    masked_prototype,
    normalize_pair,
    solve_transform,
)
from .config import (
    ConfigError,
    EvalConfig,
    RunConfig,
    default_run_config,
    dump_config,
    load_config,
    save_config,
)
from .datasets import (
    AugmentPolicy,
    Dataset,
    DomainSpec,
    Episode,
    Sample,
    accept_episode,
    augment,
    domain_seed,
    generate_synthetic_dataset,
    resize_benchmark,
    sample_episode,
    split_classes,
    tile_deepglobe,
    tile_grid,
)
from .decoder import MaskDecoder, TokenSet, init_tokens
from .evaluation import EvalReport, episode_seed, evaluate, evaluate_suite, miou, render_overlay
from .losses import LossConfig, bce_loss, ce_loss, dem_loss, dice_loss, seg_loss, total_loss
from .mff import FeatureFusion
from .model import ModelConfig, Segmenter
from .trainer import (
    Checkpoint,
    TrainConfig,
    TrainingDivergedError,
    adapt,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # data
    "DomainSpec", "Sample", "Episode", "Dataset", "AugmentPolicy",
    "generate_synthetic_dataset", "sample_episode", "accept_episode",
    "augment", "split_classes", "domain_seed",
    "tile_grid", "tile_deepglobe", "resize_benchmark",
    # encoder
    "EncoderConfig", "Backbone", "freeze", "assert_frozen", "FrozenParameterError",
    # fusion and prompts
    "FeatureFusion", "CdtapModule", "DensePromptNet", "Prototype",
    "CycleMatchResult", "DegenerateMask", "masked_prototype", "normalize_pair",
    "cycle_match", "solve_transform", "apply_transform",
    # decoding
    "MaskDecoder", "TokenSet", "init_tokens",
    # losses
    "LossConfig", "dice_loss", "bce_loss", "ce_loss", "seg_loss", "dem_loss",
    "total_loss",
    # model
    "ModelConfig", "Segmenter",
    # training
    "TrainConfig", "Checkpoint", "TrainingDivergedError", "train", "adapt",
    "save_checkpoint", "load_checkpoint",
    # evaluation
    "EvalReport", "miou", "evaluate", "evaluate_suite", "render_overlay",
    "episode_seed",
    # config
    "RunConfig", "EvalConfig", "ConfigError", "default_run_config",
    "load_config", "dump_config", "save_config",
]
