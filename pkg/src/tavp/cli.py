"""Command-line entry point: gen | preprocess | train | eval | viz | config.

Output root resolution: --out flag, else the TAVP_OUT environment variable,
else the config's out_dir. Every subcommand exits nonzero on a validated
error and zero otherwise. --seed overrides both the run seed and the
training seed so a single flag pins the whole pipeline.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .config import (
    RunConfig,
    default_run_config,
    dump_config,
    load_config,
    model_config_from_dict,
    save_config,
)
from .datasets import (
    Dataset,
    Sample,
    domain_seed,
    generate_synthetic_dataset,
    resize_benchmark,
    sample_episode,
    save_datasets,
    split_classes,
    tile_deepglobe,
)
from .evaluation import episode_seed, evaluate_suite, render_overlay
from .model import Segmenter
from .trainer import load_checkpoint, save_checkpoint, train

__all__ = ["main"]

BENCHMARK_TARGETS = {"isic": 512, "chestx": 1024}


class _OracleModel:
    """Stand-in that predicts the ground-truth query mask."""

    def predict_episode(self, episode):
        return episode.query.mask.astype(np.uint8)


def _resolve_out(args, config: RunConfig) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    env = os.environ.get("TAVP_OUT")
    if env:
        return Path(env)
    return Path(config.out_dir)


def _runtime_config(args) -> RunConfig:
    config = load_config(args.config) if getattr(args, "config", None) else default_run_config()
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(
            config, seed=args.seed,
            train=dataclasses.replace(config.train, seed=args.seed))
    model = config.model
    if getattr(args, "no_cdtap", False):
        model = dataclasses.replace(model, use_cdtap=False)
    if getattr(args, "no_mff", False):
        model = dataclasses.replace(model, use_mff=False)
    if getattr(args, "prompt_combine", None):
        model = dataclasses.replace(model, prompt_combine=args.prompt_combine)
    train_cfg = config.train
    if getattr(args, "shot", None) and args.command == "train":
        train_cfg = dataclasses.replace(train_cfg, shot=args.shot)
    config = dataclasses.replace(config, model=model, train=train_cfg)
    config.validate()
    return config


def _build_datasets(config: RunConfig, specs) -> list[Dataset]:
    return [generate_synthetic_dataset(spec, config.n_classes, config.n_per_class,
                                       seed=domain_seed(config.seed, spec.domain_id))
            for spec in specs]


def _load_model(args, config: RunConfig):
    """Returns (model, checkpoint_id); architecture comes from the checkpoint."""
    if getattr(args, "oracle", False):
        return _OracleModel(), "oracle"
    if not getattr(args, "checkpoint", None):
        raise ValueError(f"{args.command} requires --checkpoint PATH or --oracle")
    path = Path(args.checkpoint)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    ckpt = load_checkpoint(path)
    model = Segmenter(model_config_from_dict(ckpt.model_config), seed=config.seed)
    model.load_state_dict(ckpt.params)
    return model, ckpt.digest


# ---------------------------------------------------------------- subcommands


def cmd_gen(args) -> int:
    config = _runtime_config(args)
    out = _resolve_out(args, config) / "data"
    datasets = _build_datasets(config, config.domains)
    manifest = save_datasets(datasets, out)
    total = sum(len(d) for d in datasets)
    print(f"wrote {total} samples across {len(datasets)} domains")
    print(f"manifest: {manifest}")
    return 0


def _load_image(path: Path) -> np.ndarray:
    arr = np.asarray(Image.open(path), dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    return arr[:, :, :3]


def cmd_preprocess(args) -> int:
    config = _runtime_config(args)
    in_dir = Path(args.input)
    if not in_dir.is_dir():
        raise FileNotFoundError(f"input directory not found: {in_dir}")
    out = _resolve_out(args, config) / f"preprocessed_{args.benchmark}"
    samples: list[Sample] = []
    if args.benchmark == "deepglobe":
        label_paths = sorted(in_dir.glob("*_label.png"))
        if not label_paths:
            raise FileNotFoundError(f"no *_label.png records under {in_dir}")
        for label_path in label_paths:
            image_path = label_path.with_name(
                label_path.name.replace("_label.png", ".png"))
            if not image_path.exists():
                raise FileNotFoundError(f"missing image for {label_path}: {image_path}")
            image = _load_image(image_path)
            labels = np.asarray(Image.open(label_path))
            samples.extend(tile_deepglobe(image, labels))
    else:
        target = BENCHMARK_TARGETS[args.benchmark]
        mask_paths = sorted(in_dir.glob("*_mask.png"))
        if not mask_paths:
            raise FileNotFoundError(f"no *_mask.png records under {in_dir}")
        for mask_path in mask_paths:
            image_path = mask_path.with_name(mask_path.name.replace("_mask.png", ".png"))
            if not image_path.exists():
                raise FileNotFoundError(f"missing image for {mask_path}: {image_path}")
            mask = (np.asarray(Image.open(mask_path)) > 127).astype(np.uint8)
            if mask.ndim == 3:
                mask = mask[:, :, 0]
            raw = Sample(image=_load_image(image_path), mask=mask,
                         class_id=0, domain_id=args.benchmark)
            samples.append(resize_benchmark(raw, target))
    if not samples:
        raise ValueError(f"no usable samples produced from {in_dir} "
                         "(all tiles filtered?)")
    manifest = save_datasets([Dataset(args.benchmark, samples)], out)
    print(f"wrote {len(samples)} samples")
    print(f"manifest: {manifest}")
    return 0


def cmd_train(args) -> int:
    config = _runtime_config(args)
    out = _resolve_out(args, config)
    out.mkdir(parents=True, exist_ok=True)
    datasets = _build_datasets(config, config.train_domains())
    if config.fold is not None:
        datasets = [split_classes(ds, config.n_folds, config.fold)[0]
                    for ds in datasets]
    model = Segmenter(config.model, seed=config.seed)
    checkpoint = train(model, datasets, config.train,
                       metrics_path=out / "metrics.jsonl", resume=args.resume)
    ckpt_path = out / "checkpoint.npz"
    save_checkpoint(checkpoint, ckpt_path)
    save_config(config, out / "run_config.yaml")
    print(f"trained {checkpoint.global_step} steps "
          f"on domains {[d.domain_id for d in config.train_domains()]}")
    print(f"checkpoint: {ckpt_path}")
    print(f"digest: {checkpoint.digest}")
    return 0


def cmd_eval(args) -> int:
    config = _runtime_config(args)
    out = _resolve_out(args, config) / "eval"
    out.mkdir(parents=True, exist_ok=True)
    model, checkpoint_id = _load_model(args, config)
    shots = (args.shot,) if args.shot else tuple(int(s) for s in config.eval.shots)
    datasets = _build_datasets(config, config.domains)
    report = evaluate_suite(model, datasets, shots, config.eval.n_episodes,
                            config.seed, checkpoint_id)
    report.save(out / "report.csv", out / "report.txt")
    sys.stdout.write(report.to_text())
    print(f"report: {out / 'report.csv'}")
    return 0


def cmd_viz(args) -> int:
    config = _runtime_config(args)
    out = _resolve_out(args, config) / "overlays"
    out.mkdir(parents=True, exist_ok=True)
    model, _ = _load_model(args, config)
    specs = [d for d in config.domains
             if args.domain in (None, d.domain_id)]
    if not specs:
        known = [d.domain_id for d in config.domains]
        raise ValueError(f"unknown domain {args.domain!r}, config has {known}")
    shot = args.shot or 1
    count = 0
    for spec in specs:
        dataset = _build_datasets(config, [spec])[0]
        for i in range(args.episodes):
            episode = sample_episode(
                dataset, shot, episode_seed(config.seed, spec.domain_id, shot, i))
            prediction = model.predict_episode(episode)
            render_overlay(episode, prediction,
                           out / f"{spec.domain_id}_{shot}shot_{i:02d}.png")
            count += 1
    print(f"wrote {count} overlays to {out}")
    return 0


def cmd_config(args) -> int:
    if args.print_defaults:
        sys.stdout.write(dump_config(default_run_config()))
        return 0
    config = load_config(args.check)
    config.validate()
    print(f"ok: {args.check}")
    return 0


# ---------------------------------------------------------------- parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH",
                   help="YAML run config; defaults are used when omitted")
    p.add_argument("--seed", type=int, metavar="N",
                   help="override the run seed and the training seed")
    p.add_argument("--out", metavar="DIR",
                   help="output root (else $TAVP_OUT, else config out_dir)")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--no-cdtap", action="store_true",
                   help="disable the prototype/prompt path (identity transform)")
    p.add_argument("--no-mff", action="store_true",
                   help="disable early/global fusion (mask feature only)")
    p.add_argument("--prompt-combine", choices=("add", "mul"),
                   help="how dense prompts enter the decoder")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tavp",
        description="Few-shot segmentation across synthetic domains: data "
                    "generation, episodic training, evaluation, overlays.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate the synthetic domains to disk")
    _add_common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("preprocess", help="tile or resize a real-benchmark folder")
    p.add_argument("benchmark", choices=("deepglobe", "isic", "chestx"))
    p.add_argument("input", metavar="IN_DIR")
    _add_common(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="episodic training on the non-holdout domains")
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("--shot", type=int, choices=(1, 5), help="support set size")
    p.add_argument("--resume", metavar="CKPT", help="continue from a checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on every config domain")
    _add_common(p)
    p.add_argument("--shot", type=int, choices=(1, 5),
                   help="restrict the report to one shot setting")
    p.add_argument("--checkpoint", metavar="PATH")
    p.add_argument("--oracle", action="store_true",
                   help="score a ground-truth oracle instead of a checkpoint")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("viz", help="render support/query overlay panels")
    _add_common(p)
    p.add_argument("--shot", type=int, choices=(1, 5), help="support set size")
    p.add_argument("--checkpoint", metavar="PATH")
    p.add_argument("--oracle", action="store_true")
    p.add_argument("--domain", metavar="ID", help="limit to one domain")
    p.add_argument("--episodes", type=int, default=2, metavar="N",
                   help="overlays per domain (default 2)")
    p.set_defaults(func=cmd_viz)

    p = sub.add_parser("config", help="print or check run configs")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--print-defaults", action="store_true",
                       help="write the default config YAML to stdout")
    group.add_argument("--check", metavar="PATH",
                       help="validate a config file and exit")
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
