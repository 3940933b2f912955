"""
Training loop in miniature
==========================

Trains the adapter modules for a few hundred episodes on two small domains,
checkpoints, then resumes for one more epoch. Uses a 32px encoder so the
whole run takes well under a minute on a laptop CPU.
"""

import argparse
from pathlib import Path

from tavp import (
    EncoderConfig,
    ModelConfig,
    Segmenter,
    TrainConfig,
    default_run_config,
    domain_seed,
    generate_synthetic_dataset,
    load_checkpoint,
    save_checkpoint,
    train,
)
from dataclasses import replace

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--out", default="demo_out/train")
args = parser.parse_args()
out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)

# a 32px model: same architecture, quarter-resolution images
model_config = ModelConfig(
    encoder=EncoderConfig(image_size=32, depth=4, early_block_index=1),
    mask_channels=8, token_dim=32, n_prompt=2)
config = default_run_config()
specs = [replace(s, canvas_size=32) for s in config.train_domains()[:2]]
datasets = [generate_synthetic_dataset(s, n_classes=4, n_per_class=6,
                                       seed=domain_seed(0, s.domain_id))
            for s in specs]
print("training on:", ", ".join(d.domain_id for d in datasets))

model = Segmenter(model_config, seed=0)
train_config = TrainConfig(epochs=20, episodes_per_epoch=10, learning_rate=1e-3)
checkpoint = train(model, datasets, train_config,
                   metrics_path=out / "metrics.jsonl")

for record in checkpoint.metrics[:: len(checkpoint.metrics) // 8]:
    print(f"  step {record['step']:4d}  seg {record['seg']:.3f}  "
          f"dem {record['dem']:.3f}  encoder grad "
          f"{record['grad_norms']['backbone']:.1f}")

digest = save_checkpoint(checkpoint, out / "checkpoint.npz")
print(f"checkpoint: {out / 'checkpoint.npz'} (digest {digest})")

# resuming restores parameters, optimizer state, and the step counter
restored = load_checkpoint(out / "checkpoint.npz")
model2 = Segmenter(model_config, seed=0)
model2.load_state_dict(restored.params)
more = train(model2, datasets, replace(train_config, epochs=1), resume=restored)
print(f"resumed at step {restored.global_step}, "
      f"continued to step {more.global_step}")
