"""
One training step, dissected
============================

Runs a single episode forward, prints every loss term, then backpropagates
and shows which parameter groups receive gradient. The encoder group stays
at exactly zero: only the adapter modules train.
"""

import numpy as np

from tavp import (
    LossConfig,
    Segmenter,
    default_run_config,
    dem_loss,
    domain_seed,
    generate_synthetic_dataset,
    sample_episode,
    seg_loss,
    total_loss,
)
from tavp.imageops import resize_nearest

config = default_run_config()
spec = config.train_domains()[1]
dataset = generate_synthetic_dataset(spec, config.n_classes, config.n_per_class,
                                     seed=domain_seed(config.seed, spec.domain_id))
episode = sample_episode(dataset, shot=1, seed=11)
model = Segmenter(seed=0)

# forward: logits at the mask resolution plus the dense prompt map
out = model.forward_episode(episode)
print(f"logits {out.logits.logits.shape}, dense prompt {out.dense.Z.shape}, "
      f"matching fallbacks {out.flags}")

# losses: convex seg combo plus the dense-prompt supervision term
mask = resize_nearest(episode.query.mask, out.logits.logits.shape).astype(float)
seg = seg_loss(out.logits.logits, mask, LossConfig(dice_weight=0.5))
dem = dem_loss(out.dense.Z[0], episode.query.mask)
total = total_loss(seg, dem)
print(f"seg {seg.item():.4f} + dem {dem.item():.4f} = total {total.item():.4f}")

# backward: gradient norms per parameter group
total.backward()
for ns, params in model.namespace_parameters().items():
    sq = sum(float((p.grad ** 2).sum()) for p in params.values()
             if p.grad is not None)
    print(f"  {ns:14s} {len(params):3d} tensors, grad norm {np.sqrt(sq):10.4f}")

trainable, total_n, ratio = model.parameter_budget()
print(f"trainable {trainable:,} / {total_n:,} parameters = {100 * ratio:.2f}%")
