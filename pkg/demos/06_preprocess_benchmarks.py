"""
Benchmark-style preprocessing
=============================

Shows the two ingestion paths on synthetic stand-ins: tiling a large
aerial-style record into 408px tiles with single-class tiles dropped, and
square-resizing dermoscopy- and radiograph-shaped records.
"""

import numpy as np

from tavp import Sample, resize_benchmark, tile_deepglobe, tile_grid

rng = np.random.default_rng(0)

# a 2448px record tiles into a 6x6 grid
image = rng.uniform(size=(2448, 2448, 3)).astype(np.float32)
tiles = tile_grid(image, 408)
print(f"2448x2448 record -> {len(tiles)} tiles of "
      f"{tiles[0][2].shape[0]}x{tiles[0][2].shape[1]}")

# paint a second class into the left half only: right-half tiles hold a
# single class and are filtered out
label = np.zeros((2448, 2448), dtype=np.int64)
label[:, :1224] = (rng.uniform(size=(2448, 1224)) > 0.7).astype(np.int64)
samples = tile_deepglobe(image, label)
print(f"two-class left half -> {len(samples)} class views "
      f"(single-class tiles dropped)")

# odd-sized records are square-resized; masks stay binary via nearest
for name, hw, target in (("dermoscopy", (1022, 767), 512),
                         ("radiograph", (4020, 4892), 1024)):
    record = Sample(image=rng.uniform(size=(*hw, 3)).astype(np.float32),
                    mask=(rng.uniform(size=hw) > 0.5).astype(np.uint8),
                    class_id=0, domain_id=name)
    resized = resize_benchmark(record, target)
    print(f"{name} {hw[0]}x{hw[1]} -> image {resized.image.shape}, "
          f"mask values {sorted(np.unique(resized.mask))}")
