"""
Synthetic GZSL data
===================

Each class gets an attribute vector in [0, 1]. An image places one texture per
attribute in a random grid cell, scaled by the attribute value, so attributes
are visible in pixels and carry over to classes never seen in training.
"""

import argparse
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from dcen.data import SynthConfig, generate_synthetic, seen_split_counts, validate_dataset

p = argparse.ArgumentParser()
p.add_argument("--out", default="demo_out")
out = Path(p.parse_args().out)
out.mkdir(parents=True, exist_ok=True)

# 8 seen and 4 unseen classes, 8 attributes each
cfg = SynthConfig(num_seen=8, num_unseen=4, attr_dim=8, samples_per_class=40, image_size=32,
                  noise_std=0.05, seed=7)
ds = generate_synthetic(cfg)
print(validate_dataset(ds))

# seen classes are split 70/10/20 into train/val/test_seen; unseen classes are all test
print("per seen class (train, val, test):", seen_split_counts(cfg.samples_per_class))
for split in ("train", "val", "test_seen", "test_unseen"):
    print(f"{split:12s}{ds.count(split):5d}")

# the attribute matrix: rows are classes, unseen rows last
A = ds.attributes.values
print(np.array2string(A, precision=2))

# one image per class, titled with its two strongest attributes
fig, axes = plt.subplots(2, 6, figsize=(10, 4))
for c, ax in enumerate(axes.flat):
    i = int(np.flatnonzero(ds.labels == c)[0])
    ax.imshow(np.clip(ds.x[i], 0, 1))
    kind = "unseen" if c in ds.unseen_classes else "seen"
    ax.set_title(f"{c} ({kind})\ntop {np.argsort(-A[c])[:2].tolist()}", fontsize=7)
    ax.axis("off")
fig.tight_layout()
fig.savefig(out / "synthetic_classes.png", dpi=100)
print("wrote", out / "synthetic_classes.png")
