"""
Training and GZSL evaluation
============================

Train the full model on the synthetic reference dataset, then classify test
images of seen and unseen classes together by nearest class embedding.
"""

import argparse
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from dcen.config import TrainConfig, load_config, synth_from_dict
from dcen.data import generate_synthetic
from dcen.evaluator import evaluate_gzsl
from dcen.trainer import train

root = Path(__file__).resolve().parents[1]
p = argparse.ArgumentParser()
p.add_argument("--out", default="demo_out")
out = Path(p.parse_args().out)
out.mkdir(parents=True, exist_ok=True)

# the committed end-to-end config: 500 steps, batch 32, takes under a minute
doc = load_config(root / "configs" / "e2e.yaml")
ds = generate_synthetic(synth_from_dict(doc["synth"]))
cfg = TrainConfig.from_dict(doc["train"])
res = train(ds, cfg, out_dir=out)

# the three terms of the objective over training, 20-step moving average.
# l_id climbs early because the queue is still filling with negatives.
steps = np.array([m["step"] for m in res.metrics])
fig, ax = plt.subplots(figsize=(6, 4))
for key in ("l_sa", "l_sp", "l_id", "l_total"):
    y = np.array([m[key] for m in res.metrics])
    ax.plot(steps[19:], np.convolve(y, np.ones(20) / 20, mode="valid"), label=key)
ax.set_xlabel("step")
ax.legend()
fig.tight_layout()
fig.savefig(out / "losses.png", dpi=100)

# union-space evaluation
report = evaluate_gzsl(res.state.encoders, ds)
print(report.to_table(), end="")
print("chance MCA over 12 classes: %.1f" % (100 / 12))
for cid, acc in report.per_class_acc.items():
    print(f"  {cid:10s}{acc:6.1f}")
