"""
Ablation sweeps
===============

Vary one hyperparameter, train and evaluate once per (value, repeat) cell and
plot mean H. The smoke config keeps each cell to a few seconds; point
``--base`` at ``configs/e2e.yaml`` for the full-size version.
"""

import argparse
from pathlib import Path

from dcen.config import TrainConfig, load_config, synth_from_dict
from dcen.data import generate_synthetic
from dcen.sweep import SweepSpec, run_sweep

root = Path(__file__).resolve().parents[1]
p = argparse.ArgumentParser()
p.add_argument("--out", default="demo_out")
p.add_argument("--base", default=str(root / "configs" / "smoke.yaml"))
args = p.parse_args()

doc = load_config(args.base)
ds = generate_synthetic(synth_from_dict(doc["synth"]))
base = TrainConfig.from_dict(doc["train"])

# weight of the instance discrimination term, then the masking ratio
for spec in (SweepSpec("lambda1", (0.0, 0.1, 1.0), repeats=2),
             SweepSpec("sigma", (0, 25, 50, 100))):
    rows = run_sweep(spec, ds, base, args.out)
    print(spec.param)
    for r in rows:
        print(f"  {r['value']!s:>6} repeat {r['repeat']}  U {r['mca_u']:5.1f}  S {r['mca_s']:5.1f}  H {r['h']:5.1f}")
print("csv and png files in", Path(args.out).resolve())
