"""Ablation sweeps: one train + eval per (value, repeat) cell.

Every cell gets its own seed, hashed from (base seed, parameter, value,
repeat), so any cell can be rerun in isolation and cells may run in any
order or in parallel without changing results.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .augment import TABLE2_ROWS, preset
from .config import TrainConfig
from .data import GZSLDataset
from .evaluator import evaluate_gzsl
from .trainer import train

log = logging.getLogger(__name__)

SWEEP_PARAMS = ("lambda1", "lambda2", "sigma", "K", "augmentation_row")
CSV_COLUMNS = ("param", "value", "repeat", "mca_u", "mca_s", "h")
WORKERS_ENV = "DCEN_WORKERS"


def _normalize(param: str, value):
    if param == "augmentation_row":
        return str(value)
    if param == "K":
        if int(value) != value:
            raise ValueError(f"K must be an integer, got {value!r}")
        return int(value)
    return float(value)


@dataclass(frozen=True)
class SweepSpec:
    param: str
    values: tuple
    repeats: int = 1
    base_config: str | None = None

    def __post_init__(self):
        if self.param not in SWEEP_PARAMS:
            raise ValueError(f"cannot sweep {self.param!r}; choose one of {SWEEP_PARAMS}")
        if not self.values:
            raise ValueError("sweep values must be non-empty")
        if self.repeats < 1:
            raise ValueError(f"repeats must be >= 1 (got {self.repeats})")
        values = tuple(_normalize(self.param, v) for v in self.values)
        if self.param == "augmentation_row":
            bad = [v for v in values if v not in TABLE2_ROWS]
            if bad:
                raise ValueError(f"unknown augmentation rows {bad}; known: {sorted(TABLE2_ROWS)}")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_dict(cls, d: dict[str, Any], root: str | Path | None = None) -> "SweepSpec":
        d = dict(d.get("sweep", d))
        base = d.get("base_config")
        if base is not None and root is not None and not Path(base).is_absolute():
            d["base_config"] = str(Path(root) / base)
        unknown = sorted(set(d) - {"param", "values", "repeats", "base_config"})
        if unknown:
            raise ValueError(f"unknown sweep keys: {unknown}")
        return cls(param=d["param"], values=tuple(d["values"]), repeats=int(d.get("repeats", 1)),
                   base_config=d.get("base_config"))

    @classmethod
    def load(cls, path: str | Path) -> "SweepSpec":
        path = Path(path)
        return cls.from_dict(yaml.safe_load(path.read_text()) or {}, root=path.parent)

    def cells(self) -> list[tuple[Any, int]]:
        return [(v, r) for v in self.values for r in range(self.repeats)]


def cell_seed(base_seed: int, param: str, value, repeat: int) -> int:
    key = json.dumps([int(base_seed), param, value, int(repeat)])
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:4], "little")


def cell_config(base: TrainConfig, param: str, value, repeat: int) -> TrainConfig:
    seed = cell_seed(base.seed, param, value, repeat)
    if param == "augmentation_row":
        return replace(base, augmentation=preset(value, out_size=base.augmentation.out_size), seed=seed)
    return replace(base, **{param: value}, seed=seed)


def run_cell(ds: GZSLDataset, cfg: TrainConfig) -> dict[str, float]:
    res = train(ds, cfg)
    rep = evaluate_gzsl(res.state.encoders, ds)
    return {"mca_u": rep.mca_u, "mca_s": rep.mca_s, "h": rep.h}


def _row(param, value, repeat, scores) -> dict[str, Any]:
    return {"param": param, "value": value, "repeat": repeat, **scores}


def _write_row(w: csv.DictWriter, row: dict) -> None:
    w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    return n


def run_sweep(spec: SweepSpec, ds: GZSLDataset, base: TrainConfig, out_dir: str | Path,
              workers: int | None = None) -> list[dict[str, Any]]:
    """Run every cell, then write ``sweep_<param>.csv`` (cell order) and
    ``sweep_<param>.png``.

    While the sweep runs, finished cells are appended to
    ``sweep_<param>.partial.csv`` in completion order, so an interrupted
    sweep keeps what it finished.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    workers = worker_count() if workers is None else workers
    cells = spec.cells()
    configs = [cell_config(base, spec.param, v, r) for v, r in cells]
    partial = out / f"sweep_{spec.param}.partial.csv"
    done: dict[int, dict] = {}
    with open(partial, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        fh.flush()

        def finish(i, scores):
            v, r = cells[i]
            done[i] = _row(spec.param, v, r, scores)
            _write_row(w, done[i])
            fh.flush()
            log.info("cell %s=%r repeat %d: H=%.2f", spec.param, v, r, scores["h"])

        if workers == 1:
            for i, cfg in enumerate(configs):
                finish(i, run_cell(ds, cfg))
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futs = {pool.submit(run_cell, ds, cfg): i for i, cfg in enumerate(configs)}
                for fut in as_completed(futs):
                    finish(futs[fut], fut.result())

    rows = [done[i] for i in range(len(cells))]
    with open(out / f"sweep_{spec.param}.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            _write_row(w, row)
    partial.unlink()
    plot_sweep(rows, spec, out / f"sweep_{spec.param}.png")
    return rows


def mean_by_value(rows: list[dict], values) -> tuple[np.ndarray, np.ndarray]:
    means, stds = [], []
    for v in values:
        hs = np.array([r["h"] for r in rows if r["value"] == v])
        means.append(hs.mean())
        stds.append(hs.std())
    return np.array(means), np.array(stds)


def plot_sweep(rows: list[dict], spec: SweepSpec, path: str | Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    values = list(spec.values)
    mean, std = mean_by_value(rows, values)
    categorical = spec.param == "augmentation_row"
    xs = np.arange(len(values)) if categorical else np.array(values, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(xs, mean, yerr=std if spec.repeats > 1 else None, marker="o", capsize=3)
    if categorical:
        ax.set_xticks(xs)
        ax.set_xticklabels(values, rotation=60, ha="right", fontsize=7)
    ax.set_xlabel(spec.param)
    ax.set_ylabel("H (%)")
    ax.set_title(f"mean H over {spec.repeats} repeat(s)")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    # fixed metadata keeps the PNG bytes stable across reruns
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
