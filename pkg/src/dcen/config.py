"""Training configuration and the YAML config-file surface.

A config file has up to two sections, both optional::

    synth:            # SynthConfig fields
      num_seen: 8
    train:            # TrainConfig fields
      mode: full_dcen
      lambda1: 0.1
      augmentation: {preset: default}     # or {out_size: 32, ops: [...]}

``--set train.lambda1=0.5`` style overrides address fields by dotted path.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .augment import AugmentationSpec, default_spec
from .data import SynthConfig

MODES = ("basic_zsl", "scm_only", "vcm_only", "full_dcen")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "full_dcen"
    lambda1: float = 0.1
    lambda2: float = 0.1
    tau: float = 0.07
    m: float = 0.999
    sigma: float = 25.0
    choose_p: float = 0.5
    K: int = 2
    batch_size: int = 32
    steps: int = 500
    learning_rate: float = 0.05
    weight_decay: float = 5e-4
    sgd_momentum: float = 0.9
    seed: int = 0
    queue_capacity: int = 1024
    augmentation: AugmentationSpec = field(default_factory=default_spec)
    embed_dim: int = 128
    conv_widths: tuple[int, ...] = (32, 64, 128)
    norm_groups: int = 8
    hinge_margin: float | None = None
    decoder_input: str = "raw"
    eval_every: int = 0

    def __post_init__(self):
        problems = []
        if self.mode not in MODES:
            problems.append(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            problems.append("lambda1 and lambda2 must be >= 0")
        if self.tau <= 0:
            problems.append("tau must be > 0")
        if not 0 <= self.m <= 1:
            problems.append("m must lie in [0, 1]")
        if not 0 <= self.sigma <= 100:
            problems.append("sigma must lie in [0, 100]")
        if not 0 <= self.choose_p <= 1:
            problems.append("choose_p must lie in [0, 1]")
        if self.K < 1:
            problems.append("K must be >= 1")
        if self.batch_size < 1 or self.steps < 0 or self.queue_capacity < 1:
            problems.append("batch_size and queue_capacity must be >= 1, steps >= 0")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            problems.append("learning_rate must be > 0 and weight_decay >= 0")
        if self.decoder_input not in ("raw", "unit"):
            problems.append("decoder_input must be 'raw' or 'unit'")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def uses_vcm(self) -> bool:
        return self.mode in ("vcm_only", "full_dcen")

    @property
    def uses_scm(self) -> bool:
        return self.mode in ("scm_only", "full_dcen")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["augmentation"] = self.augmentation.to_dict()
        d["conv_widths"] = list(self.conv_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown train config keys: {unknown}")
        if "augmentation" in d and not isinstance(d["augmentation"], AugmentationSpec):
            d["augmentation"] = AugmentationSpec.from_dict(d["augmentation"])
        if "conv_widths" in d:
            d["conv_widths"] = tuple(d["conv_widths"])
        for key in ("lambda1", "lambda2", "tau", "m", "sigma", "choose_p", "learning_rate",
                    "weight_decay", "sgd_momentum"):
            if key in d:
                d[key] = float(d[key])
        return cls(**d)


def synth_from_dict(d: dict[str, Any]) -> SynthConfig:
    known = {f.name for f in fields(SynthConfig)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ValueError(f"unknown synth config keys: {unknown}")
    return SynthConfig(**d)


def parse_override(text: str) -> tuple[list[str], Any]:
    if "=" not in text:
        raise ValueError(f"override must look like key.path=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip().split("."), yaml.safe_load(value)


def apply_overrides(doc: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    doc = copy.deepcopy(doc)
    for item in overrides:
        path, value = parse_override(item)
        node = doc
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ValueError(f"cannot set {'.'.join(path)}: {part} is not a section")
        node[path[-1]] = value
    return doc


def load_config(path: str | Path | None, overrides: list[str] = ()) -> dict[str, Any]:
    doc: dict[str, Any] = {}
    if path is not None:
        doc = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(doc, dict):
            raise ValueError(f"{path}: config must be a mapping")
    return apply_overrides(doc, list(overrides))
