"""Deterministic, checkpointable optimization loop.

Randomness is never carried as generator state: every draw comes from a
stream keyed by ``(seed, stream_id, step)``, so a run resumed from any
checkpoint replays the uninterrupted run exactly.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import checkpoint
from .augment import apply_pipeline
from .config import TrainConfig
from .data import GZSLDataset, validate_dataset
from .encoders import (ArchConfig, EncoderSet, decoder_backward, decoder_forward, init_encoders,
                       momentum_update, semantic_backward, semantic_forward, visual_backward,
                       visual_forward)
from .evaluator import evaluate_split
from .losses import (LossBundle, NegativeQueue, attribute_prediction_loss, enqueue,
                     instance_discrimination_loss, mask_attributes, semantic_alignment_loss,
                     total_loss, zsl_loss)
from .nn import l2_normalize_backward

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "l_sa", "l_sp", "l_id", "l_total", "pos_sim_mean", "queue_length")

STREAM_VIEW1, STREAM_VIEW2, STREAM_MASK, STREAM_BATCH = 101, 102, 103, 104


class NonFiniteLossError(FloatingPointError):
    def __init__(self, step: int, diagnostics: dict):
        self.step = step
        self.diagnostics = diagnostics
        super().__init__(f"non-finite loss at step {step}: {json.dumps(diagnostics, default=str)}")


@dataclass(frozen=True)
class TrainState:
    encoders: EncoderSet
    queue: NegativeQueue
    velocity: dict[str, dict[str, np.ndarray]]
    step: int = 0


@dataclass
class TrainResult:
    state: TrainState
    checkpoint: bytes
    metrics: list[dict] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)


def stream(seed: int, stream_id: int, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream_id, step]))


def arch_for(cfg: TrainConfig, ds: GZSLDataset) -> ArchConfig:
    if ds.feature_mode:
        return ArchConfig(attr_dim=ds.attributes.attr_dim, input_shape=(ds.x.shape[1],),
                          backbone="mlp_on_features", embed_dim=cfg.embed_dim, K=cfg.K,
                          sem_hidden=cfg.embed_dim, dec_hidden=cfg.embed_dim)
    size = cfg.augmentation.out_size
    return ArchConfig(attr_dim=ds.attributes.attr_dim, input_shape=(size, size, ds.x.shape[3]),
                      backbone="small_conv", conv_widths=cfg.conv_widths, norm_groups=cfg.norm_groups,
                      embed_dim=cfg.embed_dim, K=cfg.K, sem_hidden=cfg.embed_dim,
                      dec_hidden=cfg.embed_dim)


def init_state(arch: ArchConfig, cfg: TrainConfig) -> TrainState:
    enc = init_encoders(arch, cfg.seed)
    velocity = {name: {k: np.zeros_like(v) for k, v in params.items()}
                for name, params in (("f", enc.f), ("h", enc.h), ("hhat", enc.hhat))}
    return TrainState(encoders=enc, queue=NegativeQueue.empty(cfg.queue_capacity, arch.embed_dim),
                      velocity=velocity, step=0)


def learning_rate(cfg: TrainConfig, step: int) -> float:
    """Cosine decay from ``cfg.learning_rate`` to 0 over ``cfg.steps``."""
    if cfg.steps <= 0:
        return cfg.learning_rate
    return cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * step / cfg.steps))


def _sgd(params, grads, velocity, lr, cfg: TrainConfig):
    new_p, new_v = {}, {}
    for k, w in params.items():
        g = grads[k]
        if cfg.weight_decay and w.ndim >= 2:
            g = g + cfg.weight_decay * w
        v = cfg.sgd_momentum * velocity[k] + g
        new_v[k] = v
        new_p[k] = w - lr * v
    return new_p, new_v


def make_views(images: np.ndarray, cfg: TrainConfig, rng: np.random.Generator,
               feature_mode: bool) -> np.ndarray:
    if feature_mode:
        return np.asarray(images, dtype=np.float64)
    return np.stack([apply_pipeline(np.asarray(im, dtype=np.float64), cfg.augmentation, rng)
                     for im in images])


@dataclass
class StepGradients:
    """Everything one step computes before touching parameters."""

    bundle: LossBundle
    grads: dict[str, dict[str, np.ndarray]]
    f_stats: dict[str, np.ndarray]
    g_stats: dict[str, np.ndarray]
    h_stats: dict[str, np.ndarray]
    keys: np.ndarray | None


def forward_backward(state: TrainState, images: np.ndarray, labels: np.ndarray,
                     class_attrs: np.ndarray, class_ids: np.ndarray,
                     cfg: TrainConfig) -> StepGradients:
    """Steps (1)-(5) of a training step plus backprop of l_total.

    ``class_attrs`` holds the unmasked attribute rows of the seen classes
    listed in ``class_ids`` (labels refer to those ids). ``grads`` has an
    entry for f and h, and for the decoder when it is active.
    """
    enc = state.encoders
    arch = enc.arch
    feature_mode = arch.backbone == "mlp_on_features"
    if cfg.uses_vcm and feature_mode:
        raise ValueError("instance discrimination needs raw images; feature-mode datasets "
                         "support only basic_zsl and scm_only")
    t = state.step
    labels = np.asarray(labels)
    class_ids = np.asarray(class_ids)
    row_of = {int(c): r for r, c in enumerate(class_ids)}
    rows = np.array([row_of[int(y)] for y in labels])
    b = len(labels)

    # (1) views, (2) query / key encoders
    v1 = make_views(images, cfg, stream(cfg.seed, STREAM_VIEW1, t), feature_mode)
    q, f_stats = visual_forward(enc.f, v1, arch, enc.f_stats, train=True, keep_cache=True)
    k_units = None
    g_stats = enc.g_stats
    if cfg.uses_vcm:
        v2 = make_views(images, cfg, stream(cfg.seed, STREAM_VIEW2, t), feature_mode)
        k_out, g_stats = visual_forward(enc.g, v2, arch, enc.g_stats, train=True)
        k_units = k_out.unit

    # (3) masking over the whole seen-class matrix, (4) semantic embeddings
    if cfg.uses_scm:
        sem_in = mask_attributes(class_attrs, cfg.sigma, cfg.choose_p,
                                 stream(cfg.seed, STREAM_MASK, t)).masked_attrs
    else:
        sem_in = class_attrs
    sem, h_stats = semantic_forward(enc.h, sem_in, arch, enc.h_stats, train=True, keep_cache=True)

    # (5) losses and their gradients
    d_q_unit = np.zeros_like(q.unit)
    d_q_raw = np.zeros_like(q.raw)
    d_sem_unit = np.zeros_like(sem.unit)
    d_sem_raw = np.zeros_like(sem.raw)
    hardest = np.zeros(0, dtype=int)
    if cfg.uses_scm:
        l_sa, hardest, dv, dc = semantic_alignment_loss(q.unit, labels, sem.unit, class_ids,
                                                        margin=cfg.hinge_margin, return_grad=True)
        d_q_unit += dv
        d_sem_unit += dc
    else:
        l_sa, dv, de = zsl_loss(q.unit, sem.unit[rows], return_grad=True)
        d_q_unit += dv
        np.add.at(d_sem_unit, rows, de)

    l_sp = 0.0
    g_hhat = None
    if cfg.uses_scm:
        vis_in, sem_rows = (q.raw, sem.raw[rows]) if cfg.decoder_input == "raw" else (q.unit, sem.unit[rows])
        pred, dcache = decoder_forward(enc.hhat, vis_in, sem_rows, arch, keep_cache=True)
        l_sp, d_pred = attribute_prediction_loss(pred, class_attrs[rows], return_grad=True)
        g_hhat, d_vis, d_sem = decoder_backward(dcache, cfg.lambda2 * d_pred, arch)
        if cfg.decoder_input == "raw":
            d_q_raw += d_vis
            np.add.at(d_sem_raw, rows, d_sem)
        else:
            d_q_unit += d_vis
            np.add.at(d_sem_unit, rows, d_sem)

    l_id = 0.0
    if cfg.uses_vcm:
        l_id, dq = instance_discrimination_loss(q.unit, k_units, state.queue, cfg.tau, return_grad=True)
        if cfg.lambda1 > 0:
            d_q_unit += cfg.lambda1 * dq

    l_all = total_loss(l_sa, l_sp, l_id, cfg.lambda1, cfg.lambda2)
    pos_sim = float(np.mean(np.sum(q.unit * sem.unit[rows], axis=1)))
    bundle = LossBundle(l_sa=l_sa, l_sp=l_sp, l_id=l_id, l_total=l_all, pos_sim_mean=pos_sim,
                        hardest_negative=np.asarray(hardest))
    if not np.isfinite(l_all):
        raise NonFiniteLossError(t, {"l_sa": l_sa, "l_sp": l_sp, "l_id": l_id, "l_total": l_all,
                                     "pos_sim_mean": pos_sim, "batch_size": b,
                                     "queue_length": state.queue.length})

    grads = {
        "f": visual_backward(enc.f, q, l2_normalize_backward(d_q_unit, q.raw) + d_q_raw, arch),
        "h": semantic_backward(sem, l2_normalize_backward(d_sem_unit, sem.raw) + d_sem_raw, arch),
    }
    if g_hhat is not None:
        grads["hhat"] = g_hhat
    return StepGradients(bundle=bundle, grads=grads, f_stats=f_stats, g_stats=g_stats,
                         h_stats=h_stats, keys=k_units)


def train_step(state: TrainState, images: np.ndarray, labels: np.ndarray,
               class_attrs: np.ndarray, class_ids: np.ndarray,
               cfg: TrainConfig) -> tuple[TrainState, LossBundle]:
    """One optimization step on a seen-domain batch (see :func:`forward_backward`)."""
    sg = forward_backward(state, images, labels, class_attrs, class_ids, cfg)
    enc = state.encoders

    # (6) gradient step on f, h and (when active) the decoder
    lr = learning_rate(cfg, state.step)
    velocity = dict(state.velocity)
    updated = {}
    for name in ("f", "h", "hhat"):
        if name in sg.grads:
            updated[name], velocity[name] = _sgd(getattr(enc, name), sg.grads[name],
                                                 state.velocity[name], lr, cfg)
    enc = replace(enc, **updated, f_stats=sg.f_stats, g_stats=sg.g_stats, h_stats=sg.h_stats)

    # (7) momentum update of g, (8) enqueue keys
    queue = state.queue
    if cfg.uses_vcm:
        enc = momentum_update(enc, cfg.m)
        queue = enqueue(queue, sg.keys)
    return TrainState(encoders=enc, queue=queue, velocity=velocity, step=state.step + 1), sg.bundle


def batch_indices(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Seeded epoch-wise shuffling, dropping the ragged tail of each epoch."""
    bs = min(batch_size, n)
    per_epoch = n // bs
    epoch, pos = divmod(step, per_epoch)
    perm = stream(seed, STREAM_BATCH, epoch).permutation(n)
    return perm[pos * bs:(pos + 1) * bs]


def write_metrics_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def train(ds: GZSLDataset, cfg: TrainConfig, out_dir: str | Path | None = None,
          resume: TrainState | bytes | None = None, stop_at: int | None = None) -> TrainResult:
    """Run ``cfg.steps`` steps on the train split (or resume part-way).

    ``stop_at`` halts early, as an interruption would; the schedule still
    follows ``cfg.steps``. Checkpoints are emitted every ``cfg.eval_every``
    steps (after validation) and at the end; with ``out_dir`` they are also
    written to ``ckpt_step{N}.bin`` / ``final.ckpt`` alongside ``metrics.csv``.
    """
    report = validate_dataset(ds)
    if not report.ok:
        raise ValueError("dataset failed validation: " + "; ".join(report.issues))
    arch = arch_for(cfg, ds)
    if isinstance(resume, (bytes, bytearray)):
        resume, _ = checkpoint.loads(bytes(resume))
    state = resume if resume is not None else init_state(arch, cfg)
    if state.encoders.arch != arch:
        raise ValueError("checkpoint architecture does not match dataset/config")

    x_tr, y_tr = ds.subset("train")
    if len(y_tr) == 0:
        raise ValueError("dataset has no train samples")
    seen = ds.seen_sorted
    class_attrs = ds.attributes.values[seen]
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    end = cfg.steps if stop_at is None else min(stop_at, cfg.steps)
    metrics: list[dict] = []
    evals: list[dict] = []
    while state.step < end:
        idx = batch_indices(len(y_tr), cfg.batch_size, cfg.seed, state.step)
        state, lb = train_step(state, x_tr[idx], y_tr[idx], class_attrs, seen, cfg)
        metrics.append({"step": state.step, "l_sa": lb.l_sa, "l_sp": lb.l_sp, "l_id": lb.l_id,
                        "l_total": lb.l_total, "pos_sim_mean": lb.pos_sim_mean,
                        "queue_length": state.queue.length})
        if cfg.eval_every and state.step % cfg.eval_every == 0:
            row = {"step": state.step}
            if ds.count("val"):
                row["val_mca"] = evaluate_split(state.encoders, ds, "val")
            evals.append(row)
            log.info("step %d: l_total=%.4f %s", state.step, lb.l_total, row)
            if out is not None:
                (out / f"ckpt_step{state.step}.bin").write_bytes(checkpoint.dumps(state, cfg))
    blob = checkpoint.dumps(state, cfg)
    if out is not None:
        (out / "final.ckpt").write_bytes(blob)
        write_metrics_csv(out / "metrics.csv", metrics)
        if evals:
            (out / "evals.json").write_text(json.dumps(evals, indent=2))
    return TrainResult(state=state, checkpoint=blob, metrics=metrics, evals=evals)
