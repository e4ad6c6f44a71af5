"""Objective terms for semantic alignment, masked attribute prediction and
instance discrimination, plus the negative key queue.

Sign convention: ``s`` is cosine similarity of unit vectors and the distance
is ``d = -s`` wherever a distance appears. Loss functions accept unit-norm
embeddings; pass ``return_grad=True`` to also receive gradients with respect
to every differentiable input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax


# --- negative queue ---------------------------------------------------------

@dataclass(frozen=True)
class NegativeQueue:
    """Fixed-capacity FIFO ring buffer of unit key embeddings."""

    buffer: np.ndarray
    length: int = 0
    cursor: int = 0

    @classmethod
    def empty(cls, capacity: int, dim: int) -> "NegativeQueue":
        if capacity < 1:
            raise ValueError("queue capacity must be >= 1")
        return cls(buffer=np.zeros((capacity, dim)))

    @property
    def capacity(self) -> int:
        return self.buffer.shape[0]

    @property
    def dim(self) -> int:
        return self.buffer.shape[1]

    def contents(self) -> np.ndarray:
        """Stored rows, oldest first (a copy)."""
        if self.length < self.capacity:
            return self.buffer[:self.length].copy()
        return np.roll(self.buffer, -self.cursor, axis=0)


def enqueue(queue: NegativeQueue, keys: np.ndarray) -> NegativeQueue:
    if keys.ndim != 2 or keys.shape[1] != queue.dim:
        raise ValueError(f"key dim mismatch: queue holds {queue.dim}-d rows, got shape {keys.shape}")
    q = queue.capacity
    if keys.shape[0] > q:
        keys = keys[-q:]
    n = keys.shape[0]
    buf = queue.buffer.copy()
    idx = (queue.cursor + np.arange(n)) % q
    buf[idx] = keys
    return NegativeQueue(buffer=buf, length=min(queue.length + n, q), cursor=int((queue.cursor + n) % q))


# --- attribute masking ------------------------------------------------------

@dataclass(frozen=True)
class MaskResult:
    masked_attrs: np.ndarray
    mask: np.ndarray
    was_chosen: np.ndarray


def masked_count(sigma_pct: float, attr_dim: int) -> int:
    """Number of zeroed elements in a chosen row: sigma% of attr_dim, rounded half up."""
    return int(np.floor(sigma_pct / 100.0 * attr_dim + 0.5))


def mask_attributes(attrs: np.ndarray, sigma_pct: float, choose_p: float,
                    rng: np.random.Generator) -> MaskResult:
    """Each row is chosen with probability ``choose_p``; a chosen row gets
    ``sigma_pct`` percent of its elements zeroed at uniformly random positions."""
    if not 0.0 <= sigma_pct <= 100.0:
        raise ValueError("sigma_pct must lie in [0, 100]")
    if not 0.0 <= choose_p <= 1.0:
        raise ValueError("choose_p must lie in [0, 1]")
    n, d = attrs.shape
    chosen = rng.random(n) < choose_p
    count = masked_count(sigma_pct, d)
    mask = np.zeros((n, d), dtype=bool)
    for i in np.flatnonzero(chosen):
        mask[i, rng.permutation(d)[:count]] = True
    return MaskResult(masked_attrs=np.where(mask, 0.0, attrs), mask=mask, was_chosen=chosen)


# --- alignment losses -------------------------------------------------------

def zsl_loss(visual_units: np.ndarray, attr_units: np.ndarray, return_grad: bool = False):
    """Mean negative cosine between row-aligned visual and class embeddings."""
    if visual_units.shape != attr_units.shape:
        raise ValueError(f"batch misalignment: {visual_units.shape} vs {attr_units.shape}")
    b = visual_units.shape[0]
    loss = float(-np.sum(visual_units * attr_units) / b)
    if not return_grad:
        return loss
    return loss, -attr_units / b, -visual_units / b


def semantic_alignment_loss(visual_units: np.ndarray, labels: np.ndarray,
                            class_units: np.ndarray, class_ids: np.ndarray,
                            margin: float | None = None, return_grad: bool = False):
    """Cross-modal triplet against the most confusing negative class.

    Per sample: ``d(v, e_pos) - min_{k != y} d(v, e_k)`` with ``d = -cos``,
    searched over every row of ``class_units`` (one row per class in
    ``class_ids``). With ``margin`` set, the per-sample term becomes
    ``max(0, term + margin)``.

    Returns ``(loss, hardest_negative_ids)`` or, with ``return_grad``,
    ``(loss, hardest_negative_ids, d_visual, d_class_units)``.
    """
    class_ids = np.asarray(class_ids)
    if len(class_ids) < 2:
        raise ValueError("need at least two classes to form a negative")
    row_of = {int(c): r for r, c in enumerate(class_ids)}
    missing = sorted({int(y) for y in labels} - row_of.keys())
    if missing:
        raise ValueError(f"labels {missing} have no row in the class embeddings")
    pos_rows = np.array([row_of[int(y)] for y in labels], dtype=int)
    b = visual_units.shape[0]
    sims = visual_units @ class_units.T
    ar = np.arange(b)
    s_pos = sims[ar, pos_rows]
    masked = sims.copy()
    masked[ar, pos_rows] = -np.inf
    neg_rows = np.argmax(masked, axis=1)
    s_neg = masked[ar, neg_rows]
    terms = s_neg - s_pos
    active = np.ones(b, dtype=bool)
    if margin is not None:
        active = terms + margin > 0
        terms = np.maximum(terms + margin, 0.0)
    loss = float(terms.mean())
    hardest = class_ids[neg_rows]
    if not return_grad:
        return loss, hardest
    w = active.astype(float)[:, None] / b
    d_vis = w * (class_units[neg_rows] - class_units[pos_rows])
    d_cls = np.zeros_like(class_units)
    np.add.at(d_cls, pos_rows, -w * visual_units)
    np.add.at(d_cls, neg_rows, w * visual_units)
    return loss, hardest, d_vis, d_cls


def attribute_prediction_loss(pred: np.ndarray, target: np.ndarray, return_grad: bool = False):
    """Mean over the batch of the (unsquared) L2 reconstruction error."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    resid = pred - target
    norms = np.linalg.norm(resid, axis=1)
    b = pred.shape[0]
    loss = float(norms.mean())
    if not return_grad:
        return loss
    safe = np.where(norms > 0, norms, 1.0)
    grad = np.where(norms[:, None] > 0, resid / safe[:, None], 0.0) / b
    return loss, grad


# --- instance discrimination -----------------------------------------------

def instance_discrimination_loss(query_units: np.ndarray, key_units: np.ndarray,
                                 queue: NegativeQueue | np.ndarray, tau: float = 0.07,
                                 return_grad: bool = False):
    """InfoNCE with the paired key as positive and every queue row as negative.

    Keys and queue are treated as constants; the gradient is w.r.t. queries only.
    """
    if query_units.shape[0] == 0:
        raise ValueError("empty batch")
    if tau <= 0:
        raise ValueError("tau must be > 0")
    if query_units.shape != key_units.shape:
        raise ValueError(f"query/key shape mismatch: {query_units.shape} vs {key_units.shape}")
    negs = queue.contents() if isinstance(queue, NegativeQueue) else np.asarray(queue)
    b = query_units.shape[0]
    l_pos = np.sum(query_units * key_units, axis=1, keepdims=True)
    l_neg = query_units @ negs.T
    logits = np.concatenate([l_pos, l_neg], axis=1) / tau
    per_sample = logsumexp(logits, axis=1) - logits[:, 0]
    loss = float(per_sample.mean())
    if not return_grad:
        return loss
    p = softmax(logits, axis=1)
    p[:, 0] -= 1.0
    dq = (p[:, :1] * key_units + p[:, 1:] @ negs) / (tau * b)
    return loss, dq


# --- combination ------------------------------------------------------------

@dataclass(frozen=True)
class LossBundle:
    l_sa: float
    l_sp: float
    l_id: float
    l_total: float
    pos_sim_mean: float = 0.0
    hardest_negative: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int), compare=False)


def total_loss(l_sa: float, l_sp: float, l_id: float, lambda1: float, lambda2: float) -> float:
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError("loss weights must be non-negative")
    return lambda1 * l_id + l_sa + lambda2 * l_sp
