"""Nearest-neighbour GZSL inference over class embeddings and the
MCA / harmonic-mean report."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .data import GZSLDataset
from .encoders import EncoderSet, semantic_forward, visual_forward


def harmonic_mean(mca_u: float, mca_s: float) -> float:
    if mca_u + mca_s <= 0:
        return 0.0
    return 2.0 * mca_u * mca_s / (mca_u + mca_s)


def mean_class_accuracy(preds, labels, class_set) -> float:
    """Mean over ``class_set`` of per-class top-1 accuracy, in percent.

    Classes without any sample are left out of the mean.
    """
    classes = sorted(int(c) for c in class_set)
    if not classes:
        raise ValueError("class_set is empty")
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    stray = sorted(set(labels.tolist()) - set(classes))
    if stray:
        raise ValueError(f"labels {stray} are not in class_set")
    accs = [np.mean(preds[labels == c] == c) for c in classes if np.any(labels == c)]
    if not accs:
        raise ValueError("no samples for any class in class_set")
    return 100.0 * float(np.mean(accs))


def per_class_accuracy(preds, labels) -> dict[int, float]:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    return {int(c): 100.0 * float(np.mean(preds[labels == c] == c)) for c in np.unique(labels)}


def class_embeddings(enc: EncoderSet, attr_values: np.ndarray) -> np.ndarray:
    """Unit embeddings of unmasked attributes, eval-mode normalization."""
    out, _ = semantic_forward(enc.h, np.asarray(attr_values, dtype=np.float64), enc.arch,
                              enc.h_stats, train=False)
    return out.unit


def embed_images(enc: EncoderSet, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    chunks = [visual_forward(enc.f, np.asarray(images[i:i + batch_size], dtype=np.float64), enc.arch,
                             enc.f_stats)[0].unit
              for i in range(0, len(images), batch_size)]
    return np.concatenate(chunks) if chunks else np.zeros((0, enc.arch.embed_dim))


def nearest_class(image_units: np.ndarray, class_units: np.ndarray) -> np.ndarray:
    """argmin of -cos, i.e. argmax of cosine; ties go to the lowest class index."""
    return np.argmax(image_units @ class_units.T, axis=1)


def predict(enc: EncoderSet, attributes, images: np.ndarray) -> np.ndarray:
    values = getattr(attributes, "values", attributes)
    if np.shape(values)[1] != enc.arch.attr_dim:
        raise ValueError(f"attribute dim {np.shape(values)[1]} does not match encoder attr_dim "
                         f"{enc.arch.attr_dim}")
    return nearest_class(embed_images(enc, images), class_embeddings(enc, values))


@dataclass(frozen=True)
class GZSLReport:
    mca_u: float
    mca_s: float
    h: float
    per_class_acc: dict[str, float] = field(default_factory=dict)
    num_test_seen: int = 0
    num_test_unseen: int = 0

    def to_dict(self) -> dict:
        return {"mca_u": self.mca_u, "mca_s": self.mca_s, "h": self.h,
                "per_class_acc": dict(self.per_class_acc),
                "num_test_seen": self.num_test_seen, "num_test_unseen": self.num_test_unseen}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mca_u", "mca_s", "h", "num_test_unseen", "num_test_seen"])
        w.writerow([repr(self.mca_u), repr(self.mca_s), repr(self.h),
                    self.num_test_unseen, self.num_test_seen])
        return buf.getvalue()

    def to_table(self, method: str = "DCEN") -> str:
        width = max(len(method), 6)
        lines = [f"{'Method':<{width}} | MCA_u | MCA_s |     H",
                 f"{'-' * width}-+-------+-------+------",
                 f"{method:<{width}} | {self.mca_u:5.1f} | {self.mca_s:5.1f} | {self.h:5.1f}"]
        return "\n".join(lines) + "\n"


def evaluate_gzsl(enc: EncoderSet, ds: GZSLDataset) -> GZSLReport:
    """Predict over the union label space; MCA_s on test_seen, MCA_u on test_unseen."""
    x_s, y_s = ds.subset("test_seen")
    x_u, y_u = ds.subset("test_unseen")
    if len(y_s) == 0 or len(y_u) == 0:
        raise ValueError("dataset needs non-empty test_seen and test_unseen splits")
    cls_units = class_embeddings(enc, ds.attributes.values)
    p_s = nearest_class(embed_images(enc, x_s), cls_units)
    p_u = nearest_class(embed_images(enc, x_u), cls_units)
    mca_s = mean_class_accuracy(p_s, y_s, ds.seen_classes)
    mca_u = mean_class_accuracy(p_u, y_u, ds.unseen_classes)
    per_class = {**per_class_accuracy(p_s, y_s), **per_class_accuracy(p_u, y_u)}
    ids = ds.attributes.class_ids
    return GZSLReport(
        mca_u=mca_u, mca_s=mca_s, h=harmonic_mean(mca_u, mca_s),
        per_class_acc={ids[c]: per_class[c] for c in sorted(per_class)},
        num_test_seen=len(y_s), num_test_unseen=len(y_u),
    )


def evaluate_split(enc: EncoderSet, ds: GZSLDataset, split: str) -> float:
    """Union-space MCA on one split (used for validation during training)."""
    x, y = ds.subset(split)
    classes = ds.unseen_classes if split == "test_unseen" else ds.seen_classes
    preds = nearest_class(embed_images(enc, x), class_embeddings(enc, ds.attributes.values))
    return mean_class_accuracy(preds, y, classes)
