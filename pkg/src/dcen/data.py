"""GZSL dataset containers, validation, file formats and the synthetic
attribute-rendered dataset generator.

Labels are stored as row indices into the attribute matrix; ``class_ids``
holds the external identifiers used in files.

On-disk layout (all paths chosen by the caller)::

    attributes.csv   class_id,a_0,...,a_{D-1}         one row per class
    split.txt        class_id,seen|unseen             one line per class
    data/index.csv   sample_id,class_id,split,file
    data/<file>      per-sample tensor blob (see write_blob)
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPLITS = ("train", "val", "test_seen", "test_unseen")
BLOB_MAGIC = b"DCT1"


class DatasetFormatError(ValueError):
    """A dataset file could not be parsed; the message names file and record."""


class DimensionMismatchError(DatasetFormatError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class AttributeMatrix:
    values: np.ndarray
    class_ids: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(np.asarray(self.values, dtype=np.float64)))
        object.__setattr__(self, "class_ids", tuple(str(c) for c in self.class_ids))

    @property
    def num_classes(self) -> int:
        return self.values.shape[0]

    @property
    def attr_dim(self) -> int:
        return self.values.shape[1]

    def index_of(self, class_id: str) -> int:
        return self.class_ids.index(str(class_id))


@dataclass(frozen=True)
class GZSLDataset:
    """Samples are stacked: ``x`` is (N, H, W, C) images or (N, D) feature vectors."""

    x: np.ndarray
    labels: np.ndarray
    split: np.ndarray
    attributes: AttributeMatrix
    seen_classes: frozenset[int]
    unseen_classes: frozenset[int]
    sample_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen(self.x))
        object.__setattr__(self, "labels", _frozen(np.asarray(self.labels, dtype=np.int64)))
        object.__setattr__(self, "split", _frozen(np.asarray(self.split, dtype="<U11")))
        object.__setattr__(self, "seen_classes", frozenset(int(c) for c in self.seen_classes))
        object.__setattr__(self, "unseen_classes", frozenset(int(c) for c in self.unseen_classes))
        if not self.sample_ids:
            object.__setattr__(self, "sample_ids", tuple(f"{i:06d}" for i in range(len(self.labels))))

    @property
    def feature_mode(self) -> bool:
        return self.x.ndim == 2

    @property
    def seen_sorted(self) -> np.ndarray:
        return np.array(sorted(self.seen_classes), dtype=np.int64)

    def subset(self, split: str):
        idx = np.flatnonzero(self.split == split)
        return self.x[idx], self.labels[idx]

    def count(self, split: str) -> int:
        return int(np.sum(self.split == split))


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    issues: tuple[str, ...] = ()


def validate_dataset(ds: GZSLDataset) -> ValidationReport:
    """Collect every violated dataset invariant instead of raising."""
    issues: list[str] = []
    attrs = ds.attributes
    vals = attrs.values
    if vals.ndim != 2:
        issues.append(f"attribute matrix must be 2-D, got shape {vals.shape}")
    else:
        if len(attrs.class_ids) != vals.shape[0]:
            issues.append("attribute class_ids length differs from number of rows")
        if len(set(attrs.class_ids)) != len(attrs.class_ids):
            issues.append("duplicate class ids in attribute matrix")
        if np.any(vals < 0) or np.any(vals > 1):
            issues.append("attribute values outside [0, 1]")
        for r in np.flatnonzero(~np.any(vals != 0, axis=1)):
            issues.append(f"attribute row {attrs.class_ids[r]} is all-zero")
        _, first, counts = np.unique(vals, axis=0, return_index=True, return_counts=True)
        for r in first[counts > 1]:
            issues.append(f"attribute row {attrs.class_ids[r]} is duplicated")
    overlap = ds.seen_classes & ds.unseen_classes
    if overlap:
        issues.append(f"seen/unseen overlap: classes {sorted(overlap)}")
    n_cls = vals.shape[0] if vals.ndim == 2 else 0
    outside = {c for c in ds.seen_classes | ds.unseen_classes if not 0 <= c < n_cls}
    if outside:
        issues.append(f"split classes without attribute rows: {sorted(outside)}")
    if not (len(ds.labels) == len(ds.split) == ds.x.shape[0] == len(ds.sample_ids)):
        issues.append("sample arrays have inconsistent lengths")
    bad_label = sorted({int(y) for y in ds.labels if not 0 <= y < n_cls})
    if bad_label:
        issues.append(f"labels without attribute rows: {bad_label}")
    bad_tags = sorted(set(ds.split.tolist()) - set(SPLITS))
    if bad_tags:
        issues.append(f"unknown split tags: {bad_tags}")
    for tag in ("train", "val", "test_seen"):
        wrong = sorted({int(y) for y in ds.labels[ds.split == tag]} - ds.seen_classes)
        if wrong:
            issues.append(f"split violation: {tag} samples labeled with non-seen classes {wrong}")
    wrong = sorted({int(y) for y in ds.labels[ds.split == "test_unseen"]} - ds.unseen_classes)
    if wrong:
        issues.append(f"split violation: test_unseen samples labeled with non-unseen classes {wrong}")
    if ds.x.size and (np.nanmin(ds.x) < 0 or np.nanmax(ds.x) > 1) and not ds.feature_mode:
        issues.append("image values outside [0, 1]")
    if ds.x.size and not np.all(np.isfinite(ds.x)):
        issues.append("non-finite sample values")
    return ValidationReport(ok=not issues, issues=tuple(issues))


def datasets_equal(a: GZSLDataset, b: GZSLDataset, atol: float = 1e-6) -> bool:
    return (a.x.shape == b.x.shape
            and np.allclose(a.x, b.x, rtol=0, atol=atol)
            and np.array_equal(a.labels, b.labels)
            and np.array_equal(a.split, b.split)
            and a.sample_ids == b.sample_ids
            and a.attributes.class_ids == b.attributes.class_ids
            and np.array_equal(a.attributes.values, b.attributes.values)
            and a.seen_classes == b.seen_classes
            and a.unseen_classes == b.unseen_classes)


# --- synthetic generator ----------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    num_seen: int = 8
    num_unseen: int = 4
    attr_dim: int = 16
    samples_per_class: int = 40
    image_size: int = 32
    noise_std: float = 0.05
    seed: int = 7

    def __post_init__(self):
        problems = []
        if self.num_seen < 2:
            problems.append(f"num_seen must be >= 2 (got {self.num_seen})")
        if self.num_unseen < 1:
            problems.append(f"num_unseen must be >= 1 (got {self.num_unseen})")
        if self.attr_dim < 4:
            problems.append(f"attr_dim must be >= 4 (got {self.attr_dim})")
        if self.image_size < 16:
            problems.append(f"image_size must be >= 16 (got {self.image_size})")
        if self.samples_per_class < 1:
            problems.append(f"samples_per_class must be >= 1 (got {self.samples_per_class})")
        if self.noise_std < 0:
            problems.append(f"noise_std must be >= 0 (got {self.noise_std})")
        if problems:
            raise ValueError("; ".join(problems))


def seen_split_counts(n: int) -> tuple[int, int, int]:
    """Per-class (train, val, test_seen) counts for a 70/10/20 split."""
    n_train = (7 * n) // 10
    n_val = n // 10
    return n_train, n_val, n - n_train - n_val


PALETTE = np.array([
    [1.0, 0.15, 0.15], [0.15, 1.0, 0.15], [0.15, 0.15, 1.0],
    [1.0, 1.0, 0.15], [0.15, 1.0, 1.0], [1.0, 0.15, 1.0],
])
PATTERNS = ("solid", "hstripes", "vstripes", "checker", "disk", "ring")


def texture_bank(attr_dim: int, cell: int) -> np.ndarray:
    """One (cell, cell, 3) texture per attribute; each is a distinct
    (color, pattern) pair so an attribute's presence is visually identifiable."""
    yy, xx = np.mgrid[0:cell, 0:cell]
    c = (cell - 1) / 2.0
    rad = np.hypot(yy - c, xx - c)
    bank = np.empty((attr_dim, cell, cell, 3))
    for j in range(attr_dim):
        color = PALETTE[j % len(PALETTE)]
        kind = PATTERNS[(j + j // len(PALETTE)) % len(PATTERNS)]
        period = 4 if (j // 36) % 2 == 0 else 6
        if kind == "solid":
            m = np.ones((cell, cell))
        elif kind == "hstripes":
            m = ((yy // (period // 2)) % 2 == 0).astype(float)
        elif kind == "vstripes":
            m = ((xx // (period // 2)) % 2 == 0).astype(float)
        elif kind == "checker":
            m = (((yy // 2) + (xx // 2)) % 2 == 0).astype(float)
        elif kind == "disk":
            m = (rad <= cell * 0.4).astype(float)
        else:
            m = ((rad <= cell * 0.45) & (rad >= cell * 0.25)).astype(float)
        bank[j] = m[..., None] * color
    return bank


def render_image(attrs_row: np.ndarray, bank: np.ndarray, image_size: int,
                 rng: np.random.Generator, noise_std: float) -> np.ndarray:
    """Place texture j, scaled by attribute j, in a randomly assigned grid cell.

    Per-sample jitter: cell assignment, a small global shift and a mild gain.
    """
    d, cell = bank.shape[0], bank.shape[1]
    grid = image_size // cell
    img = np.zeros((image_size, image_size, 3))
    cells = rng.permutation(grid * grid)[:d]
    gain = rng.uniform(0.9, 1.1)
    for j, c in enumerate(cells):
        r, q = divmod(int(c), grid)
        img[r * cell:(r + 1) * cell, q * cell:(q + 1) * cell] = attrs_row[j] * gain * bank[j]
    shift = rng.integers(-1, 2, size=2)
    img = np.roll(img, tuple(shift), axis=(0, 1))
    if noise_std > 0:
        img = img + rng.normal(0.0, noise_std, img.shape)
    return np.clip(img, 0.0, 1.0)


def generate_synthetic(cfg: SynthConfig) -> GZSLDataset:
    """Deterministic attribute-rendered GZSL dataset.

    Classes ``0..num_seen-1`` are seen, the rest unseen. Seen classes split
    70/10/20 into train/val/test_seen; unseen classes contribute only
    test_unseen samples.
    """
    rng = np.random.default_rng(cfg.seed)
    n_cls = cfg.num_seen + cfg.num_unseen
    attrs = rng.uniform(0.0, 1.0, size=(n_cls, cfg.attr_dim))
    grid = int(np.ceil(np.sqrt(cfg.attr_dim)))
    cell = cfg.image_size // grid
    if cell < 2:
        raise ValueError(f"image_size {cfg.image_size} too small for {cfg.attr_dim} attributes")
    bank = texture_bank(cfg.attr_dim, cell)
    xs, labels, splits = [], [], []
    n_train, n_val, n_test = seen_split_counts(cfg.samples_per_class)
    for y in range(n_cls):
        for _ in range(cfg.samples_per_class):
            xs.append(render_image(attrs[y], bank, cfg.image_size, rng, cfg.noise_std))
            labels.append(y)
        if y < cfg.num_seen:
            splits += ["train"] * n_train + ["val"] * n_val + ["test_seen"] * n_test
        else:
            splits += ["test_unseen"] * cfg.samples_per_class
    # float32 storage so writing and reloading is exact
    x = np.stack(xs).astype(np.float32)
    return GZSLDataset(
        x=x, labels=np.array(labels), split=np.array(splits),
        attributes=AttributeMatrix(attrs, tuple(f"c{y:03d}" for y in range(n_cls))),
        seen_classes=frozenset(range(cfg.num_seen)),
        unseen_classes=frozenset(range(cfg.num_seen, n_cls)),
    )


# --- file formats -----------------------------------------------------------

def write_blob(path: Path, arr: np.ndarray) -> None:
    """Blob layout: b"DCT1", uint32 ndim, ndim x uint32 dims, float32 data; all little-endian."""
    arr = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(BLOB_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_blob(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != BLOB_MAGIC:
        raise DatasetFormatError(f"{path}: bad blob magic {raw[:4]!r}")
    try:
        (ndim,) = struct.unpack_from("<I", raw, 4)
        shape = struct.unpack_from(f"<{ndim}I", raw, 8)
    except struct.error as exc:
        raise DatasetFormatError(f"{path}: truncated blob header") from exc
    start = 8 + 4 * ndim
    count = int(np.prod(shape))
    if len(raw) - start != 4 * count:
        raise DatasetFormatError(f"{path}: expected {count} float32 values for shape {shape}, "
                                 f"found {(len(raw) - start) / 4:g}")
    return np.frombuffer(raw, dtype="<f4", offset=start).reshape(shape).astype(np.float32)


def write_attributes(path: Path, attrs: AttributeMatrix) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class_id"] + [f"a_{j}" for j in range(attrs.attr_dim)])
        for cid, row in zip(attrs.class_ids, attrs.values):
            w.writerow([cid] + [repr(float(v)) for v in row])


def read_attributes(path: Path) -> AttributeMatrix:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0] != "class_id":
        raise DatasetFormatError(f"{path}:1: header must start with 'class_id'")
    dim = len(rows[0]) - 1
    ids, vals = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) - 1 != dim:
            raise DimensionMismatchError(
                f"{path}:{lineno}: class {row[0]!r} has {len(row) - 1} attributes, header declares {dim}")
        try:
            vals.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise DatasetFormatError(f"{path}:{lineno}: {exc}") from exc
        ids.append(row[0])
    return AttributeMatrix(np.array(vals).reshape(len(vals), dim), tuple(ids))


def write_split(path: Path, ds: GZSLDataset) -> None:
    with open(path, "w") as fh:
        for i, cid in enumerate(ds.attributes.class_ids):
            if i in ds.seen_classes:
                fh.write(f"{cid},seen\n")
            elif i in ds.unseen_classes:
                fh.write(f"{cid},unseen\n")


def read_split(path: Path, attrs: AttributeMatrix) -> tuple[frozenset[int], frozenset[int]]:
    seen, unseen = set(), set()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.strip().split(",")
        if len(parts) != 2 or parts[1] not in ("seen", "unseen"):
            raise DatasetFormatError(f"{path}:{lineno}: expected 'class_id,seen|unseen', got {line!r}")
        cid = parts[0]
        if cid not in attrs.class_ids:
            raise DatasetFormatError(f"{path}:{lineno}: unknown class id {cid!r}")
        (seen if parts[1] == "seen" else unseen).add(attrs.index_of(cid))
    return frozenset(seen), frozenset(unseen)


def write_data(data_dir: Path, ds: GZSLDataset) -> None:
    data_dir = Path(data_dir)
    (data_dir / "samples").mkdir(parents=True, exist_ok=True)
    with open(data_dir / "index.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "class_id", "split", "file"])
        for sid, x, y, tag in zip(ds.sample_ids, ds.x, ds.labels, ds.split):
            rel = f"samples/{sid}.bin"
            write_blob(data_dir / rel, x)
            w.writerow([sid, ds.attributes.class_ids[y], tag, rel])


def read_data(data_dir: Path, attrs: AttributeMatrix):
    data_dir = Path(data_dir)
    index = data_dir / "index.csv"
    with open(index, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["sample_id", "class_id", "split", "file"]:
        raise DatasetFormatError(f"{index}:1: header must be sample_id,class_id,split,file")
    ids, xs, labels, splits = [], [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 4:
            raise DatasetFormatError(f"{index}:{lineno}: expected 4 fields, got {len(row)}")
        sid, cid, tag, rel = row
        if cid not in attrs.class_ids:
            raise DatasetFormatError(f"{index}:{lineno}: unknown class id {cid!r}")
        if tag not in SPLITS:
            raise DatasetFormatError(f"{index}:{lineno}: unknown split tag {tag!r}")
        x = read_blob(data_dir / rel)
        if xs and x.shape != xs[0].shape:
            raise DimensionMismatchError(f"{index}:{lineno}: sample {sid} has shape {x.shape}, "
                                         f"expected {xs[0].shape}")
        ids.append(sid)
        xs.append(x)
        labels.append(attrs.index_of(cid))
        splits.append(tag)
    if not xs:
        raise DatasetFormatError(f"{index}: no samples")
    return tuple(ids), np.stack(xs), np.array(labels), np.array(splits)


def save_dataset(ds: GZSLDataset, out_dir: Path) -> dict[str, Path]:
    """Write attributes.csv, split.txt and data/ under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"attributes": out_dir / "attributes.csv", "split": out_dir / "split.txt",
             "data": out_dir / "data"}
    write_attributes(paths["attributes"], ds.attributes)
    write_split(paths["split"], ds)
    write_data(paths["data"], ds)
    return paths


def load_dataset(attr_path: Path, split_path: Path, data_path: Path) -> GZSLDataset:
    attrs = read_attributes(attr_path)
    seen, unseen = read_split(split_path, attrs)
    ids, x, labels, splits = read_data(data_path, attrs)
    ds = GZSLDataset(x=x, labels=labels, split=splits, attributes=attrs,
                     seen_classes=seen, unseen_classes=unseen, sample_ids=ids)
    report = validate_dataset(ds)
    if not report.ok:
        raise DatasetFormatError("dataset failed validation: " + "; ".join(report.issues))
    return ds


def load_dataset_dir(root: Path) -> GZSLDataset:
    root = Path(root)
    return load_dataset(root / "attributes.csv", root / "split.txt", root / "data")
