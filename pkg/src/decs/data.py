"""Dataset loading (IDX, CSV), synthetic blobs and normalization."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    truth: Optional[np.ndarray] = None
    image_shape: Optional[Tuple[int, ...]] = None
    name: str = ""

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if self.image_shape is not None and int(np.prod(self.image_shape)) != self.features.shape[1]:
            raise ValueError(f"image_shape {self.image_shape} does not match "
                             f"feature dim {self.features.shape[1]}")
        if self.truth is not None and len(self.truth) != len(self.features):
            raise ValueError("truth length does not match sample count")
        self.features.setflags(write=False)
        if self.truth is not None:
            self.truth.setflags(write=False)

    @property
    def n_samples(self):
        return self.features.shape[0]


def minmax_normalize(x):
    """Scale every column to [0, 1]; constant columns become 0."""
    x = np.asarray(x, dtype=np.float64)
    lo = x.min(axis=0)
    span = x.max(axis=0) - lo
    out = np.zeros_like(x)
    ok = span > 0
    out[:, ok] = (x[:, ok] - lo[ok]) / span[ok]
    return out


# ---------------------------------------------------------------------------
# IDX

def _read_idx(path, expected_magic):
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 8:
        raise DataFormatError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic != expected_magic:
        raise DataFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise DataFormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    size = int(np.prod(dims, dtype=np.int64))
    if len(buf) - header != size:
        raise DataFormatError(f"{path}: payload has {len(buf) - header} bytes, expected {size}")
    return np.frombuffer(buf, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path=None, name=""):
    """Load big-endian IDX unsigned-byte images (and optional labels), pixels scaled to [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    n, h, w = images.shape
    truth = None
    if labels_path is not None:
        labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
        if labels.shape[0] != n:
            raise DataFormatError(f"{n} images but {labels.shape[0]} labels")
        truth = labels.astype(np.int64)
    feats = images.reshape(n, h * w).astype(np.float64) / 255.0
    return Dataset(feats, truth, (h, w), name or str(images_path))


def merge_datasets(*datasets, name=""):
    """Concatenate e.g. train and test splits."""
    feats = np.concatenate([d.features for d in datasets])
    truths = [d.truth for d in datasets]
    truth = None if any(t is None for t in truths) else np.concatenate(truths)
    shapes = {d.image_shape for d in datasets}
    if len(shapes) != 1:
        raise ValueError("cannot merge datasets with different image shapes")
    return Dataset(feats, truth, shapes.pop(), name)


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    n, h, w = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        f.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


# ---------------------------------------------------------------------------
# CSV

def load_csv(path, has_label_column=False, normalize=True, name=""):
    rows = []
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
            if len(rows[-1]) != len(rows[0]):
                raise DataFormatError(f"{path}:{lineno}: expected {len(rows[0])} columns, "
                                      f"got {len(rows[-1])}")
    if not rows:
        raise DataFormatError(f"{path}: empty CSV")
    arr = np.array(rows, dtype=np.float64)
    truth = None
    if has_label_column:
        if arr.shape[1] < 2:
            raise DataFormatError(f"{path}: label column requested but only one column")
        labels = arr[:, -1]
        if not np.all(labels == np.round(labels)):
            raise DataFormatError(f"{path}: label column is not integer")
        truth = labels.astype(np.int64)
        arr = arr[:, :-1]
    feats = minmax_normalize(arr) if normalize else arr
    return Dataset(feats, truth, None, name or str(path))


def write_csv(path, features, labels=None):
    """Write rows with shortest round-trip float formatting and optional label column."""
    features = np.asarray(features, dtype=np.float64)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        for i, row in enumerate(features):
            cells = [repr(float(v)) for v in row]
            if labels is not None:
                cells.append(str(int(labels[i])))
            w.writerow(cells)


def read_label_column(path, column=-1):
    """Integer labels from one column of a CSV; a non-numeric first row is a header."""
    out = []
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row:
                continue
            cell = row[column].strip()
            try:
                value = float(cell)
            except ValueError:
                if lineno == 1:
                    continue
                raise DataFormatError(f"{path}:{lineno}: non-numeric label {cell!r}") from None
            out.append(int(value))
    if not out:
        raise DataFormatError(f"{path}: no labels")
    return np.array(out, dtype=np.int64)


def write_labels(path, labels, header="label"):
    with open(path, "w") as f:
        f.write(header + "\n")
        for v in labels:
            f.write(f"{int(v)}\n")


# ---------------------------------------------------------------------------
# synthetic data

@dataclass(frozen=True)
class BlobSpec:
    k: int = 4
    per_cluster: int = 500
    dim: int = 16
    center_box: Tuple[float, float] = (-5.0, 5.0)
    sigma: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.per_cluster < 1 or self.dim < 1:
            raise ValueError("k, per_cluster and dim must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if not self.center_box[0] < self.center_box[1]:
            raise ValueError("center_box must be an increasing (low, high) pair")


def make_blobs_raw(spec: BlobSpec):
    """Unnormalized isotropic Gaussian blobs: ``(X, labels, centers)``, grouped by cluster."""
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.center_box
    centers = rng.uniform(lo, hi, size=(spec.k, spec.dim))
    labels = np.repeat(np.arange(spec.k), spec.per_cluster)
    noise = rng.normal(size=(labels.size, spec.dim)) * spec.sigma
    return centers[labels] + noise, labels, centers


def gen_blobs(spec: BlobSpec):
    """Seeded Gaussian blobs, min-max normalized, with truth labels."""
    x, labels, _ = make_blobs_raw(spec)
    return Dataset(minmax_normalize(x), labels, None, f"blobs-k{spec.k}-seed{spec.seed}")
