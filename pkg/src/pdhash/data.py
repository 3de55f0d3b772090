"""Labeled image datasets: PDHD files, MNIST IDX ingestion, synthetic blobs."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import SplitMix64

DATA_MAGIC = b"PDHD"
DATA_VERSION = 1
_SHAPE_FLAT, _SHAPE_HWC = 0, 1

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataFormatError(ValueError):
    pass


@dataclass
class LabeledDataset:
    images: np.ndarray  # (N_p, m) or (N_p, H, W, C), float64
    labels: np.ndarray  # (N_p,), int64 in [0, n_classes)
    n_classes: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.images.ndim not in (2, 4):
            raise DataFormatError(f"images must be (N, m) or (N, H, W, C), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DataFormatError("image and label counts differ")
        if self.n_classes < 1:
            raise DataFormatError("n_classes must be >= 1")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataFormatError(f"labels must lie in [0, {self.n_classes})")
        if not np.all(np.isfinite(self.images)):
            raise DataFormatError("images contain non-finite values")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, ...]:
        return tuple(self.images.shape[1:])

    def class_indices(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.labels == c) for c in range(self.n_classes)]

    def subset_per_class(self, per_class: int, offset: int = 0) -> "LabeledDataset":
        """The ``per_class`` images following the first ``offset`` of each class, in file order."""
        keep = []
        for c, idx in enumerate(self.class_indices()):
            chosen = idx[offset : offset + per_class]
            if len(chosen) < per_class:
                raise DataFormatError(f"class {c} has only {len(idx) - offset} images past offset {offset}")
            keep.append(chosen)
        keep = np.sort(np.concatenate(keep))
        return LabeledDataset(self.images[keep], self.labels[keep], self.n_classes)


def save_pdhd(path, ds: LabeledDataset) -> None:
    if ds.n_classes > 0xFFFF + 1:
        raise DataFormatError("too many classes for u16 labels")
    shape = ds.image_shape
    with open(path, "wb") as f:
        f.write(DATA_MAGIC + struct.pack("<II", DATA_VERSION, len(ds)))
        if len(shape) == 1:
            f.write(struct.pack("<II", _SHAPE_FLAT, shape[0]))
        else:
            f.write(struct.pack("<IIII", _SHAPE_HWC, *shape))
        f.write(struct.pack("<I", ds.n_classes))
        f.write(np.ascontiguousarray(ds.images, dtype="<f4").tobytes())
        f.write(ds.labels.astype("<u2").tobytes())


def load_pdhd(path) -> LabeledDataset:
    raw = Path(path).read_bytes()
    if raw[:4] != DATA_MAGIC:
        raise DataFormatError(f"{path}: not a PDHD dataset")
    try:
        version, count, tag = struct.unpack_from("<III", raw, 4)
        off = 16
        if version != DATA_VERSION:
            raise DataFormatError(f"{path}: unsupported dataset version {version}")
        if tag == _SHAPE_FLAT:
            shape = struct.unpack_from("<I", raw, off)
        elif tag == _SHAPE_HWC:
            shape = struct.unpack_from("<III", raw, off)
        else:
            raise DataFormatError(f"{path}: unknown shape tag {tag}")
        off += 4 * len(shape)
        (n_classes,) = struct.unpack_from("<I", raw, off)
        off += 4
    except struct.error as e:
        raise DataFormatError(f"{path}: truncated header") from e
    m = int(np.prod(shape))
    need = off + 4 * count * m + 2 * count
    if len(raw) != need:
        raise DataFormatError(f"{path}: expected {need} bytes, found {len(raw)}")
    images = np.frombuffer(raw, dtype="<f4", count=count * m, offset=off).reshape((count,) + shape)
    labels = np.frombuffer(raw, dtype="<u2", count=count, offset=off + 4 * count * m)
    return LabeledDataset(images.astype(np.float64), labels.astype(np.int64), n_classes)


# --- MNIST IDX -------------------------------------------------------------------

def _open_maybe_gz(path):
    path = Path(path)
    with open(path, "rb") as f:
        gz = f.read(2) == b"\x1f\x8b"
    return gzip.open(path, "rb") if gz else open(path, "rb")


def read_idx_images(path) -> np.ndarray:
    """uint8 IDX image file -> float64 (N, rows, cols, 1) scaled to [0, 1]."""
    with _open_maybe_gz(path) as f:
        raw = f.read()
    if len(raw) < 16:
        raise DataFormatError(f"{path}: truncated IDX header")
    magic, count, rows, cols = struct.unpack_from(">IIII", raw, 0)
    if magic != IDX_IMAGES_MAGIC:
        raise DataFormatError(f"{path}: bad IDX image magic {magic:#010x}")
    if len(raw) != 16 + count * rows * cols:
        raise DataFormatError(f"{path}: pixel payload size mismatch")
    pix = np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(count, rows, cols, 1)
    return pix.astype(np.float64) / 255.0


def read_idx_labels(path) -> np.ndarray:
    with _open_maybe_gz(path) as f:
        raw = f.read()
    if len(raw) < 8:
        raise DataFormatError(f"{path}: truncated IDX header")
    magic, count = struct.unpack_from(">II", raw, 0)
    if magic != IDX_LABELS_MAGIC:
        raise DataFormatError(f"{path}: bad IDX label magic {magic:#010x}")
    if len(raw) != 8 + count:
        raise DataFormatError(f"{path}: label payload size mismatch")
    return np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)


def write_idx(images_path, labels_path, images_u8: np.ndarray, labels: np.ndarray) -> None:
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    count, rows, cols = images_u8.shape[:3]
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, count, rows, cols) + images_u8.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, count) + np.asarray(labels, np.uint8).tobytes())


def load_idx_pair(images_path, labels_path, n_classes: int = 10) -> LabeledDataset:
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise DataFormatError("IDX image and label counts differ")
    return LabeledDataset(images, labels, n_classes)


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def find_mnist(directory, split: str) -> tuple[Path, Path] | None:
    """Locate an MNIST IDX pair (plain or .gz) in ``directory``."""
    directory = Path(directory)
    found = []
    for stem in MNIST_FILES[split]:
        for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
            if (directory / name).exists():
                found.append(directory / name)
                break
    return tuple(found) if len(found) == 2 else None


def load_dataset(path) -> LabeledDataset:
    """Load a PDHD file, or an MNIST IDX pair given as ``images.idx,labels.idx``."""
    path = str(path)
    if "," in path:
        img, lbl = path.split(",", 1)
        return load_idx_pair(img, lbl)
    return load_pdhd(path)


# --- synthetic Gaussian blobs ----------------------------------------------------

BLOB_STD = 1.0
_MARGIN = 6.0 * BLOB_STD


def blob_centers(n_classes: int, dim: int, spread: float) -> np.ndarray:
    """Class centers spaced evenly on a circle of radius ``spread`` (a line for dim 1)."""
    centers = np.zeros((n_classes, dim))
    if dim == 1:
        centers[:, 0] = spread * (np.arange(n_classes) - (n_classes - 1) / 2)
    else:
        angle = 2.0 * np.pi * np.arange(n_classes) / n_classes
        centers[:, 0] = spread * np.cos(angle)
        centers[:, 1] = spread * np.sin(angle)
    return centers


def make_blobs(n_classes: int, per_class: int, dim: int, spread: float, seed: int):
    """Isotropic Gaussian class blobs mapped affinely into [0, 1].

    The affine map depends only on the centers, so draws with different seeds
    share one distribution. Returns the dataset and a JSON-ready description of
    the generating mixture in the normalized coordinates.
    """
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    if per_class < 2:
        raise ValueError("need at least 2 samples per class to form pairs")
    if dim < 1 or spread < 0:
        raise ValueError("dim must be >= 1 and spread >= 0")
    rng = SplitMix64(seed)
    centers = blob_centers(n_classes, dim, spread)
    lo = centers.min() - _MARGIN
    scale = (centers.max() + _MARGIN) - lo
    raw = np.repeat(centers, per_class, axis=0) + BLOB_STD * rng.normal((n_classes * per_class, dim))
    images = np.clip((raw - lo) / scale, 0.0, 1.0)
    # stored as float32 on disk; keep in-memory data identical to a reload
    images = images.astype(np.float32).astype(np.float64)
    labels = np.repeat(np.arange(n_classes), per_class)
    description = {
        "kind": "isotropic-gaussian-mixture",
        "n_classes": n_classes,
        "dim": dim,
        "spread": spread,
        "seed": seed,
        "class_prior": [1.0 / n_classes] * n_classes,
        "centers": ((centers - lo) / scale).tolist(),
        "std": BLOB_STD / scale,
        "affine": {"offset": float(lo), "scale": float(scale)},
        "clipped_to_unit_box": True,
    }
    return LabeledDataset(images, labels, n_classes), description
