"""Dataset ingestion: CIFAR-10 binary batches plus a synthetic stand-in.

The binary format is six files of 10,000 records, each record one label
byte followed by 3,072 pixel bytes (red plane, green plane, blue plane,
row-major 32x32).  Images normalize to [0,1] and then standardize with
the usual per-channel statistics.

The synthetic dataset exists so the training path can run where the real
files are absent: seeded class-conditional Gaussian blobs, 10 classes,
same shape and value range as the real data after normalization.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Dataset",
    "CHANNEL_MEAN",
    "CHANNEL_STD",
    "TRAIN_FILES",
    "TEST_FILE",
    "load_cifar10",
    "normalize_images",
    "synthetic_dataset",
    "hflip",
    "crop_at",
    "augment_batch",
    "default_data_dir",
]

RECORD_BYTES = 3073
RECORDS_PER_FILE = 10_000
IMAGE_SIZE = 32
PAD = 4
TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILE = "test_batch.bin"
CHANNEL_MEAN = np.array([0.4914, 0.4822, 0.4465])
CHANNEL_STD = np.array([0.2023, 0.1994, 0.2010])


@dataclass
class Dataset:
    """Images (N, 3, 32, 32) float, labels (N,) int64."""

    images: np.ndarray
    labels: np.ndarray
    name: str

    def __len__(self) -> int:
        return self.images.shape[0]

    def take(self, n: int) -> "Dataset":
        return Dataset(self.images[:n], self.labels[:n], f"{self.name}[:{n}]")


def default_data_dir() -> str | None:
    """Directory of real data batches, if the environment points at one."""
    d = os.environ.get("DCTNET_CIFAR10_DIR")
    if d and Path(d).is_dir():
        return d
    return None


def _read_batch_file(path: Path) -> tuple[np.ndarray, np.ndarray]:
    raw = path.read_bytes()
    expected = RECORD_BYTES * RECORDS_PER_FILE
    if len(raw) != expected:
        whole, leftover = divmod(len(raw), RECORD_BYTES)
        raise ValueError(
            f"{path}: expected {expected} bytes ({RECORDS_PER_FILE} records of "
            f"{RECORD_BYTES}), got {len(raw)} ({whole} whole records, "
            f"{leftover} trailing bytes at offset {whole * RECORD_BYTES})"
        )
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(RECORDS_PER_FILE, RECORD_BYTES)
    labels = arr[:, 0].astype(np.int64)
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        raise ValueError(f"{path}: label {labels[bad[0]]} out of range at record {bad[0]}")
    images = arr[:, 1:].reshape(-1, 3, IMAGE_SIZE, IMAGE_SIZE)
    return images, labels


def normalize_images(images_u8: np.ndarray, dtype=np.float32) -> np.ndarray:
    x = images_u8.astype(dtype) / dtype(255.0)
    mean = CHANNEL_MEAN.astype(dtype).reshape(1, 3, 1, 1)
    std = CHANNEL_STD.astype(dtype).reshape(1, 3, 1, 1)
    return (x - mean) / std


def load_cifar10(data_dir, dtype=np.float32) -> tuple[Dataset, Dataset]:
    base = Path(data_dir)
    missing = [f for f in (*TRAIN_FILES, TEST_FILE) if not (base / f).is_file()]
    if missing:
        raise FileNotFoundError(f"{base}: missing batch files {', '.join(missing)}")
    train_parts = [_read_batch_file(base / f) for f in TRAIN_FILES]
    train_images = np.concatenate([p[0] for p in train_parts])
    train_labels = np.concatenate([p[1] for p in train_parts])
    test_images, test_labels = _read_batch_file(base / TEST_FILE)
    return (
        Dataset(normalize_images(train_images, dtype), train_labels, "cifar10-train"),
        Dataset(normalize_images(test_images, dtype), test_labels, "cifar10-test"),
    )


_CLASS_GEOMETRY_SEED = 424_242


def synthetic_dataset(n: int, seed: int, dtype=np.float32, name: str = "synthetic") -> Dataset:
    """Class-conditional Gaussian blobs with class-balanced labels.

    Each class has a fixed blob center, width, and channel tint drawn from a
    constant geometry seed, so every split describes the same ten classes
    and a model trained on one split can generalize to another.  The `seed`
    argument controls only the sampling: label order and pixel noise.
    """
    world = np.random.default_rng(_CLASS_GEOMETRY_SEED)
    classes = 10
    centers = world.uniform(6, 26, size=(classes, 2))
    widths = world.uniform(2.5, 5.0, size=classes)
    tints = world.uniform(-1.0, 1.0, size=(classes, 3))
    rng = np.random.default_rng(seed)
    labels = np.arange(n, dtype=np.int64) % classes
    rng.shuffle(labels)
    yy, xx = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE]
    images = np.empty((n, 3, IMAGE_SIZE, IMAGE_SIZE), dtype=dtype)
    for i, lab in enumerate(labels):
        cy, cx = centers[lab]
        blob = np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * widths[lab] ** 2)))
        img = tints[lab][:, None, None] * blob[None] * 2.0
        img = img + rng.normal(0.0, 0.6, size=img.shape)
        images[i] = img.astype(dtype)
    return Dataset(images, labels, name)


def hflip(images: np.ndarray) -> np.ndarray:
    return images[..., ::-1]


def crop_at(padded: np.ndarray, top: int, left: int, size: int = IMAGE_SIZE) -> np.ndarray:
    return padded[..., top : top + size, left : left + size]


def augment_batch(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Zero-pad by 4, random crop back to 32, then flip half the images."""
    n = images.shape[0]
    padded = np.pad(images, ((0, 0), (0, 0), (PAD, PAD), (PAD, PAD)))
    tops = rng.integers(0, 2 * PAD + 1, size=n)
    lefts = rng.integers(0, 2 * PAD + 1, size=n)
    flips = rng.random(n) < 0.5
    out = np.empty_like(images)
    for i in range(n):
        crop = crop_at(padded[i], tops[i], lefts[i])
        out[i] = hflip(crop) if flips[i] else crop
    return out
