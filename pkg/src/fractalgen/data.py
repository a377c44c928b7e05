"""CIFAR-10 binary records, the norm_flip transform, batching and synthetic datasets."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import FormatError

RECORD_BYTES = 3073
IMAGE_SHAPE = (3, 32, 32)
TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILE = "test_batch.bin"


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (count, C, H, W) float32 in [0, 1]
    labels: np.ndarray  # (count,) int64
    split: str = "train"
    num_classes: int = 10

    def __post_init__(self) -> None:
        if self.images.ndim != 4:
            raise ValueError(f"images must be (count, C, H, W), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    def head(self, n: int) -> Dataset:
        return Dataset(self.images[:n], self.labels[:n], self.split, self.num_classes)


# -- CIFAR-10 binary format ----------------------------------------------------


def parse_cifar10_records(data: bytes, split: str = "train") -> Dataset:
    """Decode 3073-byte records: label byte, then 1024 R, 1024 G, 1024 B pixel bytes."""
    if len(data) % RECORD_BYTES:
        raise FormatError(f"{len(data)} bytes is not a whole number of {RECORD_BYTES}-byte records")
    raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = raw[:, 0].astype(np.int64)
    if len(labels) and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise FormatError(f"record {bad} has label byte {labels[bad]} > 9")
    images = raw[:, 1:].reshape(-1, *IMAGE_SHAPE).astype(np.float32) / np.float32(255.0)
    return Dataset(images, labels, split, 10)


def cifar10_record_bytes(dataset: Dataset) -> bytes:
    """Inverse of :func:`parse_cifar10_records` for 3x32x32 images with labels < 10."""
    if dataset.images.shape[1:] != IMAGE_SHAPE:
        raise FormatError(f"CIFAR-10 records hold {IMAGE_SHAPE} images, got {dataset.images.shape[1:]}")
    if len(dataset) and dataset.labels.max() > 9:
        raise FormatError("CIFAR-10 labels are single bytes in [0, 9]")
    pixels = np.rint(np.clip(dataset.images, 0.0, 1.0) * 255.0).astype(np.uint8)
    out = np.empty((len(dataset), RECORD_BYTES), np.uint8)
    out[:, 0] = dataset.labels
    out[:, 1:] = pixels.reshape(len(dataset), RECORD_BYTES - 1)
    return out.tobytes()


def read_cifar10_file(path: str | os.PathLike, split: str = "train") -> Dataset:
    return parse_cifar10_records(Path(path).read_bytes(), split)


def write_cifar10_file(path: str | os.PathLike, dataset: Dataset) -> Path:
    path = Path(path)
    path.write_bytes(cifar10_record_bytes(dataset))
    return path


def load_cifar10(directory: str | os.PathLike) -> tuple[Dataset, Dataset]:
    """Load ``data_batch_{1..5}.bin`` as train and ``test_batch.bin`` as val."""
    directory = Path(directory)
    if not (directory / TRAIN_FILES[0]).exists() and (directory / "cifar-10-batches-bin").is_dir():
        directory = directory / "cifar-10-batches-bin"
    missing = [f for f in (*TRAIN_FILES, TEST_FILE) if not (directory / f).exists()]
    if missing:
        raise FileNotFoundError(f"CIFAR-10 binary files missing from {directory}: {missing}")
    parts = [read_cifar10_file(directory / f) for f in TRAIN_FILES]
    train = Dataset(
        np.concatenate([p.images for p in parts]),
        np.concatenate([p.labels for p in parts]),
        "train",
    )
    val = read_cifar10_file(directory / TEST_FILE, "val")
    return train, val


# -- norm_flip -----------------------------------------------------------------


@dataclass(frozen=True)
class TransformConfig:
    mean: tuple[float, float, float] = (0.5, 0.5, 0.5)
    std: tuple[float, float, float] = (0.25, 0.25, 0.25)
    flip_p: float = 0.5

    def __post_init__(self) -> None:
        if min(self.std) <= 0:
            raise ValueError("std must be positive")
        if not 0.0 <= self.flip_p <= 1.0:
            raise ValueError("flip_p must lie in [0, 1]")

    @classmethod
    def fit(cls, dataset: Dataset, flip_p: float = 0.5) -> TransformConfig:
        """Per-channel mean and population std over every pixel of ``dataset``."""
        x = dataset.images.astype(np.float64)
        mean = x.mean(axis=(0, 2, 3))
        std = x.std(axis=(0, 2, 3))
        std = np.where(std > 0, std, 1.0)
        return cls(tuple(float(v) for v in mean), tuple(float(v) for v in std), flip_p)


def norm_flip(
    images: np.ndarray, config: TransformConfig, rng: np.random.Generator | None = None, mode: str = "train"
) -> np.ndarray:
    """Train: flip each image left-right with prob ``flip_p``, then normalize.  Eval: normalize."""
    x = images
    if mode == "train" and config.flip_p > 0:
        if rng is None:
            raise ValueError("train-mode norm_flip needs an rng")
        flip = rng.random(len(x)) < config.flip_p
        if flip.any():
            x = x.copy()
            x[flip] = x[flip][..., ::-1]
    mean = np.asarray(config.mean, np.float32).reshape(1, -1, 1, 1)
    inv_std = (1.0 / np.asarray(config.std, np.float32)).reshape(1, -1, 1, 1)
    return ((x - mean) * inv_std).astype(np.float32, copy=False)


def hflip(images: np.ndarray) -> np.ndarray:
    return images[..., ::-1].copy()


# -- batching ------------------------------------------------------------------


def batch_order(n: int, rng: np.random.Generator | None, shuffle: bool) -> np.ndarray:
    if not shuffle:
        return np.arange(n)
    if rng is None:
        raise ValueError("shuffling needs an rng")
    return rng.permutation(n)


def batches(
    dataset: Dataset, batch_size: int, rng: np.random.Generator | None = None, shuffle: bool = True
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield (images, labels) minibatches; the final partial batch is included."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = batch_order(len(dataset), rng, shuffle)
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        yield dataset.images[idx], dataset.labels[idx]


# -- synthetic data ------------------------------------------------------------


def synthetic_dataset(
    kind: str,
    count: int,
    classes: int,
    rng: np.random.Generator | int,
    image_shape: tuple[int, int, int] = IMAGE_SHAPE,
    noise: float = 0.1,
    split: str = "train",
) -> Dataset:
    """Balanced class-conditional images with pixel values clipped to [0, 1].

    ``separable_blobs``: class ``k`` adds a fixed per-channel offset pattern to a
    grey background, so channel means separate the classes linearly.
    ``striped_textures``: class ``k`` draws sinusoidal stripes with a
    class-specific orientation and frequency.
    Gaussian pixel noise of std ``noise`` is added in both cases.
    """
    if count < classes:
        raise ValueError("count must be >= classes")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    c, h, w = image_shape
    labels = np.arange(count) % classes
    labels = labels[rng.permutation(count)]
    if kind == "separable_blobs":
        offsets = _blob_offsets(classes, c)
        images = 0.5 + np.broadcast_to(offsets[labels][:, :, None, None], (count, c, h, w))
    elif kind == "striped_textures":
        yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        images = np.empty((count, c, h, w))
        for k in range(classes):
            angle = np.pi * k / classes
            freq = 2 * np.pi * (1 + k % 3) / max(h, w) * 2
            pattern = 0.5 + 0.35 * np.sin(freq * (np.cos(angle) * xx + np.sin(angle) * yy))
            images[labels == k] = pattern
        phase = rng.uniform(-0.05, 0.05, size=(count, 1, 1, 1))
        images = images + phase
    else:
        raise ValueError(f"unknown synthetic dataset kind {kind!r}")
    if noise > 0:
        images = images + rng.normal(0.0, noise, size=images.shape)
    images = np.clip(images, 0.0, 1.0).astype(np.float32)
    return Dataset(images, labels.astype(np.int64), split, classes)


def _blob_offsets(classes: int, channels: int) -> np.ndarray:
    """Distinct per-channel offsets in [-0.3, 0.3], one row per class."""
    if classes == 1:
        return np.zeros((1, channels))
    angles = 2 * np.pi * np.arange(classes) / classes
    out = np.zeros((classes, channels))
    out[:, 0] = 0.3 * np.cos(angles)
    if channels > 1:
        out[:, 1] = 0.3 * np.sin(angles)
    if channels > 2:
        out[:, 2] = 0.3 * np.linspace(-1, 1, classes)
    return out
