"""CIFAR-10 binary-format ingestion and image augmentation."""

import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import CorruptRecordError, IngestionError

RECORD_BYTES = 1 + 3 * 32 * 32
TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILES = ("test_batch.bin",)
CLASS_NAMES = ("airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck")


@dataclass
class Dataset:
    images: np.ndarray  # float32 [N, 3, H, W] in [0, 1]
    labels: np.ndarray  # int64 [N]
    split: str = "train"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    def take(self, idx):
        return Dataset(self.images[idx], self.labels[idx], self.split)


def read_cifar10_file(path):
    """Raw records of one batch file: ``(uint8 pixels [N, 3, 32, 32], uint8 labels [N])``."""
    if not os.path.isfile(path):
        raise IngestionError("missing CIFAR-10 batch file", path)
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % RECORD_BYTES:
        whole = raw.size // RECORD_BYTES
        raise IngestionError(f"truncated CIFAR-10 file ({raw.size} bytes)", path, whole * RECORD_BYTES)
    records = raw.reshape(-1, RECORD_BYTES)
    labels = records[:, 0]
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise CorruptRecordError(f"label byte {labels[bad[0]]} > 9", path, int(bad[0]) * RECORD_BYTES)
    return records[:, 1:].reshape(-1, 3, 32, 32), labels


def write_cifar10_file(path, pixels, labels):
    """Inverse of :func:`read_cifar10_file` for uint8 pixels [N, 3, 32, 32]."""
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(len(labels), -1)
    rec = np.empty((len(labels), RECORD_BYTES), np.uint8)
    rec[:, 0] = labels
    rec[:, 1:] = pixels
    rec.tofile(path)


def _read_split(root, files):
    parts = [read_cifar10_file(os.path.join(root, f)) for f in files]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def to_dataset(pixels, labels, split):
    return Dataset((pixels.astype(np.float32) / np.float32(255.0)), labels.astype(np.int64), split)


def load_cifar10(path):
    """Load the five training batches and the test batch from ``path``."""
    train = to_dataset(*_read_split(path, TRAIN_FILES), "train")
    test = to_dataset(*_read_split(path, TEST_FILES), "test")
    return train, test


def downscale(pixels, factor):
    """Block-average downsampling of [N, C, H, W] by an integer factor."""
    if factor == 1:
        return pixels
    n, c, h, w = pixels.shape
    x = pixels.astype(np.float32).reshape(n, c, h // factor, factor, w // factor, factor)
    return x.mean(axis=(3, 5))


def load_cifar10_subset(path, classes=(0, 1), n_train=2000, n_test=400, size=32, seed=0):
    """Class-balanced subset with labels remapped to ``0..len(classes)-1``.

    Images are drawn with a seeded generator, so the subset is reproducible.
    """
    rng = np.random.Generator(np.random.PCG64(seed))

    def pick(files, n, split):
        pixels, labels = _read_split(path, files)
        per_class = n // len(classes)
        idx = []
        for c in classes:
            members = np.flatnonzero(labels == c)
            idx.append(np.sort(rng.choice(members, per_class, replace=False)))
        idx = np.concatenate(idx)
        idx = idx[rng.permutation(len(idx))]
        remap = np.full(10, -1, np.int64)
        remap[list(classes)] = np.arange(len(classes))
        images = downscale(pixels[idx], 32 // size) / np.float32(255.0)
        return Dataset(images.astype(np.float32), remap[labels[idx]], split)

    return pick(TRAIN_FILES, n_train, "train"), pick(TEST_FILES, n_test, "test")


@dataclass(frozen=True)
class AugmentConfig:
    shift_fraction: float = 0.1
    zoom_range: float = 0.1
    h_flip: bool = True
    v_flip: bool = True
    rotation_degrees: float = 15.0

    @classmethod
    def off(cls):
        return cls(0.0, 0.0, False, False, 0.0)

    @property
    def is_identity(self):
        return (self.shift_fraction == 0 and self.zoom_range == 0 and self.rotation_degrees == 0
                and not self.h_flip and not self.v_flip)


def _warp(img, zoom, angle, tx, ty):
    """Bilinear resample of a [C, H, W] image under zoom/rotation about the centre plus a shift."""
    c, h, w = img.shape
    cos, sin = np.cos(angle), np.sin(angle)
    # output (row, col) -> input (row, col)
    m = np.array([[cos, sin], [-sin, cos]]) / zoom
    centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    offset = centre - m @ centre - np.array([ty, tx])
    out = np.empty_like(img)
    for ch in range(c):
        out[ch] = ndimage.affine_transform(img[ch], m, offset=offset, order=1, mode="nearest")
    return out


def augment(images, cfg, rng):
    """Independently augment every image of a [N, C, H, W] batch. Labels are untouched by design."""
    if cfg.is_identity:
        return images
    out = np.array(images, copy=True)
    n, _, h, w = images.shape
    for i in range(n):
        img = out[i]
        if cfg.h_flip and rng.random() < 0.5:
            img = img[:, :, ::-1]
        if cfg.v_flip and rng.random() < 0.5:
            img = img[:, ::-1, :]
        tx = rng.uniform(-cfg.shift_fraction, cfg.shift_fraction) * w if cfg.shift_fraction else 0.0
        ty = rng.uniform(-cfg.shift_fraction, cfg.shift_fraction) * h if cfg.shift_fraction else 0.0
        zoom = rng.uniform(1 - cfg.zoom_range, 1 + cfg.zoom_range) if cfg.zoom_range else 1.0
        angle = np.deg2rad(rng.uniform(-cfg.rotation_degrees, cfg.rotation_degrees)) if cfg.rotation_degrees else 0.0
        if tx or ty or zoom != 1.0 or angle:
            img = _warp(np.ascontiguousarray(img), zoom, angle, tx, ty)
        out[i] = img
    return out


def flip_horizontal(images):
    return images[..., ::-1]
