"""Seeded synthetic image classes and IDX-format dataset files.

The synthetic generator gives every class a smooth prototype pattern (a
few Gaussian bumps) and perturbs each sample with an integer translation
plus pixel noise, so spatial attention has real signal to exploit while a
plain pixel-space classifier still works. IDX files are the single
external dataset format: big-endian headers, raw unsigned bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class SyntheticSpec:
    """Class layout and perturbation strength of a generated dataset."""

    num_classes: int = 20
    samples_per_class: int = 30
    image_size: int = 16
    noise_std: float = 0.1
    jitter: int = 2
    pattern_blobs: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1 or self.samples_per_class < 1 or self.image_size < 1:
            raise ValueError("dataset extents must be positive")
        if self.noise_std < 0:
            raise ValueError("noise level cannot be negative")
        if self.jitter < 0 or self.jitter >= self.image_size:
            raise ValueError("jitter must fit inside the image")
        if self.pattern_blobs < 1:
            raise ValueError("prototypes need at least one blob")


@dataclass
class Sample:
    image: np.ndarray
    label: int


class Dataset:
    """Images in [0, 1] with integer labels; prototypes kept when synthetic."""

    def __init__(self, images: np.ndarray, labels: np.ndarray, prototypes: np.ndarray = None):
        self.images = np.asarray(images, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.prototypes = prototypes
        if self.images.ndim != 3 or len(self.images) != len(self.labels):
            raise ValueError("need one label per image")

    def __len__(self):
        return len(self.images)

    def __getitem__(self, i) -> Sample:
        return Sample(self.images[i], int(self.labels[i]))

    @property
    def image_size(self) -> int:
        return self.images.shape[1]

    def class_ids(self) -> np.ndarray:
        return np.unique(self.labels)

    def subset(self, classes) -> "Dataset":
        mask = np.isin(self.labels, np.asarray(classes))
        return Dataset(self.images[mask], self.labels[mask])


def _prototype(rng, size: int, blobs: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    img = np.zeros((size, size))
    for _ in range(blobs):
        cy, cx = rng.uniform(0, size, size=2)
        sigma = rng.uniform(size / 8.0, size / 4.0)
        amp = rng.uniform(0.5, 1.0)
        img += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma ** 2))
    return img / img.max()


def _shift(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Integer translation with zero fill."""
    out = np.zeros_like(img)
    s = img.shape[0]
    ys = slice(max(dy, 0), s + min(dy, 0))
    xs = slice(max(dx, 0), s + min(dx, 0))
    ys_src = slice(max(-dy, 0), s + min(-dy, 0))
    xs_src = slice(max(-dx, 0), s + min(-dx, 0))
    out[ys, xs] = img[ys_src, xs_src]
    return out


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Prototype + translation jitter + Gaussian noise, clipped to [0, 1]."""
    rng = np.random.default_rng(spec.seed)
    protos = np.stack([_prototype(rng, spec.image_size, spec.pattern_blobs)
                       for _ in range(spec.num_classes)])
    images = np.empty((spec.num_classes * spec.samples_per_class,
                       spec.image_size, spec.image_size))
    labels = np.empty(len(images), dtype=np.int64)
    row = 0
    for cls in range(spec.num_classes):
        for _ in range(spec.samples_per_class):
            img = protos[cls]
            if spec.jitter:
                dy, dx = rng.integers(-spec.jitter, spec.jitter + 1, size=2)
                img = _shift(img, int(dy), int(dx))
            if spec.noise_std:
                img = img + rng.normal(0.0, spec.noise_std, img.shape)
            images[row] = np.clip(img, 0.0, 1.0)
            labels[row] = cls
            row += 1
    return Dataset(images, labels, prototypes=protos)


# ---------------------------------------------------------------------------
# IDX files


def _read_exact(path: str, data: bytes, offset: int, count: int) -> bytes:
    if offset + count > len(data):
        raise FormatError(f"{path}: truncated at offset {offset} (need {count} bytes)")
    return data[offset:offset + count]


def load_idx(images_path: str, labels_path: str) -> Dataset:
    """Read an images/labels IDX pair; pixel bytes are scaled to [0, 1]."""
    with open(images_path, "rb") as f:
        raw = f.read()
    magic, count, rows, cols = struct.unpack(">IIII", _read_exact(images_path, raw, 0, 16))
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"{images_path}: bad magic 0x{magic:08x} at offset 0")
    payload = _read_exact(images_path, raw, 16, count * rows * cols)
    if len(raw) != 16 + count * rows * cols:
        raise FormatError(f"{images_path}: {len(raw) - 16 - count * rows * cols} trailing bytes "
                          f"at offset {16 + count * rows * cols}")
    images = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    images = images.reshape(count, rows, cols)

    with open(labels_path, "rb") as f:
        raw = f.read()
    magic, n_labels = struct.unpack(">II", _read_exact(labels_path, raw, 0, 8))
    if magic != IDX_LABELS_MAGIC:
        raise FormatError(f"{labels_path}: bad magic 0x{magic:08x} at offset 0")
    label_bytes = _read_exact(labels_path, raw, 8, n_labels)
    if len(raw) != 8 + n_labels:
        raise FormatError(f"{labels_path}: {len(raw) - 8 - n_labels} trailing bytes "
                          f"at offset {8 + n_labels}")
    if n_labels != count:
        raise FormatError(f"{labels_path}: count {n_labels} at offset 4 "
                          f"does not match {count} images")
    labels = np.frombuffer(label_bytes, dtype=np.uint8).astype(np.int64)
    return Dataset(images, labels)


def save_idx(dataset: Dataset, images_path: str, labels_path: str):
    """Write an images/labels IDX pair; pixels are quantized to bytes."""
    n, rows, cols = dataset.images.shape
    if dataset.labels.min(initial=0) < 0 or dataset.labels.max(initial=0) > 255:
        raise ValueError("IDX labels must fit in one byte")
    pixels = np.clip(np.round(dataset.images * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        f.write(dataset.labels.astype(np.uint8).tobytes())
