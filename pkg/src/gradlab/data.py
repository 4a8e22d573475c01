"""Datasets: IDX loading, synthetic blobs, and PGM/PPM image dumps."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

IDX_LABEL_MAGIC = 0x00000801
IDX_IMAGE_MAGIC = 0x00000803


@dataclass
class Dataset:
    """Inputs scaled to [0, 1] with integer labels."""

    inputs: np.ndarray
    labels: np.ndarray
    name: str = "dataset"
    splits: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.inputs.shape[0] < 1:
            raise ConfigError("dataset needs at least one sample")
        if self.labels.shape[0] != self.inputs.shape[0]:
            raise ConfigError("one label per sample required")
        if self.inputs.min() < 0.0 or self.inputs.max() > 1.0:
            raise ConfigError("dataset inputs must lie in [0, 1]")

    @property
    def num_classes(self):
        return int(self.labels.max()) + 1

    def subset(self, indices, name=None):
        return Dataset(self.inputs[indices], self.labels[indices], name or self.name)


def _open_maybe_gzip(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx(path, expected_magic, role):
    with _open_maybe_gzip(path) as fh:
        header = fh.read(4)
        if len(header) < 4:
            raise DataError(f"{path}: truncated IDX header at offset 0")
        (magic,) = struct.unpack(">I", header)
        if magic != expected_magic:
            raise DataError(
                f"{path}: bad IDX magic 0x{magic:08x} at offset 0 for {role} "
                f"(expected 0x{expected_magic:08x})"
            )
        ndim = magic & 0xFF
        dims = []
        for i in range(ndim):
            raw = fh.read(4)
            if len(raw) < 4:
                raise DataError(f"{path}: truncated IDX dimension header at offset {4 + 4 * i}")
            dims.append(struct.unpack(">I", raw)[0])
        count = int(np.prod(dims))
        payload = fh.read(count)
        if len(payload) < count:
            raise DataError(
                f"{path}: truncated IDX payload, expected {count} bytes, got {len(payload)}"
            )
        return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path=None, name="idx") -> Dataset:
    """Load an IDX image file (big-endian, optionally gzipped), /255 scaled.

    With no labels file, labels are all zero (placeholder for unlabeled
    fixtures).
    """
    images = _read_idx(images_path, IDX_IMAGE_MAGIC, "images")
    if labels_path is not None:
        labels = _read_idx(labels_path, IDX_LABEL_MAGIC, "labels")
        if labels.shape[0] != images.shape[0]:
            raise DataError(
                f"label count {labels.shape[0]} != image count {images.shape[0]}"
            )
    else:
        labels = np.zeros(images.shape[0], dtype=np.uint8)
    return Dataset(images.astype(np.float64) / 255.0, labels.astype(np.int64), name=name)


def write_idx_images(path, images_u8):
    """Write uint8 images (n, h, w) in IDX format."""
    images_u8 = np.ascontiguousarray(images_u8, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, *images_u8.shape))
        fh.write(images_u8.tobytes())


def write_idx_labels(path, labels_u8):
    labels_u8 = np.ascontiguousarray(labels_u8, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABEL_MAGIC, labels_u8.shape[0]))
        fh.write(labels_u8.tobytes())


def synth_blobs(m: int, classes: int, n: int, spread: float, rng: np.random.Generator) -> Dataset:
    """Gaussian blobs around per-class uniform centers, clamped to [0, 1]."""
    if m < 1 or classes < 1 or n < 1:
        raise ConfigError("synth_blobs needs m, classes, n >= 1")
    centers = rng.uniform(0.2, 0.8, size=(classes, m))
    labels = rng.integers(0, classes, size=n)
    samples = centers[labels] + spread * rng.standard_normal((n, m))
    return Dataset(np.clip(samples, 0.0, 1.0), labels, name=f"blobs{m}x{classes}")


def write_pgm(path, image):
    """8-bit binary PGM; values clamped to [0, 1] then scaled to 255."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ConfigError(f"PGM needs a 2-d image, got shape {image.shape}")
    data = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode())
        fh.write(data.tobytes())


def write_ppm(path, image):
    """8-bit binary PPM for (3, h, w) or (h, w, 3) arrays in [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ConfigError(f"PPM needs a 3-d image, got shape {image.shape}")
    if image.shape[0] == 3 and image.shape[2] != 3:
        image = image.transpose(1, 2, 0)
    if image.shape[2] != 3:
        raise ConfigError(f"PPM needs 3 channels, got shape {image.shape}")
    data = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{image.shape[1]} {image.shape[0]}\n255\n".encode())
        fh.write(data.tobytes())


def image_grid(images, cols: int):
    """Tile a stack of equal-size 2-d images into one grid image."""
    images = np.asarray(images, dtype=np.float64)
    n, h, w = images.shape
    rows = (n + cols - 1) // cols
    grid = np.zeros((rows * h, cols * w))
    for i in range(n):
        r, c = divmod(i, cols)
        grid[r * h : (r + 1) * h, c * w : (c + 1) * w] = images[i]
    return grid
