"""Dataset ingestion (IDX, CIFAR-10 binary), subsampling and the noise prior."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import XaiganError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32


class DataFormatError(XaiganError, ValueError):
    pass


class BadMagic(DataFormatError):
    pass


class TruncatedPayload(DataFormatError):
    pass


class CountMismatch(DataFormatError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # (n, c, h, w) in [-1, 1]
    labels: np.ndarray | None = None
    name: str = "dataset"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.images.ndim != 4 or len(self.images) < 1:
            raise ValueError(f"{self.name}: images must be a non-empty (n, c, h, w) array")
        if self.labels is not None and len(self.labels) != len(self.images):
            raise CountMismatch(f"{self.name}: {len(self.images)} images but {len(self.labels)} labels")

    def __len__(self):
        return len(self.images)

    @property
    def image_shape(self):
        return self.images.shape[1:]

    def take(self, idx, name=None):
        labels = None if self.labels is None else self.labels[idx]
        return Dataset(self.images[idx], labels, name or self.name, dict(self.meta))


def bytes_to_unit(pixels):
    """Map uint8 pixels [0, 255] affinely onto [-1, 1]."""
    return pixels.astype(np.float64) / 127.5 - 1.0


def unit_to_bytes(x):
    return np.clip(np.rint((np.asarray(x) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def _read(path):
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx(path, expected_magic):
    """Parse a big-endian IDX file of unsigned bytes; returns a uint8 array."""
    raw = _read(path)
    if len(raw) < 4:
        raise TruncatedPayload(f"{path}: file shorter than the IDX magic")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise BadMagic(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedPayload(f"{path}: header needs {header} bytes, file has {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) - header < count:
        raise TruncatedPayload(f"{path}: payload has {len(raw) - header} bytes, dims {dims} need {count}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def bilinear_matrix(n_in, n_out):
    """(n_out, n_in) interpolation matrix, half-pixel centres, edge clamped.

    Rows sum to one, so constants are preserved exactly.
    """
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), lo] += 1.0 - frac
    m[np.arange(n_out), hi] += frac
    return m


def resize_bilinear(images, size=(32, 32)):
    """Resize (n, c, h, w) images with separable bilinear interpolation."""
    h, w = images.shape[-2:]
    if (h, w) == tuple(size):
        return images
    rows, cols = bilinear_matrix(h, size[0]), bilinear_matrix(w, size[1])
    return np.einsum("ih,nchw,jw->ncij", rows, images, cols, optimize=True)


def load_idx(images_path, labels_path=None, resize=True, name=None):
    pixels = read_idx(images_path, IDX_IMAGES_MAGIC)
    if pixels.ndim != 3:
        raise DataFormatError(f"{images_path}: expected (n, rows, cols), got dims {pixels.shape}")
    labels = None
    if labels_path is not None:
        labels = read_idx(labels_path, IDX_LABELS_MAGIC).astype(np.int64)
        if len(labels) != len(pixels):
            raise CountMismatch(f"{len(pixels)} images but {len(labels)} labels")
    images = bytes_to_unit(pixels)[:, None]
    if resize:
        images = resize_bilinear(images)
    return Dataset(images, labels, name or Path(images_path).name.split(".")[0])


def load_cifar10(paths, name="cifar10"):
    if isinstance(paths, (str, Path)):
        paths = [paths]
    images, labels = [], []
    for path in paths:
        raw = _read(path)
        if len(raw) == 0 or len(raw) % CIFAR_RECORD:
            raise DataFormatError(f"{path}: length {len(raw)} is not a multiple of {CIFAR_RECORD}")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        if rec[:, 0].max() > 9:
            raise DataFormatError(f"{path}: label byte {int(rec[:, 0].max())} outside [0, 9]")
        labels.append(rec[:, 0].astype(np.int64))
        images.append(rec[:, 1:].reshape(-1, 3, 32, 32))
    return Dataset(bytes_to_unit(np.concatenate(images)), np.concatenate(labels), name)


def subsample(dataset, fraction, seed, class_balanced=False):
    """Draw ``floor(fraction * n)`` examples without replacement, keeping file order.

    With ``class_balanced`` the same fraction is drawn from each class
    (``floor`` per class), which can leave the total a few examples short.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n = len(dataset)
    if fraction == 1.0:
        return dataset.take(np.arange(n))
    rng = np.random.default_rng(seed)
    if class_balanced:
        if dataset.labels is None:
            raise ValueError("class_balanced subsampling needs labels")
        parts = []
        for c in np.unique(dataset.labels):
            members = np.flatnonzero(dataset.labels == c)
            parts.append(rng.choice(members, int(np.floor(fraction * len(members))), replace=False))
        idx = np.concatenate(parts)
    else:
        idx = rng.choice(n, int(np.floor(fraction * n)), replace=False)
    if len(idx) == 0:
        raise ValueError(f"fraction {fraction} of {n} examples leaves nothing")
    return dataset.take(np.sort(idx))


def sample_noise(batch, dim=100, rng=None):
    if batch < 1 or dim < 1:
        raise ValueError("batch and dim must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    return rng.standard_normal((batch, dim))
