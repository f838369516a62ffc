"""Binary PGM/PPM writers for sample grids and explanation masks."""
from pathlib import Path

import numpy as np

from .data import unit_to_bytes


def image_grid(images, rows=8, cols=8, pad=1, value=-1.0):
    """Tile up to rows*cols (c, h, w) images into one (c, H, W) image."""
    images = np.asarray(images)[: rows * cols]
    c, h, w = images.shape[1:]
    grid = np.full((c, rows * (h + pad) + pad, cols * (w + pad) + pad), value, dtype=np.float64)
    for k, img in enumerate(images):
        r, q = divmod(k, cols)
        y, x = pad + r * (h + pad), pad + q * (w + pad)
        grid[:, y : y + h, x : x + w] = img
    return grid


def write_netpbm(path, image):
    """Write a (1, h, w) or (3, h, w) image in [-1, 1] as binary PGM (P5) or PPM (P6)."""
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[None]
    c, h, w = image.shape
    if c not in (1, 3):
        raise ValueError(f"need 1 or 3 channels, got {c}")
    pixels = unit_to_bytes(image)
    header = f"{'P5' if c == 1 else 'P6'}\n{w} {h}\n255\n".encode("ascii")
    body = pixels[0].tobytes() if c == 1 else pixels.transpose(1, 2, 0).tobytes()
    Path(path).write_bytes(header + body)


def write_mask_pgm(path, mask):
    """Dump an explanation mask with values in [0, 1] as a grayscale PGM (channels max-reduced)."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim == 3:
        mask = mask.max(axis=0)
    write_netpbm(path, mask[None] * 2.0 - 1.0)


def read_netpbm(path):
    """Read back a binary PGM/PPM written by ``write_netpbm``; returns uint8 (c, h, w)."""
    raw = Path(path).read_bytes()
    magic, dims, maxval, body = raw.split(b"\n", 3)
    w, h = map(int, dims.split())
    c = 1 if magic == b"P5" else 3
    arr = np.frombuffer(body, dtype=np.uint8).reshape(h, w, c)
    return arr.transpose(2, 0, 1)
