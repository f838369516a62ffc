"""Per-example attributions of the discriminator's decision, and mask normalization.

All explainers run the discriminator in eval mode (no dropout, batchnorm on
running statistics), so examples in a batch are explained independently and
repeated calls return identical results.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

EPS_PROB = 1e-12


@dataclass
class ExplanationMask:
    values: np.ndarray
    kind: str


def normalize_mask(raw):
    """``|raw| / max|raw|`` over the whole array; all zeros when ``raw`` is all zeros."""
    mag = np.abs(np.asarray(raw, dtype=np.float64))
    peak = mag.max(initial=0.0)
    return mag / peak if peak > 0 else np.zeros_like(mag)


def normalize_masks(raw):
    """``normalize_mask`` applied to each example (axis 0) separately."""
    mag = np.abs(np.asarray(raw, dtype=np.float64))
    peak = mag.reshape(len(mag), -1).max(axis=1)
    peak = peak.reshape((-1,) + (1,) * (mag.ndim - 1))
    return np.divide(mag, peak, out=np.zeros_like(mag), where=peak > 0)


def max_channel_magnitude(grad):
    """Per-pixel max of |grad| over channels, broadcast back to every channel."""
    mag = np.abs(grad).max(axis=1, keepdims=True)
    return np.broadcast_to(mag, grad.shape).copy()


def explain_saliency(D, x):
    """Input gradient of ``-log D(x)`` (the "real"-label loss), one per example.

    Single-channel inputs keep the signed gradient; multi-channel inputs get
    the per-pixel maximum magnitude across channels.
    """
    p = D.forward(x, training=False)
    grad_out = -1.0 / np.clip(p, EPS_PROB, 1.0)
    grad, _ = D.backward(grad_out, check_finite=True)
    if grad.shape != x.shape:
        raise ShapeError("saliency gradient", x.shape, grad.shape)
    return max_channel_magnitude(grad) if x.ndim == 4 and x.shape[1] > 1 else grad


# ---------------------------------------------------------------- lime


def segment_ids(image_shape, patch=4):
    """(h, w) map of non-overlapping ``patch`` x ``patch`` square segment ids, row-major."""
    h, w = image_shape[-2:]
    per_row = -(-w // patch)
    rows = np.arange(h)[:, None] // patch
    cols = np.arange(w)[None, :] // patch
    return rows * per_row + cols


def lime_coefficients(predict, x, n_samples, rng, patch=4, fill=0.0, kernel_width=0.25):
    """Fit the local weighted linear surrogate for one example ``x`` of shape (c, h, w).

    Returns ``(coefficients, intercept, singular)``; ``coefficients`` has one
    entry per segment. A rank-deficient system is solved in the least-norm
    sense and reported through ``singular``.
    """
    seg = segment_ids(x.shape, patch)
    n_seg = int(seg.max()) + 1
    if n_samples < n_seg:
        raise ValueError(f"n_samples={n_samples} is below the {n_seg} segments")
    z = rng.integers(0, 2, size=(n_samples, n_seg)).astype(np.float64)
    z[0] = 1.0
    on = z[:, seg][:, None]  # (n, 1, h, w)
    images = x[None] * on + fill * (1.0 - on)
    y = np.asarray(predict(images), dtype=np.float64).reshape(n_samples)

    norms = np.sqrt(z.sum(axis=1))
    cos_sim = np.divide(z.sum(axis=1), norms * np.sqrt(n_seg), out=np.zeros(n_samples), where=norms > 0)
    dist = 1.0 - cos_sim
    kernel = np.sqrt(np.exp(-(dist**2) / kernel_width**2))

    design = np.hstack([np.ones((n_samples, 1)), z])
    root = np.sqrt(kernel)
    sol, _, rank, _ = np.linalg.lstsq(design * root[:, None], y * root, rcond=None)
    return sol[1:], sol[0], rank < design.shape[1]


def explain_lime(D, x, n_samples=1000, rng=None, patch=4, fill=0.0, kernel_width=0.25, return_info=False):
    """Per-example surrogate coefficients broadcast onto each segment's pixels.

    ``D`` is a Network (its eval-mode output is explained) or any callable
    mapping an image batch to one score per image. ``fill`` is the value that
    replaces switched-off segments, normally the dataset mean.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    if hasattr(D, "layers"):
        predict = lambda imgs: D.forward(imgs, training=False)[:, 0]
    else:
        predict = D
    seg = segment_ids(x.shape[1:], patch)
    out = np.empty_like(x, dtype=np.float64)
    singular = []
    for i in range(len(x)):
        coef, _, sing = lime_coefficients(predict, x[i], n_samples, rng, patch, fill, kernel_width)
        out[i] = coef[seg][None]
        singular.append(bool(sing))
    if return_info:
        return out, {"singular": singular}
    return out


# ---------------------------------------------------------------- deeplift


def explain_deepshap(D, x, refs, tiny=1e-10):
    """DeepLIFT rescale-rule contributions of D's output, averaged over references.

    Linear layers (dense, conv, eval-mode batchnorm and dropout, reshapes,
    average pooling) pass multipliers through their ordinary backward pass; each
    elementwise nonlinearity multiplies by ``(f(a) - f(b)) / (a - b)``, falling
    back to the midpoint derivative when ``|a - b| < tiny``. For every example
    the contributions sum to ``D(x) - mean_r D(r)``.
    """
    refs = np.asarray(refs, dtype=np.float64)
    if len(refs) == 0:
        raise ValueError("reference set is empty")
    if refs.shape[1:] != x.shape[1:]:
        raise ShapeError("deepshap references", ("n_refs",) + tuple(x.shape[1:]), refs.shape)
    bad = [layer.name for layer in D.layers if layer.kind == "maxpool"]
    if bad:
        raise ValueError(f"rescale rule has no case for max pooling ({bad[0]})")
    n, r = len(x), len(refs)
    xs = np.repeat(x, r, axis=0)
    rs = np.tile(refs, (n,) + (1,) * (x.ndim - 1))

    inputs = {}
    hx, hr = xs, rs
    for i, layer in enumerate(D.layers):
        if layer.elementwise:
            inputs[i] = (hx, hr)
        hx = layer.forward(hx, training=False)
        hr = layer.forward(hr, training=False)

    m = np.ones_like(hx)
    for i in reversed(range(len(D.layers))):
        layer = D.layers[i]
        if layer.elementwise:
            a, b = inputs[i]
            dx = a - b
            close = np.abs(dx) < tiny
            slope = (layer.fn(a) - layer.fn(b)) / np.where(close, 1.0, dx)
            m = m * np.where(close, layer.derivative(0.5 * (a + b)), slope)
        else:
            m, _ = layer.backward(m)
    contrib = (xs - rs) * m
    return contrib.reshape((n, r) + x.shape[1:]).mean(axis=1)


def summation_gap(D, x, refs, attributions):
    """Per-example ``|sum C - (D(x) - mean_r D(r))|``."""
    fx = D.forward(x, training=False)[:, 0]
    fr = D.forward(np.asarray(refs, dtype=np.float64), training=False)[:, 0].mean()
    return np.abs(attributions.reshape(len(x), -1).sum(axis=1) - (fx - fr))


# ---------------------------------------------------------------- training adapters


class SaliencyExplainer:
    kind = "saliency"

    def __call__(self, D, images):
        return normalize_masks(explain_saliency(D, images))


class LimeExplainer:
    kind = "lime"

    def __init__(self, rng, n_samples=1000, fill=0.0, patch=4, kernel_width=0.25):
        self.rng, self.n_samples, self.fill, self.patch, self.kernel_width = rng, n_samples, fill, patch, kernel_width

    def __call__(self, D, images):
        raw = explain_lime(D, images, self.n_samples, self.rng, self.patch, self.fill, self.kernel_width)
        return normalize_masks(raw)


class DeepShapExplainer:
    kind = "deepshap"

    def __init__(self, refs):
        self.refs = np.asarray(refs, dtype=np.float64)

    def __call__(self, D, images):
        return normalize_masks(explain_deepshap(D, images, self.refs))


def make_explainer(kind, rng=None, refs=None, fill=0.0, lime_samples=1000):
    if kind in (None, "none"):
        return None
    if kind == "saliency":
        return SaliencyExplainer()
    if kind == "lime":
        return LimeExplainer(np.random.default_rng(0) if rng is None else rng, lime_samples, fill)
    if kind == "deepshap":
        if refs is None:
            raise ValueError("deepshap needs a reference set")
        return DeepShapExplainer(refs)
    raise ValueError(f"unknown explainer {kind!r}")
