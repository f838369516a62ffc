"""Differentiable augmentation (color, translation, cutout) with exact backward passes.

Random parameters are drawn once per call into an ``Augmentation`` object so
the same draw can be applied to the real and the generated stream of a
training step, and replayed backwards for the generator gradient.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OPS = ("color", "translation", "cutout")


@dataclass(frozen=True)
class AugPolicy:
    ops: tuple = ()
    brightness: float = 0.5  # shift ~ U(-brightness, brightness)
    saturation: float = 2.0  # scale ~ U(0, saturation)
    contrast: tuple = (0.5, 1.5)  # scale ~ U(lo, hi)
    translation_ratio: float = 0.125  # max shift as a fraction of the side
    cutout_ratio: float = 0.5  # square side as a fraction of the image side

    def __post_init__(self):
        for op in self.ops:
            if op not in OPS:
                raise ValueError(f"unknown augmentation {op!r}; choose from {OPS}")
        if len(set(self.ops)) != len(self.ops):
            raise ValueError(f"augmentation listed twice in {self.ops}")
        if not 0 <= self.translation_ratio <= 0.5 or not 0 < self.cutout_ratio <= 1:
            raise ValueError("translation_ratio must be in [0, 0.5] and cutout_ratio in (0, 1]")
        if self.brightness < 0 or self.saturation < 0 or not 0 <= self.contrast[0] <= self.contrast[1]:
            raise ValueError("color magnitudes out of range")


def parse_policy(policy="color,translation,cutout", **magnitudes):
    if isinstance(policy, AugPolicy):
        return policy
    if isinstance(policy, str):
        ops = tuple(p.strip() for p in policy.split(",") if p.strip())
    else:
        ops = tuple(policy)
    # apply in the canonical order regardless of how they were listed
    for op in ops:
        if op not in OPS:
            raise ValueError(f"unknown augmentation {op!r}; choose from {OPS}")
    ordered = tuple(op for op in OPS if op in ops)
    if len(ordered) != len(ops):
        raise ValueError(f"augmentation listed twice in {ops}")
    return AugPolicy(ordered, **magnitudes)


def _channel_mean(x):
    return x.mean(axis=1, keepdims=True)


def _image_mean(x):
    return x.mean(axis=(1, 2, 3), keepdims=True)


def _shift(x, dx, dy):
    """Per-example integer translation with zero fill: out[..., i, j] = x[..., i - dy, j - dx]."""
    out = np.zeros_like(x)
    h, w = x.shape[-2:]
    for b in range(len(x)):
        sx, sy = int(dx[b]), int(dy[b])
        if abs(sx) >= w or abs(sy) >= h:
            continue
        out[b, :, max(sy, 0) : h + min(sy, 0), max(sx, 0) : w + min(sx, 0)] = x[
            b, :, max(-sy, 0) : h + min(-sy, 0), max(-sx, 0) : w + min(-sx, 0)
        ]
    return out


@dataclass
class Augmentation:
    """One concrete draw of augmentation parameters for a batch of ``n`` images."""

    policy: AugPolicy
    n: int
    params: dict = field(default_factory=dict)

    def _check(self, x):
        if len(x) != self.n:
            raise ValueError(f"augmentation drawn for {self.n} images, got {len(x)}")

    def forward(self, x):
        self._check(x)
        p = self.params
        if "color" in self.policy.ops:
            x = x + p["brightness"]
            m = _channel_mean(x)
            x = (x - m) * p["saturation"] + m
            m = _image_mean(x)
            x = (x - m) * p["contrast"] + m
        if "translation" in self.policy.ops:
            x = _shift(x, p["dx"], p["dy"])
        if "cutout" in self.policy.ops:
            x = x * p["cutout_mask"]
        return x

    __call__ = forward

    def backward(self, grad):
        self._check(grad)
        p = self.params
        if "cutout" in self.policy.ops:
            grad = grad * p["cutout_mask"]
        if "translation" in self.policy.ops:
            grad = _shift(grad, -p["dx"], -p["dy"])
        if "color" in self.policy.ops:
            # the mean-centring maps are symmetric projections, so the adjoint has the same form
            s = p["contrast"]
            grad = grad * s + (1.0 - s) * _image_mean(grad)
            s = p["saturation"]
            grad = grad * s + (1.0 - s) * _channel_mean(grad)
        return grad


def sample_augmentation(policy, n, image_shape, rng):
    policy = parse_policy(policy)
    _, h, w = image_shape
    p = {}
    if "color" in policy.ops:
        shape = (n, 1, 1, 1)
        p["brightness"] = rng.uniform(-policy.brightness, policy.brightness, shape)
        p["saturation"] = rng.uniform(0.0, policy.saturation, shape)
        p["contrast"] = rng.uniform(*policy.contrast, shape)
    if "translation" in policy.ops:
        mx, my = int(w * policy.translation_ratio), int(h * policy.translation_ratio)
        p["dx"] = rng.integers(-mx, mx + 1, n)
        p["dy"] = rng.integers(-my, my + 1, n)
    if "cutout" in policy.ops:
        ch, cw = int(h * policy.cutout_ratio), int(w * policy.cutout_ratio)
        cy = rng.integers(0, h + (1 - ch % 2), n) - ch // 2
        cx = rng.integers(0, w + (1 - cw % 2), n) - cw // 2
        rows = np.arange(h)[None, :, None]
        cols = np.arange(w)[None, None, :]
        inside = (
            (rows >= cy[:, None, None])
            & (rows < cy[:, None, None] + ch)
            & (cols >= cx[:, None, None])
            & (cols < cx[:, None, None] + cw)
        )
        p["cutout_mask"] = (~inside).astype(np.float64)[:, None]
    return Augmentation(policy, n, p)


def diff_augment(batch, policy, rng):
    """Augment ``batch``; returns ``(augmented, aug)`` where ``aug.backward`` maps
    gradients w.r.t. the output back to the input."""
    aug = sample_augmentation(policy, len(batch), batch.shape[1:], rng)
    return aug.forward(batch), aug
