"""GAN training loop with optional explanation-guided generator updates."""
from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import sample_noise, subsample
from .diffaug import parse_policy, sample_augmentation
from .errors import ConfigError, NonFiniteError, ShapeError
from .explainers import make_explainer
from .metrics import Stopwatch
from .models import build_gan
from .optim import Adam

ARCHITECTURES = ("fc", "dc")
EXPLAINERS = ("none", "saliency", "lime", "deepshap")
TRACE_COLUMNS = ("epoch", "d_loss", "g_loss", "fid", "seconds", "xai_active")
P_CLAMP = 1e-12


@dataclass
class TrainConfig:
    architecture: str = "fc"
    explainer: str = "none"
    alpha: float = 0.2
    epochs: int = 10
    batch_size: int = 128
    lr: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    data_fraction: float = 1.0
    class_balanced: bool = False
    seed: int = 0
    diffaug: bool = False
    diffaug_policy: str = "color,translation,cutout"
    xai_start_epoch: int | None = None  # None -> epochs // 2
    lime_samples: int = 1000
    deepshap_refs: int = 8
    fid_every: int = 1

    @property
    def xai_start(self):
        return self.epochs // 2 if self.xai_start_epoch is None else self.xai_start_epoch

    def validate(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError("architecture", f"must be one of {ARCHITECTURES}, got {self.architecture!r}")
        if self.explainer not in EXPLAINERS:
            raise ConfigError("explainer", f"must be one of {EXPLAINERS}, got {self.explainer!r}")
        checks = [
            ("alpha", self.alpha >= 0, "must be >= 0"),
            ("epochs", self.epochs >= 1, "must be >= 1"),
            ("batch_size", self.batch_size >= 1, "must be >= 1"),
            ("lr", self.lr > 0, "must be > 0"),
            ("beta1", 0 <= self.beta1 < 1, "must be in [0, 1)"),
            ("beta2", 0 <= self.beta2 < 1, "must be in [0, 1)"),
            ("data_fraction", 0 < self.data_fraction <= 1, "must be in (0, 1]"),
            ("xai_start_epoch", 0 <= self.xai_start <= self.epochs, "must be in [0, epochs]"),
            ("lime_samples", self.lime_samples >= 1, "must be >= 1"),
            ("deepshap_refs", self.deepshap_refs >= 1, "must be >= 1"),
            ("fid_every", self.fid_every >= 1, "must be >= 1"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ConfigError(key, f"{msg}, got {getattr(self, key)!r}")
        if self.diffaug:
            try:
                parse_policy(self.diffaug_policy)
            except ValueError as exc:
                raise ConfigError("diffaug_policy", str(exc)) from None
        return self


@dataclass
class EpochRecord:
    epoch: int
    d_loss: float
    g_loss: float
    fid: float
    seconds: float
    xai_active: bool

    def row(self, columns=TRACE_COLUMNS):
        d = asdict(self)
        return [_fmt(d[c]) for c in columns]


def _fmt(v):
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return "" if np.isnan(v) else repr(v)
    return str(v)


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)
    aborted: str | None = None

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return [getattr(r, name) for r in self.records]


class CsvTraceSink:
    """Streams epoch records as CSV; the header is written before the first row."""

    def __init__(self, fh, columns=TRACE_COLUMNS):
        self.fh, self.columns = fh, tuple(columns)
        self.writer = csv.writer(fh, lineterminator="\n")
        self.writer.writerow(self.columns)

    def __call__(self, record):
        self.writer.writerow(record.row(self.columns))
        self.fh.flush()


def bce(p, label):
    """Batch-averaged binary cross-entropy of probabilities ``p`` (n, 1) against a constant label."""
    q = np.clip(p, P_CLAMP, 1.0 - P_CLAMP)
    n = len(p)
    if label == 1:
        return float(-np.log(q).mean()), -1.0 / (q * n)
    return float(-np.log(1.0 - q).mean()), 1.0 / ((1.0 - q) * n)


def modify_gradient(delta, mask, alpha):
    """Explanation-guided output gradient ``delta + alpha * delta * mask`` (element-wise)."""
    if mask.shape != delta.shape:
        raise ShapeError("explanation mask", delta.shape, mask.shape)
    return delta + alpha * (delta * mask)


def _finite(loss, what):
    if not np.isfinite(loss):
        raise NonFiniteError(f"{what} loss is {loss}")
    return loss


def discriminator_step(pair, real, z, opt, rng, aug=None):
    """One Adam step on D: BCE with label 1 on ``real`` and label 0 on ``G(z)``.

    Returns the sum of the two batch-averaged losses. Only D's parameters change.
    """
    G, D = pair.generator, pair.discriminator
    if len(real) == 0 or len(z) == 0:
        raise ValueError("empty batch")
    fake = G.forward(z, training=True, rng=rng)
    if fake.shape[1:] != real.shape[1:]:
        raise ShapeError("discriminator_step real batch", fake.shape, real.shape)
    if aug is not None:
        real, fake = aug(real), aug(fake)
    loss_real, g = bce(D.forward(real, training=True, rng=rng), 1)
    _, grads = D.backward(g)
    loss_fake, g = bce(D.forward(fake, training=True, rng=rng), 0)
    _, grads_fake = D.backward(g)
    for k in grads:
        grads[k] = grads[k] + grads_fake[k]
    loss = _finite(loss_real + loss_fake, "discriminator")
    opt.step(D.params(), grads)
    return loss


def generator_step(pair, z, use_xai, alpha, explainer, opt, rng, aug=None, stopwatch=None):
    """One Adam step on G against the non-saturating loss ``-log D(G(z))``.

    The gradient reaching G's output is ``delta``; with ``use_xai`` it becomes
    ``delta + alpha * delta * M`` where ``M`` holds the explainer's normalized
    per-example masks of the discriminator on ``G(z)``.
    """
    if use_xai and explainer is None:
        raise ValueError("use_xai needs an explainer")
    G, D = pair.generator, pair.discriminator
    fake = G.forward(z, training=True, rng=rng)
    d_in = aug(fake) if aug is not None else fake
    loss, g = bce(D.forward(d_in, training=True, rng=rng), 1)
    _finite(loss, "generator")
    delta, _ = D.backward(g)
    if aug is not None:
        delta = aug.backward(delta)
    if use_xai:
        sw = stopwatch or Stopwatch()
        with sw.section("explain"):
            mask = explainer(D, fake)
        delta = modify_gradient(delta, mask, alpha)
    _, grads = G.backward(delta)
    opt.step(G.params(), grads)
    return loss


def train(config, dataset, sink=None, fid=None, stopwatch=None, on_epoch=None):
    """Alternate one D step and one G step per mini-batch for ``config.epochs`` epochs.

    ``fid(generator, noise_dim)`` (optional) is evaluated every ``fid_every``
    epochs and on the last one. ``on_epoch(epoch, pair, record)`` runs after
    each epoch (checkpointing, sample dumps). A non-finite loss stops training;
    the partial trace is returned with ``trace.aborted`` set.
    """
    config.validate()
    sw = stopwatch if stopwatch is not None else Stopwatch()
    streams = np.random.SeedSequence(config.seed).spawn(8)
    init_rng, shuffle_rng, noise_rng, dropout_rng, explain_rng, aug_rng, refs_rng = (
        np.random.default_rng(s) for s in streams[:7]
    )
    subsample_seed = int(streams[7].generate_state(1)[0])

    data = subsample(dataset, config.data_fraction, subsample_seed, config.class_balanced)
    n, bs = len(data), config.batch_size
    if n < bs:
        raise ValueError(f"dataset has {n} examples, fewer than one batch of {bs}")
    pair = build_gan(config.architecture, init_rng)
    if tuple(data.image_shape) != tuple(pair.image_shape):
        raise ShapeError(f"{config.architecture} GAN input", pair.image_shape, data.image_shape)

    opt_kw = dict(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    g_opt, d_opt = Adam(**opt_kw), Adam(**opt_kw)
    refs = data.images[np.sort(refs_rng.choice(n, min(config.deepshap_refs, n), replace=False))]
    explainer = make_explainer(
        config.explainer, rng=explain_rng, refs=refs, fill=float(data.images.mean()), lime_samples=config.lime_samples
    )
    policy = parse_policy(config.diffaug_policy) if config.diffaug else None

    trace = TrainTrace()
    for epoch in range(config.epochs):
        start = time.perf_counter()
        xai_active = explainer is not None and epoch >= config.xai_start
        d_losses, g_losses = [], []
        perm = shuffle_rng.permutation(n)
        try:
            for b in range(n // bs):
                real = data.images[perm[b * bs : (b + 1) * bs]]
                aug = sample_augmentation(policy, bs, data.image_shape, aug_rng) if policy else None
                with sw.section("d_step"):
                    z = sample_noise(bs, pair.noise_dim, noise_rng)
                    d_losses.append(discriminator_step(pair, real, z, d_opt, dropout_rng, aug))
                with sw.section("g_step"):
                    z = sample_noise(bs, pair.noise_dim, noise_rng)
                    g_losses.append(
                        generator_step(pair, z, xai_active, config.alpha, explainer, g_opt, dropout_rng, aug, sw)
                    )
        except NonFiniteError as exc:
            trace.aborted = f"epoch {epoch}: {exc}"
            break
        score = float("nan")
        if fid is not None and ((epoch + 1) % config.fid_every == 0 or epoch == config.epochs - 1):
            with sw.section("fid"):
                score = fid(pair.generator, pair.noise_dim)
        seconds = max(time.perf_counter() - start, 1e-9)
        record = EpochRecord(epoch, float(np.mean(d_losses)), float(np.mean(g_losses)), score, seconds, xai_active)
        trace.records.append(record)
        if sink is not None:
            sink(record)
        if on_epoch is not None:
            on_epoch(epoch, pair, record)
    return pair, trace
