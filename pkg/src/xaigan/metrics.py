"""FID in the feature space of a small trained classifier, plus timing."""
from __future__ import annotations

import time
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, XaiganError
from .models import build_lenet_classifier
from .optim import Adam


class FidError(XaiganError, ValueError):
    pass


@dataclass
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    n: int

    @property
    def dim(self):
        return len(self.mean)


def extract_features(classifier, images, batch_size=500):
    """Penultimate-layer activations in eval mode, shape (n, feature_dim)."""
    stop = classifier.metadata.get("feature_stop")
    expected = classifier.metadata.get("input_shape")
    if images.ndim != 4 or (expected is not None and tuple(images.shape[1:]) != tuple(expected)):
        raise ShapeError("extract_features", ("n",) + tuple(expected or ("c", "h", "w")), images.shape)
    chunks = [classifier.forward(images[i : i + batch_size], training=False, stop=stop) for i in range(0, len(images), batch_size)]
    return np.concatenate(chunks).reshape(len(images), -1)


def gaussian_stats(features):
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or len(features) < 2:
        raise FidError(f"need at least 2 feature rows, got shape {features.shape}")
    mean = features.mean(axis=0)
    centred = features - mean
    cov = centred.T @ centred / (len(features) - 1)
    return GaussianStats(mean, 0.5 * (cov + cov.T), len(features))


def _sqrt_psd(mat, tol=1e-8):
    """Symmetric PSD square root; eigenvalues at round-off level are set to zero."""
    vals, vecs = np.linalg.eigh(0.5 * (mat + mat.T))
    scale = max(1.0, float(np.abs(vals).max(initial=0.0)))
    if vals.min(initial=0.0) < -tol * scale:
        raise FidError(f"matrix is not PSD (eigenvalue {vals.min():.3e})")
    vals = np.where(vals > len(vals) * np.finfo(float).eps * scale, vals, 0.0)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(a, b):
    """``|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))``.

    ``Tr (S_a S_b)^(1/2)`` equals the trace of the root of the symmetric
    similar matrix ``S_a^(1/2) S_b S_a^(1/2)``. That matrix is ``M^T M`` with
    ``M = S_b^(1/2) S_a^(1/2)``, so its root is taken from the SVD of ``M``:
    the trace is the sum of singular values, which stays accurate for
    rank-deficient covariances and is exactly symmetric in ``a`` and ``b``.
    """
    if a.dim != b.dim:
        raise FidError(f"dimension mismatch: {a.dim} vs {b.dim}")
    root_a, root_b = _sqrt_psd(a.cov), _sqrt_psd(b.cov)
    m = root_b @ root_a
    _, sv, vt = np.linalg.svd(m)
    inner = m.T @ m
    root_inner = (vt.T * sv) @ vt
    residual = np.linalg.norm(root_inner @ root_inner - inner)
    if residual > 1e-6 * max(np.linalg.norm(inner), 1e-300):
        raise FidError(f"matrix square root failed (residual {residual:.3e})")
    diff = a.mean - b.mean
    value = diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * sv.sum()
    return max(float(value), 0.0)


def fid_from_features(feat_a, feat_b):
    return frechet_distance(gaussian_stats(feat_a), gaussian_stats(feat_b))


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    p = softmax(logits)
    n = len(labels)
    loss = -np.log(np.clip(p[np.arange(n), labels], 1e-300, None)).mean()
    grad = p.copy()
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def accuracy(classifier, images, labels, batch_size=500):
    preds = [classifier.forward(images[i : i + batch_size]).argmax(axis=1) for i in range(0, len(images), batch_size)]
    return float((np.concatenate(preds) == labels).mean())


def train_feature_classifier(dataset, epochs=5, seed=0, batch_size=64, lr=1e-3, holdout=0.2, min_accuracy=0.9):
    """Train LeNet on a labelled dataset and return it frozen (eval use only).

    A random ``holdout`` fraction is kept aside; the held-out accuracy and a
    ``low_accuracy`` warning flag land in ``classifier.metadata``.
    """
    if dataset.labels is None:
        raise ValueError("feature classifier needs a labelled dataset")
    ss = np.random.SeedSequence(seed)
    init_rng, split_rng, shuffle_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    n = len(dataset)
    order = split_rng.permutation(n)
    n_hold = int(round(holdout * n))
    test_idx, train_idx = np.sort(order[:n_hold]), np.sort(order[n_hold:])
    x, y = dataset.images[train_idx], dataset.labels[train_idx]

    num_classes = max(int(dataset.labels.max()) + 1, 2)
    net = build_lenet_classifier(num_classes, dataset.images.shape[1], init_rng)
    opt = Adam(lr=lr)
    losses = []
    for _ in range(epochs):
        perm = shuffle_rng.permutation(len(x))
        for i in range(0, len(x), batch_size):
            idx = perm[i : i + batch_size]
            loss, g = cross_entropy(net.forward(x[idx], training=True), y[idx])
            _, grads = net.backward(g)
            opt.step(net.params(), grads)
            losses.append(loss)
    acc = accuracy(net, dataset.images[test_idx], dataset.labels[test_idx]) if n_hold else float("nan")
    net.metadata.update(
        input_shape=tuple(dataset.images.shape[1:]),
        test_accuracy=acc,
        n_test=n_hold,
        low_accuracy=bool(not acc >= min_accuracy),
        final_loss=float(np.mean(losses[-10:])) if losses else float("nan"),
    )
    return net


class FidEvaluator:
    """FID of generator samples against a fixed real set; real statistics are cached."""

    def __init__(self, classifier, real_images, n_samples=2048, seed=0):
        self.classifier = classifier
        self.n_samples = min(n_samples, len(real_images))
        rng = np.random.default_rng(seed)
        pick = np.sort(rng.choice(len(real_images), self.n_samples, replace=False))
        self.real_stats = gaussian_stats(extract_features(classifier, real_images[pick]))
        self.noise_rng_seed = seed + 1

    def __call__(self, generator, noise_dim):
        # same noise every evaluation so epochs are compared on equal footing
        z = np.random.default_rng(self.noise_rng_seed).standard_normal((self.n_samples, noise_dim))
        fake = np.concatenate([generator.forward(z[i : i + 512], training=False) for i in range(0, len(z), 512)])
        return frechet_distance(self.real_stats, gaussian_stats(extract_features(self.classifier, fake)))

    def report(self, fid, epoch):
        return {"epoch": epoch, "n_real": self.n_samples, "n_gen": self.n_samples, "fid": fid, "feature_dim": self.real_stats.dim}


class Stopwatch:
    """Wall-clock seconds accumulated per label; labels may nest freely."""

    def __init__(self):
        self.totals = defaultdict(float)
        self.counts = defaultdict(int)

    @contextmanager
    def section(self, label):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.totals[label] += time.perf_counter() - start
            self.counts[label] += 1

    __call__ = section

    def elapsed(self, label):
        return self.totals.get(label, 0.0)

    def as_dict(self):
        return dict(self.totals)
