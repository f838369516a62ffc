"""Layer primitives with hand-derived backward passes.

Every layer works on float64 numpy arrays with the batch on axis 0. ``forward``
caches whatever ``backward`` needs; ``backward`` returns the input gradient and
a dict of parameter gradients keyed like ``params()``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, StateError

DTYPE = np.float64


class Layer:
    kind = "layer"
    # elementwise layers get the rescale rule in DeepLIFT; everything else is linear
    elementwise = False

    def __init__(self, name=None):
        self.name = name or self.kind
        self._cache = None

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def forward(self, x, training=False, rng=None):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError

    def _cached(self):
        if self._cache is None:
            raise StateError(f"{self.name}: backward called before forward")
        return self._cache

    def _check_grad(self, grad_out, shape):
        if grad_out.shape != shape:
            raise ShapeError(f"{self.name} grad_out", shape, grad_out.shape)

    def __repr__(self):
        return f"{type(self).__name__}({self.name})"


class Dense(Layer):
    """Affine map ``y = x W^T + b`` with ``W`` of shape (out, in)."""

    kind = "dense"

    def __init__(self, n_in, n_out, rng=None, init="uniform", name=None):
        super().__init__(name)
        rng = np.random.default_rng() if rng is None else rng
        if init == "uniform":
            bound = 1.0 / np.sqrt(n_in)
            self.weight = rng.uniform(-bound, bound, size=(n_out, n_in))
            self.bias = rng.uniform(-bound, bound, size=n_out)
        elif init == "normal":
            self.weight = rng.normal(0.0, 0.02, size=(n_out, n_in))
            self.bias = np.zeros(n_out)
        elif init == "zeros":
            self.weight = np.zeros((n_out, n_in))
            self.bias = np.zeros(n_out)
        else:
            raise ValueError(f"unknown init {init!r}")
        self.n_in, self.n_out = n_in, n_out

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x, training=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(self.name, ("batch", self.n_in), x.shape)
        self._cache = x
        return x @ self.weight.T + self.bias

    def backward(self, grad_out):
        x = self._cached()
        self._check_grad(grad_out, (x.shape[0], self.n_out))
        grads = {"weight": grad_out.T @ x, "bias": grad_out.sum(axis=0)}
        return grad_out @ self.weight, grads


def _weight_and_bias(layer):
    out = {"weight": layer.weight}
    if layer.bias is not None:
        out["bias"] = layer.bias
    return out


def conv_output_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def _windows(xp, k, stride, h_out, w_out):
    # (B, C, h_out, w_out, k, k) view of the padded input
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, : stride * (h_out - 1) + 1 : stride, : stride * (w_out - 1) + 1 : stride]


def _scatter_windows(target, cols, k, stride, h_in, w_in):
    # adjoint of _windows: cols is (B, C, h_in, w_in, k, k); accumulates into target
    for i in range(k):
        for j in range(k):
            target[:, :, i : i + stride * (h_in - 1) + 1 : stride, j : j + stride * (w_in - 1) + 1 : stride] += cols[
                ..., i, j
            ]


class Conv2d(Layer):
    """Cross-correlation with square kernel; weight shape (out_ch, in_ch, k, k)."""

    kind = "conv2d"

    def __init__(self, in_ch, out_ch, k, stride=1, pad=0, rng=None, init="normal", bias=True, name=None):
        super().__init__(name)
        rng = np.random.default_rng() if rng is None else rng
        shape = (out_ch, in_ch, k, k)
        if init == "normal":
            self.weight = rng.normal(0.0, 0.02, size=shape)
            self.bias = np.zeros(out_ch)
        elif init == "uniform":
            bound = 1.0 / np.sqrt(in_ch * k * k)
            self.weight = rng.uniform(-bound, bound, size=shape)
            self.bias = rng.uniform(-bound, bound, size=out_ch)
        else:
            raise ValueError(f"unknown init {init!r}")
        if not bias:
            self.bias = None
        self.in_ch, self.out_ch, self.k, self.stride, self.pad = in_ch, out_ch, k, stride, pad

    def params(self):
        return _weight_and_bias(self)

    def output_shape(self, h, w):
        return conv_output_size(h, self.k, self.stride, self.pad), conv_output_size(w, self.k, self.stride, self.pad)

    def forward(self, x, training=False, rng=None):
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ShapeError(self.name, ("batch", self.in_ch, "h", "w"), x.shape)
        b, _, h, w = x.shape
        h_out, w_out = self.output_shape(h, w)
        if h_out < 1 or w_out < 1:
            raise ShapeError(f"{self.name} (input too small for kernel {self.k})", ("h>=k", "w>=k"), x.shape)
        p = self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        cols = _windows(xp, self.k, self.stride, h_out, w_out)
        # (B, h_out, w_out, C*k*k)
        cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(b, h_out, w_out, -1)
        out = cols @ self.weight.reshape(self.out_ch, -1).T
        if self.bias is not None:
            out += self.bias
        self._cache = (x.shape, cols)
        return out.transpose(0, 3, 1, 2)

    def backward(self, grad_out):
        in_shape, cols = self._cached()
        b, c, h, w = in_shape
        h_out, w_out = self.output_shape(h, w)
        self._check_grad(grad_out, (b, self.out_ch, h_out, w_out))
        g = grad_out.transpose(0, 2, 3, 1)  # (B, h_out, w_out, O)
        w_flat = self.weight.reshape(self.out_ch, -1)
        grads = {"weight": (g.reshape(-1, self.out_ch).T @ cols.reshape(-1, w_flat.shape[1])).reshape(self.weight.shape)}
        if self.bias is not None:
            grads["bias"] = g.sum(axis=(0, 1, 2))
        dcols = (g @ w_flat).reshape(b, h_out, w_out, c, self.k, self.k).transpose(0, 3, 1, 2, 4, 5)
        p = self.pad
        dxp = np.zeros((b, c, h + 2 * p, w + 2 * p))
        _scatter_windows(dxp, dcols, self.k, self.stride, h_out, w_out)
        return dxp[:, :, p : p + h, p : p + w], grads


class ConvTranspose2d(Layer):
    """Transposed convolution (adjoint of Conv2d); weight shape (in_ch, out_ch, k, k).

    Output spatial size is ``(in - 1) * stride - 2 * pad + k``.
    """

    kind = "conv_transpose2d"

    def __init__(self, in_ch, out_ch, k, stride=1, pad=0, rng=None, bias=True, name=None):
        super().__init__(name)
        rng = np.random.default_rng() if rng is None else rng
        self.weight = rng.normal(0.0, 0.02, size=(in_ch, out_ch, k, k))
        self.bias = np.zeros(out_ch) if bias else None
        self.in_ch, self.out_ch, self.k, self.stride, self.pad = in_ch, out_ch, k, stride, pad

    def params(self):
        return _weight_and_bias(self)

    def output_shape(self, h, w):
        s, p, k = self.stride, self.pad, self.k
        return (h - 1) * s - 2 * p + k, (w - 1) * s - 2 * p + k

    def forward(self, x, training=False, rng=None):
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ShapeError(self.name, ("batch", self.in_ch, "h", "w"), x.shape)
        b, _, h, w = x.shape
        h_out, w_out = self.output_shape(h, w)
        if h_out < 1 or w_out < 1:
            raise ShapeError(f"{self.name} (padding exceeds output)", ("h", "w"), x.shape)
        k, p = self.k, self.pad
        xt = x.transpose(0, 2, 3, 1)  # (B, h, w, Cin)
        cols = (xt @ self.weight.reshape(self.in_ch, -1)).reshape(b, h, w, self.out_ch, k, k)
        full = np.zeros((b, self.out_ch, h_out + 2 * p, w_out + 2 * p))
        _scatter_windows(full, cols.transpose(0, 3, 1, 2, 4, 5), k, self.stride, h, w)
        self._cache = xt
        out = full[:, :, p : p + h_out, p : p + w_out]
        return out if self.bias is None else out + self.bias[None, :, None, None]

    def backward(self, grad_out):
        xt = self._cached()
        b, h, w, _ = xt.shape
        h_out, w_out = self.output_shape(h, w)
        self._check_grad(grad_out, (b, self.out_ch, h_out, w_out))
        p = self.pad
        gp = np.pad(grad_out, ((0, 0), (0, 0), (p, p), (p, p))) if p else grad_out
        dcols = _windows(gp, self.k, self.stride, h, w)  # (B, Cout, h, w, k, k)
        dcols = dcols.transpose(0, 2, 3, 1, 4, 5).reshape(b, h, w, -1)
        w_flat = self.weight.reshape(self.in_ch, -1)
        grads = {"weight": (xt.reshape(-1, self.in_ch).T @ dcols.reshape(-1, w_flat.shape[1])).reshape(self.weight.shape)}
        if self.bias is not None:
            grads["bias"] = grad_out.sum(axis=(0, 2, 3))
        dx = (dcols @ w_flat.T).transpose(0, 3, 1, 2)
        return dx, grads


class BatchNorm(Layer):
    """Per-channel batch normalization for (B, C) or (B, C, H, W) inputs.

    Training mode normalizes with biased batch statistics and updates running
    estimates (momentum 0.1, unbiased variance); eval mode uses the running
    estimates and is therefore affine in the input.
    """

    kind = "batchnorm"

    def __init__(self, channels, momentum=0.1, eps=1e-5, name=None):
        super().__init__(name)
        self.gamma = np.ones(channels)
        self.beta = np.zeros(channels)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.channels, self.momentum, self.eps = channels, momentum, eps

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def _axes(self, x):
        if x.ndim not in (2, 4) or x.shape[1] != self.channels:
            raise ShapeError(self.name, ("batch", self.channels, "..."), x.shape)
        return (0,) if x.ndim == 2 else (0, 2, 3)

    def _bc(self, v, ndim):
        return v if ndim == 2 else v[None, :, None, None]

    def forward(self, x, training=False, rng=None):
        axes = self._axes(x)
        nd = x.ndim
        if training:
            m = x.size // self.channels
            if m < 2:
                raise ShapeError(f"{self.name} (training needs >1 value per channel)", ("m>=2",), x.shape)
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.running_mean *= 1.0 - self.momentum
            self.running_mean += self.momentum * mean
            self.running_var *= 1.0 - self.momentum
            self.running_var += self.momentum * var * m / (m - 1)
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._bc(mean, nd)) * self._bc(inv_std, nd)
        self._cache = (training, xhat, inv_std, axes)
        return xhat * self._bc(self.gamma, nd) + self._bc(self.beta, nd)

    def backward(self, grad_out):
        training, xhat, inv_std, axes = self._cached()
        self._check_grad(grad_out, xhat.shape)
        nd = xhat.ndim
        grads = {"gamma": (grad_out * xhat).sum(axis=axes), "beta": grad_out.sum(axis=axes)}
        gxhat = grad_out * self._bc(self.gamma, nd)
        if not training:
            return gxhat * self._bc(inv_std, nd), grads
        mean_g = gxhat.mean(axis=axes, keepdims=True)
        mean_gx = (gxhat * xhat).mean(axis=axes, keepdims=True)
        return (gxhat - mean_g - xhat * mean_gx) * self._bc(inv_std, nd), grads


class Dropout(Layer):
    """Inverted dropout: survivors are scaled by 1/(1-rate) so eval mode is identity."""

    kind = "dropout"

    def __init__(self, rate=0.3, name=None):
        super().__init__(name)
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, training=False, rng=None):
        if not training or self.rate == 0.0:
            self._cache = 1.0
            return x
        if rng is None:
            raise StateError(f"{self.name}: training-mode dropout needs an rng")
        scale = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        self._cache = scale
        return x * scale

    def backward(self, grad_out):
        scale = self._cached()
        return grad_out * scale, {}


class Elementwise(Layer):
    elementwise = True

    def fn(self, x):
        raise NotImplementedError

    def derivative(self, x):
        raise NotImplementedError

    def forward(self, x, training=False, rng=None):
        self._cache = x
        return self.fn(x)

    def backward(self, grad_out):
        x = self._cached()
        self._check_grad(grad_out, x.shape)
        return grad_out * self.derivative(x), {}


class LeakyReLU(Elementwise):
    kind = "leaky_relu"

    def __init__(self, slope=0.2, name=None):
        super().__init__(name)
        self.slope = slope

    def fn(self, x):
        return np.where(x > 0, x, self.slope * x)

    def derivative(self, x):
        return np.where(x > 0, 1.0, self.slope)


class ReLU(LeakyReLU):
    kind = "relu"

    def __init__(self, name=None):
        super().__init__(0.0, name)


class Tanh(Elementwise):
    kind = "tanh"

    def fn(self, x):
        return np.tanh(x)

    def derivative(self, x):
        return 1.0 - np.tanh(x) ** 2


def sigmoid(x):
    # split branches so neither exp overflows
    out = np.empty_like(x, dtype=DTYPE)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Sigmoid(Elementwise):
    kind = "sigmoid"

    def fn(self, x):
        return sigmoid(x)

    def derivative(self, x):
        s = sigmoid(x)
        return s * (1.0 - s)


class Reshape(Layer):
    """Reshape the per-example dims; ``Reshape(())`` with shape=(-1,) flattens."""

    kind = "reshape"

    def __init__(self, shape, name=None):
        super().__init__(name)
        self.shape = tuple(shape)

    def forward(self, x, training=False, rng=None):
        self._cache = x.shape
        try:
            return x.reshape((x.shape[0],) + self.shape)
        except ValueError:
            raise ShapeError(self.name, ("batch",) + self.shape, x.shape) from None

    def backward(self, grad_out):
        return grad_out.reshape(self._cached()), {}


class Flatten(Reshape):
    kind = "flatten"

    def __init__(self, name=None):
        super().__init__((-1,), name)


class AvgPool2d(Layer):
    """Non-overlapping average pooling with a square window."""

    kind = "avgpool"

    def __init__(self, size=2, name=None):
        super().__init__(name)
        self.size = size

    def forward(self, x, training=False, rng=None):
        s = self.size
        if x.ndim != 4 or x.shape[2] % s or x.shape[3] % s:
            raise ShapeError(f"{self.name} (spatial dims divisible by {s})", ("batch", "c", "h", "w"), x.shape)
        b, c, h, w = x.shape
        self._cache = x.shape
        return x.reshape(b, c, h // s, s, w // s, s).mean(axis=(3, 5))

    def backward(self, grad_out):
        shape = self._cached()
        s = self.size
        g = np.repeat(np.repeat(grad_out, s, axis=2), s, axis=3) / (s * s)
        if g.shape != shape:
            raise ShapeError(f"{self.name} grad_out", shape, g.shape)
        return g, {}


class MaxPool2d(Layer):
    """Non-overlapping max pooling; the gradient goes to the first maximum of each window."""

    kind = "maxpool"

    def __init__(self, size=2, name=None):
        super().__init__(name)
        self.size = size

    def forward(self, x, training=False, rng=None):
        s = self.size
        if x.ndim != 4 or x.shape[2] % s or x.shape[3] % s:
            raise ShapeError(f"{self.name} (spatial dims divisible by {s})", ("batch", "c", "h", "w"), x.shape)
        b, c, h, w = x.shape
        win = x.reshape(b, c, h // s, s, w // s, s).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // s, w // s, s * s)
        arg = win.argmax(axis=-1)
        self._cache = (x.shape, arg)
        return np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(self, grad_out):
        shape, arg = self._cached()
        b, c, h, w = shape
        s = self.size
        self._check_grad(grad_out, (b, c, h // s, w // s))
        win = np.zeros((b, c, h // s, w // s, s * s))
        np.put_along_axis(win, arg[..., None], grad_out[..., None], axis=-1)
        g = win.reshape(b, c, h // s, w // s, s, s).transpose(0, 1, 2, 4, 3, 5).reshape(shape)
        return g, {}
