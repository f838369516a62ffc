"""Sequential network container and the XGAN1 checkpoint format."""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import NonFiniteError, XaiganError

MAGIC = b"XGAN1"


class Network:
    """Ordered list of layers run front to back.

    Layer names are made unique at construction (``"3.dense"``), and parameter
    names are ``"<layer name>.<param>"``.
    """

    def __init__(self, layers, name="net"):
        self.name = name
        self.layers = list(layers)
        self.metadata = {}
        for i, layer in enumerate(self.layers):
            layer.name = f"{i}.{layer.kind}"

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)

    def forward(self, x, training=False, rng=None, stop=None):
        """Run layers ``[0, stop)``; ``stop=None`` runs the whole network."""
        for layer in self.layers[:stop]:
            x = layer.forward(x, training=training, rng=rng)
        return x

    __call__ = forward

    def backward(self, grad, stop=None, check_finite=False):
        """Backpropagate through layers ``[0, stop)`` in reverse.

        Returns the input gradient and a dict of parameter gradients. With
        ``check_finite`` a NaN/Inf gradient raises ``NonFiniteError`` naming the
        layer that produced it.
        """
        grads = {}
        for layer in reversed(self.layers[:stop]):
            grad, pg = layer.backward(grad)
            if check_finite and not np.all(np.isfinite(grad)):
                raise NonFiniteError("non-finite gradient", layer=layer.name)
            for k, v in pg.items():
                grads[f"{layer.name}.{k}"] = v
        return grad, grads

    def params(self):
        return {f"{l.name}.{k}": v for l in self.layers for k, v in l.params().items()}

    def buffers(self):
        return {f"{l.name}.{k}": v for l in self.layers for k, v in l.buffers().items()}

    def state_dict(self):
        return {**self.params(), **self.buffers()}

    def load_state_dict(self, state):
        own = self.state_dict()
        missing = set(own) - set(state)
        if missing:
            raise XaiganError(f"{self.name}: checkpoint is missing {sorted(missing)}")
        for k, arr in own.items():
            if state[k].shape != arr.shape:
                raise XaiganError(f"{self.name}.{k}: checkpoint shape {state[k].shape} != {arr.shape}")
            arr[...] = state[k]

    def num_params(self):
        return sum(v.size for v in self.params().values())


def save_checkpoint(path, tensors):
    """Write named float64 arrays atomically (temp file + rename).

    Layout after the 5-byte magic ``XGAN1``, repeated per tensor, all integers
    little-endian uint32: name length, UTF-8 name, rank, dims, then the raw
    little-endian float64 payload in row-major order.
    """
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        for name, arr in tensors.items():
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(arr, dtype="<f8")
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
            fh.write(arr.tobytes())
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load_checkpoint(path):
    data = Path(path).read_bytes()
    if data[:5] != MAGIC:
        raise XaiganError(f"{path}: not an XGAN1 checkpoint")
    out, pos = {}, 5
    try:
        while pos < len(data):
            (n,) = struct.unpack_from("<I", data, pos)
            name = data[pos + 4 : pos + 4 + n].decode("utf-8")
            pos += 4 + n
            (rank,) = struct.unpack_from("<I", data, pos)
            dims = struct.unpack_from(f"<{rank}I", data, pos + 4)
            pos += 4 + 4 * rank
            count = int(np.prod(dims, dtype=np.int64))
            if pos + 8 * count > len(data):
                raise XaiganError(f"{path}: truncated tensor {name!r}")
            out[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(dims).astype(np.float64)
            pos += 8 * count
    except struct.error as exc:
        raise XaiganError(f"{path}: truncated header") from exc
    return out
