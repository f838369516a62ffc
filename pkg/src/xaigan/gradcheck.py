"""Central finite-difference oracles for the hand-written backward passes."""
import numpy as np


def relative_error(analytic, numeric):
    analytic, numeric = np.asarray(analytic, float), np.asarray(numeric, float)
    if not (np.all(np.isfinite(analytic)) and np.all(np.isfinite(numeric))):
        return np.inf
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom, initial=0.0))


def numeric_gradient(f, x, h=1e-5, indices=None):
    """Central differences of scalar ``f`` w.r.t. array ``x`` (perturbed in place, restored).

    Returns the numeric gradient at ``indices`` (flat) or the full array.
    """
    flat = x.reshape(-1)
    idx = np.arange(flat.size) if indices is None else np.asarray(indices)
    out = np.empty(len(idx))
    for n, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        out[n] = (fp - fm) / (2.0 * h)
    return out if indices is not None else out.reshape(x.shape)


def _probe(size, max_probes, rng):
    if max_probes is None or size <= max_probes:
        return np.arange(size)
    return np.sort(rng.choice(size, max_probes, replace=False))


def gradient_check(network, x, loss_fn, h=1e-5, max_probes=None, seed=0, wrt_input=False):
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(out)`` returns ``(loss, dloss/dout)``. The network runs in
    training mode; dropout masks are redrawn from the same seed on every
    evaluation so the function being differentiated is fixed, and batchnorm
    running statistics are restored afterwards. ``max_probes`` limits the
    number of coordinates checked per tensor (chosen at random with ``seed``).
    """
    x = np.array(x, dtype=np.float64)
    saved = {k: v.copy() for k, v in network.buffers().items()}

    def restore():
        for k, v in network.buffers().items():
            v[...] = saved[k]

    def loss_at():
        out = network.forward(x, training=True, rng=np.random.default_rng(seed))
        restore()
        return float(loss_fn(out)[0])

    out = network.forward(x, training=True, rng=np.random.default_rng(seed))
    restore()
    _, gout = loss_fn(out)
    gin, grads = network.backward(gout)

    pick = np.random.default_rng(seed + 1)
    worst = 0.0
    targets = list(network.params().items())
    if wrt_input:
        targets.append(("input", x))
    for name, arr in targets:
        analytic = gin if name == "input" else grads[name]
        idx = _probe(arr.size, max_probes, pick)
        numeric = numeric_gradient(loss_at, arr, h, idx)
        worst = max(worst, relative_error(analytic.reshape(-1)[idx], numeric))
    return worst


def squared_loss(target=None):
    """``0.5 * sum((out - target)**2)`` and its gradient."""

    def fn(out):
        t = 0.0 if target is None else target
        d = out - t
        return 0.5 * float(np.sum(d * d)), d

    return fn


def projection_loss(shape, seed=0):
    """Random linear functional of the output; gives O(1) gradients everywhere."""
    w = np.random.default_rng(seed).normal(size=shape)
    return lambda out: (float(np.sum(w * out)), w.copy())
