import numpy as np

from .errors import ShapeError


class Adam:
    """Adam with bias correction. Holds the per-parameter moments and the step count.

    Parameters are updated in place so networks keep referencing the same arrays.
    """

    def __init__(self, lr=0.0002, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads):
        for k, p in params.items():
            if grads[k].shape != p.shape:
                raise ShapeError(f"adam grad {k}", p.shape, grads[k].shape)
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, p in params.items():
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return params


def adam_step(params, grads, state):
    """Functional spelling of ``state.step(params, grads)``."""
    return state.step(params, grads)
