# %% [markdown]
# Layers carry their own backward pass. Here we build a tiny network by hand,
# push a batch through it and compare the analytic gradients with central
# differences.

# %%
import numpy as np

from xaigan.gradcheck import gradient_check, projection_loss
from xaigan.layers import BatchNorm, Conv2d, Dropout, Flatten, LeakyReLU, Dense, Sigmoid
from xaigan.network import Network

rng = np.random.default_rng(0)
net = Network([
    Conv2d(1, 4, 4, stride=2, pad=1, rng=rng),
    BatchNorm(4),
    LeakyReLU(0.2),
    Flatten(),
    Dense(4 * 4 * 4, 8, rng),
    Dropout(0.3),
    LeakyReLU(0.2),
    Dense(8, 1, rng),
    Sigmoid(),
])
x = rng.uniform(-1, 1, size=(5, 1, 8, 8))
print([l.name for l in net])
print("params:", net.num_params())

# %%
out = net.forward(x, training=True, rng=np.random.default_rng(1))
print("D(x):", out.ravel().round(4))

# %% [markdown]
# Dropout masks are replayed from the same seed for every probe, so the
# function being differentiated stays fixed.

# %%
err = gradient_check(net, x, projection_loss(out.shape), wrt_input=True)
print(f"max relative error: {err:.2e}")
