# %% [markdown]
# The guided update boosts the generator's output gradient where the
# explanation says the discriminator was looking:
# delta' = delta + alpha * delta * M.

# %%
import numpy as np

from xaigan.explainers import SaliencyExplainer
from xaigan.models import build_fc_gan
from xaigan.optim import Adam
from xaigan.training import bce, generator_step, modify_gradient

print(modify_gradient(np.array([0.2, -0.4]), np.array([1.0, 0.5]), 0.1))

# %% [markdown]
# With a zero mask or alpha = 0 the step is the plain generator step, bit for bit.

# %%
def run(use_xai, alpha):
    pair = build_fc_gan(np.random.default_rng(0))
    opt, z = Adam(beta1=0.5), np.random.default_rng(1).normal(size=(16, 100))
    generator_step(pair, z, use_xai, alpha, SaliencyExplainer(), opt, np.random.default_rng(2))
    return pair.generator.params()["6.dense.weight"]

plain = run(False, 0.2)
print("alpha=0 identical:", np.array_equal(plain, run(True, 0.0)))
print("alpha=0.2 differs by", np.abs(plain - run(True, 0.2)).max())

# %%
pair = build_fc_gan(np.random.default_rng(0))
fake = pair.generator.forward(np.random.default_rng(3).normal(size=(4, 100)))
loss, g = bce(pair.discriminator.forward(fake), 1)
delta, _ = pair.discriminator.backward(g)
mask = SaliencyExplainer()(pair.discriminator, fake)
boosted = modify_gradient(delta, mask, 0.2)
print("gradient norm ratio:", np.linalg.norm(boosted) / np.linalg.norm(delta))
