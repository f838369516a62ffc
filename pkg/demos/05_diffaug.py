# %% [markdown]
# Differentiable augmentation: one random draw is applied to both the real
# and the generated batch, and replayed backwards for the generator.

# %%
import sys
from pathlib import Path

import numpy as np

from xaigan.diffaug import diff_augment, parse_policy
from xaigan.gradcheck import numeric_gradient, relative_error
from xaigan.imageio import image_grid, write_netpbm

rng = np.random.default_rng(0)
x = np.tanh(rng.normal(-0.5, 1.0, size=(16, 3, 32, 32)))
policy = parse_policy("color,translation,cutout")
out, aug = diff_augment(x, policy, rng)
print("policy:", policy.ops, "shift x:", aug.params["dx"][:6])

# %%
small = x[:2, :, :8, :8].copy()
o, a = diff_augment(small, policy, np.random.default_rng(1))
w = rng.normal(size=o.shape)
num = numeric_gradient(lambda: float(np.sum(w * a.forward(small))), small)
print("backward vs finite differences:", relative_error(a.backward(w), num))

# %%
out_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out_dir.mkdir(parents=True, exist_ok=True)
write_netpbm(out_dir / "diffaug_before.ppm", image_grid(x, 4, 4))
write_netpbm(out_dir / "diffaug_after.ppm", image_grid(out, 4, 4))
