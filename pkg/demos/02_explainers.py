# %% [markdown]
# Three ways to ask a discriminator which pixels mattered: input gradients,
# a local linear surrogate over 4x4 patches, and rescale-rule attributions
# against a handful of reference images. Masks are dumped as PGM files.

# %%
import sys
from pathlib import Path

import numpy as np

from xaigan.explainers import explain_deepshap, explain_lime, explain_saliency, normalize_masks, summation_gap
from xaigan.imageio import write_mask_pgm
from xaigan.models import build_fc_gan

out_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/explainers")
out_dir.mkdir(parents=True, exist_ok=True)

rng = np.random.default_rng(0)
pair = build_fc_gan(rng)
D = pair.discriminator
fake = pair.generator.forward(rng.normal(size=(2, 100)))

# %%
sal = explain_saliency(D, fake)
lime = explain_lime(D, fake, n_samples=300, rng=np.random.default_rng(1))
refs = rng.uniform(-1, 1, size=(8, 1, 32, 32))
shap = explain_deepshap(D, fake, refs)
print("rescale-rule summation gap:", summation_gap(D, fake, refs, shap).max())

# %%
for name, raw in (("saliency", sal), ("lime", lime), ("deepshap", shap)):
    masks = normalize_masks(raw)
    print(f"{name:9s} mask range [{masks.min():.2f}, {masks.max():.2f}]")
    for i, m in enumerate(masks):
        write_mask_pgm(out_dir / f"{name}_{i}.pgm", m)
print("masks written to", out_dir)
