# %% [markdown]
# FID compares Gaussians fitted to classifier features. We train the small
# LeNet on the bundled 5k MNIST subset and score a few image sets against it.

# %%
from pathlib import Path

import numpy as np

from xaigan.data import load_idx
from xaigan.metrics import extract_features, fid_from_features, train_feature_classifier
from xaigan.models import build_fc_gan

root = Path(__file__).resolve().parents[1] / "data" / "mnist5k"
ds = load_idx(root / "images-idx3-ubyte.gz", root / "labels-idx1-ubyte.gz", name="mnist5k")
clf = train_feature_classifier(ds, epochs=5, seed=0)
print("held-out accuracy:", clf.metadata["test_accuracy"])

# %%
perm = np.random.default_rng(0).permutation(len(ds))
a, b = ds.images[perm[:2000]], ds.images[perm[2000:4000]]
feat = lambda x: extract_features(clf, x)
noise = np.random.default_rng(1).normal(0, 0.5, b.shape)
untrained = build_fc_gan(np.random.default_rng(2)).generator.forward(np.random.default_rng(3).normal(size=(2000, 100)))

for name, imgs in (("real vs real", b), ("noisy real", np.clip(b + noise, -1, 1)), ("untrained G", untrained)):
    print(f"{name:13s} FID = {fid_from_features(feat(a), feat(imgs)):.2f}")
