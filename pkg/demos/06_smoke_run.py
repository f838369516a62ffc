# %% [markdown]
# A short end-to-end run through the experiment driver: config, training with
# saliency guidance, FID per epoch, run directory and a comparison table.
# The same thing from a shell:
#
#     xaigan run --config cfg.json --explainer saliency --epochs 4 --out runs/sal
#     xaigan compare runs/none runs/sal

# %%
import sys
from pathlib import Path

from xaigan.experiment import compare, format_table, parse_config, run

root = Path(__file__).resolve().parents[1] / "data" / "mnist5k"
out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/runs")
cfg = {
    "dataset": {"images": str(root / "images-idx3-ubyte.gz"), "labels": str(root / "labels-idx1-ubyte.gz")},
    "epochs": 4,
    "data_fraction": 0.2,
    "fid_samples": 1000,
}

dirs = []
for explainer in ("none", "saliency"):
    spec = parse_config(cfg, {"explainer": explainer, "out": str(out / explainer)})
    print("running", spec.label)
    assert run(spec) == 0
    dirs.append(out / explainer)

# %%
print(format_table(compare(dirs)))
print((out / "saliency" / "metrics.csv").read_text())
