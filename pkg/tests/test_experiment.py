import csv
import json
import os
import struct
import subprocess
import sys

import numpy as np
import pytest

from xaigan.cli import main
from xaigan.data import unit_to_bytes
from xaigan.errors import ConfigError
from xaigan.experiment import compare, execute, format_table, parse_config, run
from xaigan.imageio import read_netpbm
from xaigan.network import load_checkpoint


def write_idx(path, arr, magic):
    arr = np.asarray(arr, dtype=np.uint8)
    path.write_bytes(struct.pack(">I", magic) + struct.pack(f">{arr.ndim}I", *arr.shape) + arr.tobytes())


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, mnist5k):
    """A 600-image MNIST slice as IDX files plus a config that trains in seconds."""
    root = tmp_path_factory.mktemp("exp")
    idx = np.random.default_rng(0).choice(len(mnist5k), 600, replace=False)
    # back to 28x28 bytes is lossy after resizing, so store the 32x32 images directly
    pixels = unit_to_bytes(mnist5k.images[idx, 0])
    write_idx(root / "images.idx", pixels, 0x00000803)
    write_idx(root / "labels.idx", mnist5k.labels[idx], 0x00000801)
    cfg = {
        "dataset": {"images": "images.idx", "labels": "labels.idx", "name": "mini"},
        "epochs": 2,
        "batch_size": 64,
        "fid_samples": 200,
        "classifier_epochs": 1,
        "deepshap_refs": 4,
    }
    (root / "cfg.json").write_text(json.dumps(cfg))
    return root


def test_defaults(workspace):
    spec = parse_config({"dataset": {"images": "images.idx"}}, base_dir=workspace)
    t = spec.train
    assert (t.batch_size, t.lr, t.alpha, t.epochs, t.xai_start) == (128, 0.0002, 0.2, 10, 5)
    assert t.explainer == "none" and t.architecture == "fc"
    assert spec.dataset["images"] == str(workspace / "images.idx")
    assert spec.dataset["format"] == "idx"


def test_override_precedence(workspace):
    path = workspace / "lime.json"
    path.write_text(json.dumps({"dataset": {"images": "images.idx"}, "explainer": "saliency", "alpha": 0.5}))
    spec = parse_config(path, {"explainer": "lime", "alpha": None})
    assert spec.train.explainer == "lime" and spec.train.alpha == 0.5


@pytest.mark.parametrize(
    "values,key",
    [
        ({"alpha": -1}, "alpha"),
        ({"alpah": 0.1}, "alpah"),
        ({"epochs": "ten"}, "epochs"),
        ({"epochs": 2.5}, "epochs"),
        ({"diffaug": 1}, "diffaug"),
        ({"dataset": {"images": "missing.idx"}}, "dataset.images"),
        ({"dataset": {"images": "images.idx", "colour": 1}}, "dataset.colour"),
        ({"dataset": {"format": "png", "images": "images.idx"}}, "dataset.format"),
        ({"fid_samples": 0}, "fid_samples"),
    ],
)
def test_config_errors_name_key(workspace, values, key):
    cfg = {"dataset": {"images": "images.idx"}}
    cfg.update(values)
    with pytest.raises(ConfigError) as err:
        parse_config(cfg, base_dir=workspace)
    assert err.value.key == key


def run_cfg(workspace, out, **overrides):
    overrides["out"] = str(workspace / "runs" / out)
    return parse_config(workspace / "cfg.json", overrides)


def test_four_run_matrix_and_compare(workspace):
    dirs = []
    for explainer in ("none", "saliency"):
        for fraction in (1.0, 0.35):
            name = f"{explainer}-{fraction}"
            assert run(run_cfg(workspace, name, explainer=explainer, data_fraction=fraction)) == 0
            dirs.append(workspace / "runs" / name)
    for d in dirs:
        for f in ("spec.json", "metrics.csv", "trace.csv", "fid.json", "timings.json", "checkpoint.xgan"):
            assert (d / f).exists(), (d, f)
        assert sorted(p.name for p in (d / "samples").iterdir()) == ["epoch_000.pgm", "epoch_001.pgm"]
        with open(d / "metrics.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["epoch"] for r in rows] == ["0", "1"]
        assert [r["xai_active"] for r in rows] == (["0", "1"] if "saliency" in d.name else ["0", "0"])
        report = json.loads((d / "fid.json").read_text())
        assert set(report) == {"epoch", "n_real", "n_gen", "fid", "feature_dim"}
        assert report["feature_dim"] == 84 and report["epoch"] == 1
    assert len(list((workspace / "runs" / ".xaigan-cache").glob("lenet-*.xgan"))) == 1

    rows = compare(dirs)
    assert len(rows) == 4 and rows[0]["overhead_ratio"] == 1.0
    assert [r["explainer"] for r in rows] == ["none", "none", "saliency", "saliency"]
    assert rows[2]["explain"] > 0 and rows[0]["explain"] == 0.0
    table = format_table(rows).splitlines()
    assert len(table) == 5 and table[0].startswith("run,label,explainer")


def test_rerun_is_byte_identical(workspace):
    a = run_cfg(workspace, "det-a", explainer="deepshap")
    b = run_cfg(workspace, "det-b", explainer="deepshap")
    execute(a)
    execute(b)
    ra, rb = workspace / "runs" / "det-a", workspace / "runs" / "det-b"
    assert (ra / "metrics.csv").read_bytes() == (rb / "metrics.csv").read_bytes()
    assert (ra / "checkpoint.xgan").read_bytes() == (rb / "checkpoint.xgan").read_bytes()
    header = (ra / "trace.csv").read_text().splitlines()[0]
    assert header == "epoch,d_loss,g_loss,fid,seconds,xai_active"


def test_checkpoint_survives_interrupt(workspace, monkeypatch):
    import xaigan.experiment as exp

    calls = {"n": 0}
    real = exp.save_checkpoint

    def flaky(path, tensors):
        calls["n"] += 1
        if calls["n"] == 2:
            # die half-way through writing the second checkpoint
            with open(str(path) + ".tmp", "wb") as fh:
                fh.write(b"XGAN1 partial")
            raise KeyboardInterrupt
        real(path, tensors)

    monkeypatch.setattr(exp, "save_checkpoint", flaky)
    spec = run_cfg(workspace, "interrupted")
    with pytest.raises(KeyboardInterrupt):
        execute(spec)
    state = load_checkpoint(workspace / "runs" / "interrupted" / "checkpoint.xgan")
    assert "G.0.dense.weight" in state


def test_sample_grid_is_readable(workspace):
    d = workspace / "runs" / "none-1.0"
    if not d.exists():
        pytest.skip("matrix test did not run")
    img = read_netpbm(d / "samples" / "epoch_001.pgm")
    assert img.shape == (1, 8 * 33 + 1, 8 * 33 + 1) and img.dtype == np.uint8


def test_compare_errors(workspace, tmp_path):
    with pytest.raises(ValueError):
        compare([workspace])
    with pytest.raises(Exception) as err:
        compare([workspace / "runs" / "none-1.0", tmp_path])
    assert str(tmp_path) in str(err.value)


def test_run_reports_json_error(workspace, capsys):
    spec = run_cfg(workspace, "tiny-batch", batch_size=4096)
    assert run(spec) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ValueError" and "batch" in err["message"]


def test_cli_config_error_exit_code(workspace, capsys):
    assert main(["run", "--config", str(workspace / "cfg.json"), "--alpha", "-1"]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["key"] == "alpha"


def test_cli_run_and_compare(workspace, capsys):
    out_a, out_b = workspace / "runs" / "cli-a", workspace / "runs" / "cli-b"
    cfg = str(workspace / "cfg.json")
    assert main(["run", "--config", cfg, "--epochs", "1", "--out", str(out_a)]) == 0
    assert main(["run", "--config", cfg, "--epochs", "1", "--explainer", "saliency", "--seed", "4", "--out", str(out_b)]) == 0
    spec = json.loads((out_b / "spec.json").read_text())
    assert spec["explainer"] == "saliency" and spec["seed"] == 4 and spec["epochs"] == 1
    capsys.readouterr()
    csv_path = workspace / "table.csv"
    assert main(["compare", str(out_a), str(out_b), "--csv", str(csv_path)]) == 0
    printed = capsys.readouterr().out
    assert printed == csv_path.read_text() and len(printed.splitlines()) == 3


def test_module_entry_point(workspace):
    proc = subprocess.run(
        [sys.executable, "-m", "xaigan", "compare", str(workspace / "nope")],
        capture_output=True, text=True, env={**os.environ},
    )
    assert proc.returncode == 1
    assert json.loads(proc.stderr)["error"] == "ValueError"
