"""Experiment driver: resolved configs, run directories and run comparison."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import load_cifar10, load_idx
from .errors import ConfigError, XaiganError
from .imageio import image_grid, write_netpbm
from .metrics import FidEvaluator, Stopwatch, train_feature_classifier
from .models import build_lenet_classifier
from .network import load_checkpoint, save_checkpoint
from .training import TRACE_COLUMNS, CsvTraceSink, TrainConfig, train

METRICS_COLUMNS = tuple(c for c in TRACE_COLUMNS if c != "seconds")
DATASET_KEYS = {"format", "images", "labels", "files", "name"}


@dataclass
class ExperimentSpec:
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: dict = field(default_factory=dict)
    out: str = "runs/run"
    label: str = ""
    fid_samples: int = 2048
    sample_every: int = 1
    classifier_epochs: int = 5
    classifier_seed: int = 0
    cache_dir: str | None = None

    def to_json(self):
        d = dataclasses.asdict(self)
        d.update(d.pop("train"))
        return d


_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}
_SPEC_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentSpec) if f.name != "train"}


def _coerce(key, value, default):
    """Type-check ``value`` against the type of the field's default."""
    kind = type(default)
    if key == "xai_start_epoch" or default is None:
        if value is None:
            return None
        kind = int if key == "xai_start_epoch" else str
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected a boolean, got {value!r}")
    elif kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
    elif kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        value = float(value)
    elif kind is str:
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
    elif kind is dict and not isinstance(value, dict):
        raise ConfigError(key, f"expected an object, got {value!r}")
    return value


def parse_config(config=None, overrides=None, base_dir=None):
    """Resolve an ExperimentSpec from a JSON file (or dict) plus overrides.

    Precedence is overrides > file > defaults. Unknown keys, wrong types and
    out-of-range values raise ``ConfigError`` naming the key. Relative dataset
    paths are taken relative to the config file.
    """
    if isinstance(config, (str, Path)):
        path = Path(config)
        try:
            values = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"{path}: invalid JSON ({exc})") from None
        base_dir = path.parent if base_dir is None else base_dir
    else:
        values = dict(config or {})
    if not isinstance(values, dict):
        raise ConfigError("config", "top level must be a JSON object")
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})

    train_kw, spec_kw = {}, {}
    for key, value in values.items():
        if key in _TRAIN_FIELDS:
            train_kw[key] = _coerce(key, value, _TRAIN_FIELDS[key].default)
        elif key in _SPEC_FIELDS:
            f = _SPEC_FIELDS[key]
            default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
            spec_kw[key] = _coerce(key, value, default)
        else:
            raise ConfigError(key, "unknown key")
    cfg = TrainConfig(**train_kw).validate()
    spec = ExperimentSpec(train=cfg, **spec_kw)

    ds = dict(spec.dataset)
    unknown = set(ds) - DATASET_KEYS
    if unknown:
        raise ConfigError(f"dataset.{sorted(unknown)[0]}", "unknown key")
    fmt = ds.setdefault("format", "idx")
    if fmt not in ("idx", "cifar10"):
        raise ConfigError("dataset.format", f"must be 'idx' or 'cifar10', got {fmt!r}")
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    path_keys = ["images", "labels"] if fmt == "idx" else ["files"]
    if fmt == "idx" and "images" not in ds:
        raise ConfigError("dataset.images", "required for idx datasets")
    if fmt == "cifar10" and not ds.get("files"):
        raise ConfigError("dataset.files", "required for cifar10 datasets")
    for key in path_keys:
        if key not in ds or ds[key] is None:
            continue
        items = ds[key] if isinstance(ds[key], list) else [ds[key]]
        resolved = []
        for item in items:
            p = Path(item)
            p = p if p.is_absolute() else base / p
            if not p.exists():
                raise ConfigError(f"dataset.{key}", f"file not found: {p}")
            resolved.append(str(p))
        ds[key] = resolved if isinstance(ds[key], list) else resolved[0]
    ds.setdefault("name", Path(ds["images"] if fmt == "idx" else ds["files"][0]).parent.name or fmt)
    spec.dataset = ds

    for key in ("fid_samples", "sample_every", "classifier_epochs"):
        if getattr(spec, key) < 1:
            raise ConfigError(key, f"must be >= 1, got {getattr(spec, key)}")
    if not spec.label:
        spec.label = f"{cfg.architecture}-{cfg.explainer}-f{cfg.data_fraction:g}-s{cfg.seed}"
    return spec


def load_dataset(ds):
    if ds["format"] == "idx":
        return load_idx(ds["images"], ds.get("labels"), name=ds["name"])
    return load_cifar10(ds["files"], name=ds["name"])


def _classifier(spec, dataset, cache_dir):
    layout = [layer.kind for layer in build_lenet_classifier(2, dataset.images.shape[1]).layers]
    key = json.dumps([dataset.name, len(dataset), spec.classifier_seed, spec.classifier_epochs, layout])
    digest = hashlib.sha256(key.encode()).hexdigest()[:16]
    weights = cache_dir / f"lenet-{digest}.xgan"
    meta_path = cache_dir / f"lenet-{digest}.json"
    if weights.exists() and meta_path.exists():
        meta = json.loads(meta_path.read_text())
        net = build_lenet_classifier(meta["num_classes"], dataset.images.shape[1])
        net.load_state_dict(load_checkpoint(weights))
        meta["input_shape"] = tuple(meta["input_shape"])
        net.metadata.update(meta)
        return net
    net = train_feature_classifier(dataset, spec.classifier_epochs, spec.classifier_seed)
    cache_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(weights, net.state_dict())
    _write_atomic(meta_path, json.dumps(net.metadata, indent=2))
    return net


def _write_atomic(path, text):
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def execute(spec):
    """Run one experiment, writing its run directory; returns the train trace.

    Files: spec.json, metrics.csv (deterministic columns), trace.csv (adds
    wall-clock seconds), timings.json, fid.json, checkpoint.xgan and
    samples/epoch_XXX.pgm|ppm grids.
    """
    out = Path(spec.out)
    (out / "samples").mkdir(parents=True, exist_ok=True)
    _write_atomic(out / "spec.json", json.dumps(spec.to_json(), indent=2, sort_keys=True))

    sw = Stopwatch()
    t0 = time.perf_counter()
    with sw.section("load"):
        dataset = load_dataset(spec.dataset)
    cache_dir = Path(spec.cache_dir) if spec.cache_dir else out.parent / ".xaigan-cache"
    with sw.section("classifier"):
        clf = _classifier(spec, dataset, cache_dir)
    fid = FidEvaluator(clf, dataset.images, spec.fid_samples, seed=spec.classifier_seed)

    reports = []
    sample_z = np.random.default_rng(spec.train.seed + 7).standard_normal((64, 100))

    def on_epoch(epoch, pair, record):
        save_checkpoint(out / "checkpoint.xgan", pair.state_dict())
        last = epoch == spec.train.epochs - 1
        if not np.isnan(record.fid):
            reports.append(fid.report(record.fid, epoch))
        if (epoch + 1) % spec.sample_every == 0 or last:
            grid = image_grid(pair.generator.forward(sample_z[:, : pair.noise_dim], training=False))
            ext = "pgm" if grid.shape[0] == 1 else "ppm"
            write_netpbm(out / "samples" / f"epoch_{epoch:03d}.{ext}", grid)

    with open(out / "metrics.csv", "w", newline="") as mfh, open(out / "trace.csv", "w", newline="") as tfh:
        metrics_sink, trace_sink = CsvTraceSink(mfh, METRICS_COLUMNS), CsvTraceSink(tfh)

        def sink(record):
            metrics_sink(record)
            trace_sink(record)

        _, trace = train(spec.train, dataset, sink=sink, fid=fid, stopwatch=sw, on_epoch=on_epoch)

    if reports:
        _write_atomic(out / "fid.json", json.dumps(reports[-1], indent=2))
    timings = {
        "total_seconds": time.perf_counter() - t0,
        "train_seconds": float(sum(trace.column("seconds"))),
        "sections": sw.as_dict(),
        "classifier_accuracy": clf.metadata.get("test_accuracy"),
        "classifier_low_accuracy": clf.metadata.get("low_accuracy"),
    }
    _write_atomic(out / "timings.json", json.dumps(timings, indent=2))
    if trace.aborted:
        raise XaiganError(f"training aborted: {trace.aborted}")
    return trace


def run(spec):
    """``execute`` with CLI error semantics: 0 on success, 1 plus a JSON error on stderr."""
    try:
        execute(spec)
    except Exception as exc:  # report every failure in machine-readable form
        err = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, ConfigError):
            err["key"] = exc.key
        print(json.dumps(err), file=sys.stderr)
        return 1
    return 0


COMPARE_COLUMNS = (
    "run",
    "label",
    "explainer",
    "data_fraction",
    "final_fid",
    "train_seconds",
    "overhead_ratio",
    "d_step",
    "g_step",
    "explain",
    "fid",
)


def compare(run_dirs):
    """Summarize completed runs; returns the rows as dicts (read-only on the runs).

    ``overhead_ratio`` is each run's training seconds over the first run whose
    explainer is ``none`` (or the first run when there is none).
    """
    if len(run_dirs) < 2:
        raise ValueError("compare needs at least two run directories")
    missing = [str(d) for d in run_dirs if not all((Path(d) / f).exists() for f in ("metrics.csv", "spec.json", "timings.json"))]
    if missing:
        raise XaiganError(f"runs missing metrics.csv/spec.json/timings.json: {', '.join(missing)}")
    rows = []
    for d in run_dirs:
        d = Path(d)
        spec = json.loads((d / "spec.json").read_text())
        timings = json.loads((d / "timings.json").read_text())
        with open(d / "metrics.csv", newline="") as fh:
            fids = [r["fid"] for r in csv.DictReader(fh) if r["fid"]]
        sections = timings.get("sections", {})
        rows.append(
            {
                "run": str(d),
                "label": spec.get("label", ""),
                "explainer": spec.get("explainer", ""),
                "data_fraction": spec.get("data_fraction", ""),
                "final_fid": float(fids[-1]) if fids else float("nan"),
                "train_seconds": timings["train_seconds"],
                "d_step": sections.get("d_step", 0.0),
                "g_step": sections.get("g_step", 0.0),
                "explain": sections.get("explain", 0.0),
                "fid": sections.get("fid", 0.0),
            }
        )
    base = next((r for r in rows if r["explainer"] == "none"), rows[0])
    for r in rows:
        r["overhead_ratio"] = r["train_seconds"] / base["train_seconds"]
    return rows


def format_table(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARE_COLUMNS)
    for r in rows:
        w.writerow([f"{r[c]:.6g}" if isinstance(r[c], float) else r[c] for c in COMPARE_COLUMNS])
    return buf.getvalue()
