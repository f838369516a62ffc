import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import toy_dataset
from xaigan.data import Dataset
from xaigan.errors import ConfigError, ShapeError
from xaigan.explainers import SaliencyExplainer
from xaigan.metrics import Stopwatch
from xaigan.models import build_fc_gan
from xaigan.optim import Adam
from xaigan.training import (
    CsvTraceSink,
    TrainConfig,
    bce,
    discriminator_step,
    generator_step,
    modify_gradient,
    train,
)


def snapshot(net):
    return {k: v.copy() for k, v in net.params().items()}


def same(a, b):
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


def half_discriminator(pair):
    last = [l for l in pair.discriminator.layers if l.kind == "dense"][-1]
    last.weight[...] = 0.0
    last.bias[...] = 0.0


def test_bce_at_one_half_gives_2ln2(rng):
    pair = build_fc_gan(rng)
    half_discriminator(pair)
    real = rng.uniform(-1, 1, size=(8, 1, 32, 32))
    loss = discriminator_step(pair, real, rng.normal(size=(8, 100)), Adam(), rng)
    assert abs(loss - 1.3863) < 1e-4
    assert np.isclose(loss, 2 * np.log(2), rtol=1e-14)


def test_bce_limits_and_gradient():
    assert bce(np.ones((4, 1)), 1)[0] < 1e-11
    assert bce(np.zeros((4, 1)), 0)[0] < 1e-11
    p = np.array([[0.3], [0.6]])
    loss, g = bce(p, 1)
    assert np.isclose(loss, -np.log(p).mean())
    assert np.allclose(g, -1 / (2 * p))


def test_parameter_isolation(rng):
    pair = build_fc_gan(rng)
    g0, d0 = snapshot(pair.generator), snapshot(pair.discriminator)
    real = rng.uniform(-1, 1, size=(4, 1, 32, 32))
    discriminator_step(pair, real, rng.normal(size=(4, 100)), Adam(), rng)
    assert same(g0, snapshot(pair.generator)) and not same(d0, snapshot(pair.discriminator))
    d1 = snapshot(pair.discriminator)
    generator_step(pair, rng.normal(size=(4, 100)), False, 0.2, None, Adam(), rng)
    assert same(d1, snapshot(pair.discriminator)) and not same(g0, snapshot(pair.generator))


class ZeroMask:
    def __call__(self, D, images):
        return np.zeros_like(images)


def _generator_run(use_xai, alpha, explainer, steps=3):
    pair = build_fc_gan(np.random.default_rng(0))
    opt, rng, zs = Adam(), np.random.default_rng(1), np.random.default_rng(2)
    losses = [generator_step(pair, zs.normal(size=(6, 100)), use_xai, alpha, explainer, opt, rng) for _ in range(steps)]
    return losses, snapshot(pair.generator)


@pytest.mark.parametrize("alpha,explainer", [(0.2, ZeroMask()), (0.0, SaliencyExplainer())])
def test_neutral_xai_is_bit_identical(alpha, explainer):
    base_loss, base = _generator_run(False, 0.2, None)
    loss, params = _generator_run(True, alpha, explainer)
    assert loss == base_loss and same(params, base)


def test_active_xai_changes_update():
    _, base = _generator_run(False, 0.2, None)
    _, params = _generator_run(True, 0.2, SaliencyExplainer())
    assert not same(params, base)


def test_hand_computed_modification():
    out = modify_gradient(np.array([0.2, -0.4]), np.array([1.0, 0.5]), 0.1)
    expect = np.array([0.22, -0.42])
    # 0.22 and -0.42 are not representable; allow one unit in the last place
    np.testing.assert_array_max_ulp(out, expect, maxulp=1)
    assert np.array_equal(np.round(out, 15), expect)


@settings(max_examples=300, deadline=None)
@given(
    arrays(np.float64, 16, elements=st.floats(-1e3, 1e3, allow_nan=False, allow_subnormal=False)),
    arrays(np.float64, 16, elements=st.floats(0, 1)),
    st.floats(0, 2),
)
def test_modification_preserves_sign_and_scales(delta, mask, alpha):
    out = modify_gradient(delta, mask, alpha)
    assert np.array_equal(np.sign(out), np.sign(delta))
    assert np.allclose(np.abs(out), np.abs(delta) * (1 + alpha * mask), rtol=1e-14, atol=0)
    assert np.all(np.abs(out) >= np.abs(delta))
    untouched = mask == 0
    assert np.array_equal(out[untouched], delta[untouched])


def test_mask_shape_must_match():
    with pytest.raises(ShapeError):
        modify_gradient(np.zeros((2, 1, 4, 4)), np.zeros((2, 1, 4)), 0.1)
    with pytest.raises(ShapeError):
        modify_gradient(np.zeros((2, 3, 4, 4)), np.zeros((2, 1, 4, 4)), 0.1)


def test_use_xai_needs_explainer(rng):
    with pytest.raises(ValueError):
        generator_step(build_fc_gan(rng), rng.normal(size=(2, 100)), True, 0.2, None, Adam(), rng)


def small_config(**kw):
    base = dict(epochs=4, batch_size=16, data_fraction=1.0, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def test_schedule_law():
    data = toy_dataset(32)
    sw = Stopwatch()
    _, trace = train(small_config(epochs=10, explainer="saliency"), data, stopwatch=sw)
    flags = trace.column("xai_active")
    assert flags == [False] * 5 + [True] * 5
    assert [r.epoch for r in trace.records] == list(range(10))
    assert sw.counts["explain"] == 5 * 2
    assert all(s > 0 for s in trace.column("seconds"))


@pytest.mark.parametrize("start", [0, 3, 4])
def test_schedule_custom_start(start):
    sw = Stopwatch()
    _, trace = train(small_config(explainer="saliency", xai_start_epoch=start), toy_dataset(32), stopwatch=sw)
    assert sum(trace.column("xai_active")) == 4 - start
    assert sw.counts.get("explain", 0) == (4 - start) * 2


def test_explainer_none_matches_alpha_zero():
    data = toy_dataset(32)
    _, a = train(small_config(), data)
    _, b = train(small_config(explainer="deepshap", alpha=0.0), data)
    assert a.column("d_loss") == b.column("d_loss") and a.column("g_loss") == b.column("g_loss")


def test_training_is_deterministic():
    data = toy_dataset(48)
    pa, a = train(small_config(explainer="saliency", epochs=2), data)
    pb, b = train(small_config(explainer="saliency", epochs=2), data)
    assert a.column("g_loss") == b.column("g_loss")
    assert same(snapshot(pa.generator), snapshot(pb.generator))


def test_diffaug_training_runs():
    _, trace = train(small_config(epochs=2, diffaug=True, explainer="saliency", xai_start_epoch=1), toy_dataset(32))
    assert np.all(np.isfinite(trace.column("g_loss")))


def test_dataset_smaller_than_batch():
    with pytest.raises(ValueError):
        train(small_config(batch_size=64), toy_dataset(32))


def test_non_finite_loss_aborts_with_partial_trace():
    bad = toy_dataset(32)
    bad.images[:] = np.nan
    _, trace = train(small_config(), bad)
    assert trace.aborted and "epoch 0" in trace.aborted
    assert len(trace) == 0


def test_architecture_shape_mismatch():
    with pytest.raises(ShapeError):
        train(small_config(architecture="dc"), toy_dataset(32, channels=1))


@pytest.mark.parametrize(
    "kw,key",
    [({"alpha": -1.0}, "alpha"), ({"epochs": 0}, "epochs"), ({"batch_size": 0}, "batch_size"),
     ({"data_fraction": 0.0}, "data_fraction"), ({"xai_start_epoch": 11}, "xai_start_epoch"),
     ({"explainer": "shap"}, "explainer"), ({"architecture": "mlp"}, "architecture")],
)
def test_config_validation_names_key(kw, key):
    with pytest.raises(ConfigError) as err:
        TrainConfig(**kw).validate()
    assert err.value.key == key


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.batch_size, cfg.lr, cfg.alpha, cfg.xai_start) == (128, 0.0002, 0.2, 5)
    assert TrainConfig(epochs=7).xai_start == 3


def test_csv_sink_rows():
    buf = io.StringIO()
    sink = CsvTraceSink(buf)
    data = toy_dataset(32)
    _, trace = train(small_config(epochs=2), data, sink=sink, fid=lambda g, d: 1.25)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "epoch,d_loss,g_loss,fid,seconds,xai_active"
    assert len(lines) == 3
    first = lines[1].split(",")
    assert first[0] == "0" and first[3] == "1.25" and first[5] == "0"
    assert float(first[1]) == trace.records[0].d_loss
