import struct

import numpy as np
import pytest

from xaigan.errors import NonFiniteError, XaiganError
from xaigan.layers import BatchNorm, Dense, Tanh
from xaigan.models import build_fc_gan
from xaigan.network import MAGIC, Network, load_checkpoint, save_checkpoint


def test_layer_and_param_names():
    net = Network([Dense(2, 3), Tanh(), Dense(3, 1)])
    assert [l.name for l in net] == ["0.dense", "1.tanh", "2.dense"]
    assert sorted(net.params()) == ["0.dense.bias", "0.dense.weight", "2.dense.bias", "2.dense.weight"]
    assert net.num_params() == 2 * 3 + 3 + 3 + 1


def test_forward_stop(rng):
    net = Network([Dense(2, 3, rng), Tanh(), Dense(3, 1, rng)])
    x = rng.normal(size=(4, 2))
    assert net.forward(x, stop=2).shape == (4, 3)
    assert np.array_equal(net.forward(x, stop=2), np.tanh(net.layers[0].forward(x)))


def test_check_finite_names_layer():
    net = Network([Dense(2, 2), Tanh()])
    net.forward(np.ones((1, 2)), training=True)
    with pytest.raises(NonFiniteError) as err:
        net.backward(np.array([[np.inf, 0.0]]), check_finite=True)
    assert err.value.layer == "1.tanh"


def test_checkpoint_round_trip(tmp_path, rng):
    pair = build_fc_gan(rng)
    state = pair.state_dict()
    path = tmp_path / "ck.xgan"
    save_checkpoint(path, state)
    loaded = load_checkpoint(path)
    assert list(loaded) == list(state)
    for k in state:
        assert loaded[k].dtype == np.float64 and np.array_equal(loaded[k], state[k])
    other = build_fc_gan(np.random.default_rng(99))
    other.load_state_dict(loaded)
    z = rng.normal(size=(3, 100))
    assert np.array_equal(other.generator.forward(z), pair.generator.forward(z))


def test_checkpoint_layout(tmp_path):
    path = tmp_path / "one.xgan"
    save_checkpoint(path, {"ab": np.array([[1.0, 2.0, 3.0]])})
    raw = path.read_bytes()
    expect = MAGIC + struct.pack("<I", 2) + b"ab" + struct.pack("<III", 2, 1, 3) + np.array([1.0, 2.0, 3.0], "<f8").tobytes()
    assert raw == expect
    assert not (tmp_path / "one.xgan.tmp").exists()


def test_checkpoint_errors(tmp_path):
    bad = tmp_path / "bad.xgan"
    bad.write_bytes(b"NOPE!")
    with pytest.raises(XaiganError):
        load_checkpoint(bad)
    save_checkpoint(bad, {"w": np.zeros(4)})
    bad.write_bytes(bad.read_bytes()[:-3])
    with pytest.raises(XaiganError):
        load_checkpoint(bad)


def test_load_state_dict_checks():
    net = Network([Dense(2, 2), BatchNorm(2)])
    with pytest.raises(XaiganError):
        net.load_state_dict({})
    state = {k: np.zeros(3) for k in net.state_dict()}
    with pytest.raises(XaiganError):
        net.load_state_dict(state)
    assert "1.batchnorm.running_mean" in net.state_dict()
