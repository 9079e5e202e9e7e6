import numpy as np
import pytest

from wcellnet import autodiff as ad
from wcellnet.errors import ConfigError, FormatError, ShapeError
from wcellnet.layers import ConvBlock, UpConvBlock
from wcellnet.model import (
    ModelConfig,
    WCellNet,
    checkpoint_bytes,
    closed_form_count,
    count_parameters,
    load_checkpoint,
    save_checkpoint,
)
from wcellnet import records


def small(k=4, IF=3, **kw):
    return WCellNet(ModelConfig(k=k, IF=IF, input_h=16, input_w=16, **kw), seed=0)


def test_conv_block_count_formula():
    store = ad.ParamStore()
    blk = ConvBlock("b", 3, 5)
    blk.init(store, np.random.default_rng(0))
    assert store.count() == blk.param_count() == 9 * 3 * 5 + 5 + 9 * 5 * 5 + 5 + 2 * (5 + 5)


def test_upconv_block_count():
    for kernel in (2, 3):
        store = ad.ParamStore()
        blk = UpConvBlock("u", 6, 4, "transpose", kernel)
        blk.init(store, np.random.default_rng(0))
        assert store.count() == blk.param_count() == kernel * kernel * 6 * 4 + 4 + 9 * 4 * 4 + 4


@pytest.mark.parametrize("k,IF,kernel,head", [(4, 3, 3, 3), (8, 5, 2, 3), (4, 7, 3, 1)])
def test_closed_form_matches_built_net(k, IF, kernel, head):
    cfg = ModelConfig(k=k, IF=IF, input_h=16, input_w=16, upconv_kernel=kernel, head_kernel=head)
    assert count_parameters(WCellNet(cfg)) == closed_form_count(cfg)


def test_reference_counts():
    # frozen from the block formulas
    assert closed_form_count(ModelConfig(k=16, IF=3)) == 1_273_587
    assert closed_form_count(ModelConfig(k=16, IF=4)) == 1_273_732
    assert closed_form_count(ModelConfig(k=16, IF=3, upconv_kernel=2)) == 1_002_227


def test_nearest_mode_count():
    cfg = ModelConfig(k=4, IF=3, input_h=16, input_w=16, upsample_mode="nearest")
    assert count_parameters(WCellNet(cfg)) == closed_form_count(cfg)


def test_forward_shapes_and_lookups():
    net = small()
    x = np.zeros((2, 1, 16, 16), np.float32)
    out, l1, l2 = net.forward(x, x, "eval", return_lookups=True)
    assert out.shape == (2, 3, 16, 16)
    assert [t.shape for t in l1] == [(2, 4, 8, 8), (2, 8, 4, 4), (2, 16, 2, 2), (2, 32, 1, 1)]
    assert [t.shape for t in l2] == [t.shape for t in l1]
    assert np.all(np.abs(out.data) <= 1)


def test_forward_rejects_bad_inputs():
    net = small()
    with pytest.raises(ShapeError):
        net.forward(np.zeros((1, 1, 16, 16)), np.zeros((1, 1, 32, 32)))
    with pytest.raises(ShapeError):
        net.forward(np.zeros((1, 2, 16, 16)), np.zeros((1, 2, 16, 16)))
    with pytest.raises(ShapeError):
        net.forward(np.zeros((1, 1, 24, 24)), np.zeros((1, 1, 24, 24)))


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(IF=8)
    with pytest.raises(ConfigError):
        ModelConfig(input_h=100)
    with pytest.raises(ConfigError):
        ModelConfig(upconv_kernel=4)


def test_init_is_seeded():
    a = WCellNet(ModelConfig(k=4, IF=3, input_h=16, input_w=16), seed=3)
    b = WCellNet(ModelConfig(k=4, IF=3, input_h=16, input_w=16), seed=3)
    c = WCellNet(ModelConfig(k=4, IF=3, input_h=16, input_w=16), seed=4)
    assert checkpoint_bytes(a) == checkpoint_bytes(b) != checkpoint_bytes(c)


def test_encoders_are_independent():
    net = small()
    w1 = net.store["enc1.block1.conv1.weight"].data
    w2 = net.store["enc2.block1.conv1.weight"].data
    assert not np.array_equal(w1, w2)


def test_predict_matches_eval_forward_and_batches():
    net = small()
    rng = np.random.default_rng(0)
    x_f = rng.uniform(-1, 1, (5, 1, 16, 16)).astype(np.float32)
    x_l = rng.uniform(-1, 1, (5, 1, 16, 16)).astype(np.float32)
    full = net.forward(x_f, x_l, "eval").data
    np.testing.assert_allclose(net.predict(x_f, x_l, batch_size=2), full, atol=1e-6)


def test_checkpoint_round_trip(tmp_path):
    net = small(head_kernel=1, upconv_kernel=2)
    net.store.bn["enc1.block1.bn1"].running_mean[:] = 0.25
    p1, p2 = tmp_path / "a.wcnc", tmp_path / "b.wcnc"
    save_checkpoint(net, p1)
    back = load_checkpoint(p1)
    assert back.config == net.config
    save_checkpoint(back, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_layout(tmp_path):
    net = small()
    rf = records.decode(checkpoint_bytes(net))
    assert rf.config == (4, 3, 4, 16, 16)
    names = list(rf.records)
    assert names[0] == "enc1.block1.conv1.weight"
    assert names.index("head.bias") < names.index("enc1.block1.bn1.running_mean")


def test_checkpoint_errors(tmp_path):
    net = small()
    rf = records.decode(checkpoint_bytes(net))
    bad = tmp_path / "bad.wcnc"

    rf.records["mystery.weight"] = np.zeros(1, np.float32)
    records.write(bad, rf)
    with pytest.raises(FormatError, match="unknown"):
        load_checkpoint(bad)
    del rf.records["mystery.weight"]

    rf.records["head.bias"] = np.zeros(5, np.float32)
    records.write(bad, rf)
    with pytest.raises(FormatError, match="shape"):
        load_checkpoint(bad)

    del rf.records["head.bias"]
    records.write(bad, rf)
    with pytest.raises(FormatError, match="missing"):
        load_checkpoint(bad)

    good = checkpoint_bytes(net)
    bad.write_bytes(b"XXXX" + good[4:])
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(bad)
    bad.write_bytes(good[:-3])
    with pytest.raises(FormatError):
        load_checkpoint(bad)
    bad.write_bytes(good + b"\0")
    with pytest.raises(FormatError):
        load_checkpoint(bad)
