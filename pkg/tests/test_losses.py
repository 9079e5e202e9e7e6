import numpy as np
import pytest

from oracles import gaussian_window_ref, pixel_loss_loop, ssim_ref
from wcellnet import autodiff as ad
from wcellnet import records
from wcellnet.autodiff import ParamStore, Tensor
from wcellnet.errors import ConfigError, FormatError
from wcellnet.losses import (
    LossConfig,
    build_extractor,
    dssim,
    gaussian_window,
    loss_terms,
    perceptual_loss,
    pixel_loss,
    random_conv_weights,
    ssim_per_frame,
    weight_decay,
)


@pytest.mark.parametrize("x", [1, 2])
def test_pixel_loss_oracle(x):
    rng = np.random.default_rng(x)
    y, p = rng.uniform(-1, 1, (2, 3, 4, 4)), rng.uniform(-1, 1, (2, 3, 4, 4))
    assert pixel_loss(y, p, x).item() == pytest.approx(pixel_loss_loop(y, p, x), rel=1e-10)


def test_pixel_loss_rejects_bad_exponent_and_shape():
    with pytest.raises(ValueError):
        pixel_loss(np.zeros(2), np.zeros(2), 3)
    with pytest.raises(ValueError):
        pixel_loss(np.zeros(2), np.zeros(3))


def test_gaussian_window():
    w = gaussian_window()
    assert w.shape == (11, 11)
    assert abs(w.sum() - 1.0) < 1e-7
    np.testing.assert_allclose(w, gaussian_window_ref(), rtol=1e-12)
    assert not w.flags.writeable


def test_ssim_matches_scipy_reference():
    rng = np.random.default_rng(0)
    a = rng.uniform(-1, 1, (2, 2, 16, 20))
    b = np.clip(a + rng.normal(scale=0.2, size=a.shape), -1, 1)
    got = ssim_per_frame(a, b).data
    for m in range(2):
        for i in range(2):
            assert got[m, i] == pytest.approx(ssim_ref(a[m, i], b[m, i]), rel=1e-10)


def test_dssim_conventions():
    a = np.random.default_rng(1).uniform(-1, 1, (2, 3, 12, 12))
    assert dssim(a, a, "paper").item() == pytest.approx(0.5, abs=1e-12)
    assert dssim(a, a, "standard").item() == pytest.approx(0.0, abs=1e-12)
    b = np.random.default_rng(2).uniform(-1, 1, a.shape)
    assert dssim(a, b, "standard").item() > 0.5
    with pytest.raises(ValueError):
        dssim(a, a, "other")


def test_ssim_window_larger_than_image():
    with pytest.raises(ValueError):
        ssim_per_frame(np.zeros((1, 1, 8, 8)), np.zeros((1, 1, 8, 8)))


def test_perceptual_loss_zero_for_identical_and_grad_only_on_prediction():
    ext = build_extractor(LossConfig(lambda1=1, perceptual_extractor="random_conv"))
    y = np.random.default_rng(0).uniform(-1, 1, (1, 2, 16, 16)).astype(np.float32)
    assert perceptual_loss(y, y, ext).item() == 0.0
    yt = Tensor(y, requires_grad=True)
    yp = Tensor(y[::-1].copy() * 0.5, requires_grad=True)
    ad.backward(perceptual_loss(yt, yp, ext))
    assert not yt.grad.any() and yp.grad.any()


def test_vgg_weights_file(tmp_path):
    weights = random_conv_weights(3)
    path = tmp_path / "vgg.wcnc"
    records.write(path, records.RecordFile(records=dict(weights)))
    cfg = LossConfig(lambda1=1, perceptual_extractor="vgg16", vgg_weights=str(path))
    ext = build_extractor(cfg)
    ref = build_extractor(LossConfig(lambda1=1, perceptual_extractor="random_conv", extractor_seed=3))
    x = np.random.default_rng(0).uniform(-1, 1, (1, 1, 16, 16))
    np.testing.assert_array_equal(ext(Tensor(x)).data, ref(Tensor(x)).data)

    del weights["conv5_3.bias"]
    records.write(path, records.RecordFile(records=dict(weights)))
    with pytest.raises(FormatError):
        build_extractor(cfg)


def test_loss_config_validation():
    with pytest.raises(ConfigError):
        LossConfig(reconstruction="L3")
    with pytest.raises(ConfigError):
        LossConfig(perceptual_extractor="vgg16")


def test_weight_decay_only_weights():
    store = ParamStore()
    store.add("c.weight", np.full(3, 2.0))
    store.add("c.bias", np.full(2, 5.0))
    store.add("bn.gamma", np.full(2, 1.0))
    assert weight_decay(store).item() == pytest.approx(0.5 * 12)
    assert weight_decay(store, decay_all=True).item() == pytest.approx(0.5 * (12 + 50 + 2))


def test_loss_terms_composition():
    rng = np.random.default_rng(0)
    y = rng.uniform(-1, 1, (4, 3, 16, 16)).astype(np.float32)
    p = rng.uniform(-1, 1, (4, 3, 16, 16)).astype(np.float32)
    store = ParamStore()
    store.add("c.weight", np.full(4, 0.5))
    cfg = LossConfig(reconstruction="L2", lambda1=0.01, lambda2=0.1, perceptual_extractor="random_conv")
    ext = build_extractor(cfg)
    t = loss_terms(y, p, store, cfg, ext)
    assert t["recon"].item() == pytest.approx(pixel_loss_loop(y, p, 2) / 4, rel=1e-5)
    assert t["percep"].item() == pytest.approx(0.01 * perceptual_loss(y, p, ext).item() / 4, rel=1e-5)
    assert t["reg"].item() == pytest.approx(0.1 / 2 * 0.5 * 1.0, rel=1e-6)
    total = t["recon"].item() + t["percep"].item() + t["reg"].item()
    assert t["total"].item() == pytest.approx(total, rel=1e-6)


def test_dssim_reconstruction_is_not_batch_divided():
    y = np.random.default_rng(0).uniform(-1, 1, (3, 1, 12, 12))
    t = loss_terms(y, y, None, LossConfig(reconstruction="DSSIM"))
    assert t["total"].item() == pytest.approx(0.5)
