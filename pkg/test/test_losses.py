import warnings

import numpy as np
import pytest

from esnet import losses
from esnet.datasets import SynthSpec, synth_generate
from esnet.exceptions import ConfigError, EmptyValidMaskWarning, ImageRangeWarning, ShapeError
from esnet.network import DisparityPyramid
from esnet.tensor import Tensor, backward, recording


def scalar(value):
    return Tensor(np.full((1, 1, 1, 1), value))


@pytest.mark.parametrize('error,expected', [(0.5, 0.125), (2.0, 1.5), (-2.0, 1.5), (0.0, 0.0)])
def test_smooth_l1_values(error, expected):
    loss = losses.smooth_l1(scalar(error), scalar(0.0), scalar(1.0))
    assert loss.item() == pytest.approx(expected)


def test_smooth_l1_ignores_invalid_pixels():
    pred = Tensor(np.array([0.5, 100.0, 2.0]).reshape(1, 1, 1, 3), requires_grad=True, dtype=np.float64)
    gt = Tensor(np.array([0.0, np.nan, 0.0]).reshape(1, 1, 1, 3))
    valid = Tensor(np.array([1.0, 0.0, 1.0]).reshape(1, 1, 1, 3))
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', RuntimeWarning)
        with recording():
            loss = losses.smooth_l1(pred, gt, valid)
            backward(loss)
    assert loss.item() == pytest.approx((0.125 + 1.5) / 2)
    np.testing.assert_allclose(pred.grad.ravel(), [0.25, 0.0, 0.5])


def test_smooth_l1_empty_mask_warns():
    pred = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True, dtype=np.float64)
    with pytest.warns(EmptyValidMaskWarning):
        with recording():
            loss = losses.smooth_l1(pred, Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 2, 2))))
            backward(loss)
    assert loss.item() == 0.0
    np.testing.assert_array_equal(pred.grad, 0.0)


def test_smooth_l1_shape_mismatch():
    with pytest.raises(ShapeError):
        losses.smooth_l1(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 2, 3))), Tensor(np.ones((1, 1, 2, 2))))


def test_downsample_ground_truth():
    gt = np.zeros((1, 1, 4, 4))
    gt[..., :2, :2] = [[8.0, 4.0], [0.0, 0.0]]
    valid = np.zeros((1, 1, 4, 4))
    valid[..., 0, :2] = 1.0
    gt_s, valid_s = losses.downsample_ground_truth(Tensor(gt), Tensor(valid), 1)
    # mean of the two valid pixels (6), in half-resolution pixels
    assert gt_s.data[0, 0, 0, 0] == pytest.approx(3.0)
    np.testing.assert_array_equal(valid_s.data[0, 0], [[1.0, 0.0], [0.0, 0.0]])


def pyramid_from(gt, offset=0.0):
    maps = []
    for s in range(7):
        f = 2 ** s
        coarse = gt.reshape(1, 1, gt.shape[2] // f, f, gt.shape[3] // f, f).mean(axis=(3, 5)) / f
        maps.append(Tensor(coarse + offset))
    return DisparityPyramid(maps)


def test_supervised_total_zero_on_ground_truth(rng):
    gt = 10.0 * rng.random((1, 1, 64, 64))
    cfg = losses.SupervisedLossConfig()
    loss = losses.supervised_total(pyramid_from(gt), Tensor(gt), Tensor(np.ones_like(gt)), cfg)
    assert loss.item() == pytest.approx(0.0, abs=1e-10)


def test_supervised_total_weights_scales(rng):
    gt = 10.0 * rng.random((1, 1, 64, 64))
    cfg = losses.SupervisedLossConfig(omega=(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0))
    # every scale off by 0.5 -> smooth-L1 0.125 each
    loss = losses.supervised_total(pyramid_from(gt, 0.5), Tensor(gt), Tensor(np.ones_like(gt)), cfg)
    assert loss.item() == pytest.approx(3.0 * 0.125)


def test_supervised_config_rounds():
    cfg = losses.SupervisedLossConfig()
    assert cfg.omega == losses.DEFAULT_ROUNDS[0]
    assert cfg.for_round(3).omega == losses.DEFAULT_ROUNDS[3]
    with pytest.raises(ConfigError):
        cfg.for_round(4)
    with pytest.raises(ConfigError):
        losses.SupervisedLossConfig(omega=(1.0, 1.0))
    with pytest.raises(ConfigError):
        losses.SupervisedLossConfig(omega=(1.0, -1.0, 0, 0, 0, 0, 0))


def test_ssim_identical_images_is_one(rng):
    img = Tensor(rng.random((1, 3, 8, 8)))
    np.testing.assert_allclose(losses.ssim(img, img).data, 1.0, atol=1e-12)


def test_ssim_is_bounded_and_symmetric(rng):
    a, b = Tensor(rng.random((1, 3, 8, 8))), Tensor(rng.random((1, 3, 8, 8)))
    ab, ba = losses.ssim(a, b).data, losses.ssim(b, a).data
    np.testing.assert_allclose(ab, ba, atol=1e-12)
    assert ab.max() <= 1.0 + 1e-9 and ab.min() >= -1.0 - 1e-9


def test_ssim_range_warning():
    with pytest.warns(ImageRangeWarning):
        losses.ssim(Tensor(np.full((1, 3, 4, 4), 2.0)), Tensor(np.ones((1, 3, 4, 4))))


def ssim_oracle(a, b):
    pa, pb = np.pad(a, 1, mode='reflect'), np.pad(b, 1, mode='reflect')
    out = np.zeros_like(a)
    for y in range(a.shape[0]):
        for x in range(a.shape[1]):
            wa, wb = pa[y:y + 3, x:x + 3], pb[y:y + 3, x:x + 3]
            mu_a, mu_b = wa.mean(), wb.mean()
            var_a, var_b = (wa ** 2).mean() - mu_a ** 2, (wb ** 2).mean() - mu_b ** 2
            cov = (wa * wb).mean() - mu_a * mu_b
            out[y, x] = ((2 * mu_a * mu_b + losses.SSIM_C1) * (2 * cov + losses.SSIM_C2)
                         / ((mu_a ** 2 + mu_b ** 2 + losses.SSIM_C1) * (var_a + var_b + losses.SSIM_C2)))
    return out


def test_ssim_matches_windowed_formula(rng):
    a, b = rng.random((6, 7)), rng.random((6, 7))
    got = losses.ssim(Tensor(a.reshape(1, 1, 6, 7)), Tensor(b.reshape(1, 1, 6, 7))).data[0, 0]
    np.testing.assert_allclose(got, ssim_oracle(a, b), atol=1e-6)


def test_ssim_penalizes_brightness_offset():
    dark, bright = Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.ones((1, 3, 4, 4)))
    assert losses.ssim(dark, bright).data.max() < 1.0


def synth_pair(style='uniform-shift', disparity=4.0):
    sample = synth_generate(SynthSpec(count=1, height=64, width=128, style=style, disparity=disparity), rng=3)[0]
    return sample.left.astype(np.float64), sample.right.astype(np.float64), sample


def test_photometric_loss_prefers_true_disparity():
    left, right, _ = synth_pair()
    cfg = losses.UnsupLossConfig()
    good = losses.photometric_loss(left, right, Tensor(np.full((1, 1, 64, 128), 4.0)), 0, cfg).item()
    bad = losses.photometric_loss(left, right, Tensor(np.full((1, 1, 64, 128), 0.0)), 0, cfg).item()
    assert good < 0.05
    assert bad > 2 * good


def test_photometric_loss_zero_for_identical_views(rng):
    image = Tensor(rng.random((1, 3, 16, 32)))
    zero = Tensor(np.zeros((1, 1, 16, 32)))
    assert losses.photometric_loss(image, image, zero, 0, losses.UnsupLossConfig()).item() == \
        pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize('shift', [1, 3])
def test_photometric_error_zero_under_integer_shift(rng, shift):
    # left(x) == right(x - shift)
    base = rng.random((1, 3, 16, 32 + shift))
    left, right = Tensor(base[..., :32]), Tensor(base[..., shift:])
    d = Tensor(np.full((1, 1, 16, 32), float(shift)))
    error = losses.photometric_error_map(left, right, d, 0, losses.UnsupLossConfig()).data
    # the 3x3 SSIM window reaches one column past the clamped border
    assert np.abs(error[..., shift + 1:]).max() < 1e-10


def test_photometric_error_map_resolution():
    left, right, _ = synth_pair()
    d1 = Tensor(np.full((1, 1, 32, 64), 2.0))
    assert losses.photometric_error_map(left, right, d1, 1, losses.UnsupLossConfig()).shape == (1, 1, 32, 64)
    full = losses.UnsupLossConfig(full_resolution=True)
    assert losses.photometric_error_map(left, right, d1, 1, full).shape == (1, 1, 64, 128)
    with pytest.raises(ShapeError):
        losses.photometric_error_map(left, right, Tensor(np.ones((1, 1, 16, 32))), 1, losses.UnsupLossConfig())


def test_smoothness_loss():
    img = Tensor(np.full((1, 3, 8, 8), 0.5))
    assert losses.smoothness_loss(Tensor(np.full((1, 1, 8, 8), 3.0)), img).item() == pytest.approx(0.0)
    ramp = Tensor(np.tile(np.arange(8.0), (8, 1)).reshape(1, 1, 8, 8))
    # flat image: unit x-gradient everywhere, no y-gradient
    assert losses.smoothness_loss(ramp, img).item() == pytest.approx(1.0)


def test_smoothness_edges_reduce_penalty():
    ramp = Tensor(np.tile(np.arange(8.0), (8, 1)).reshape(1, 1, 8, 8))
    flat = Tensor(np.full((1, 3, 8, 8), 0.5))
    stripes = Tensor(np.tile((np.arange(8) % 2).astype(np.float64), (3, 8, 1)).reshape(1, 3, 8, 8))
    assert losses.smoothness_loss(ramp, stripes).item() < losses.smoothness_loss(ramp, flat).item()


def test_unsupervised_total_terms():
    left, right, sample = synth_pair()
    pyramid = pyramid_from(sample.gt_disparity.data.astype(np.float64))
    cfg = losses.UnsupLossConfig()
    total, terms = losses.unsupervised_total(pyramid, left, right, cfg, return_terms=True)
    assert len(terms['photometric']) == 4 and len(terms['smoothness']) == 4
    expected = sum(cfg.lambda1 * p + cfg.lambda2 * s for p, s in zip(terms['photometric'], terms['smoothness']))
    assert total.item() == pytest.approx(expected)
    # uniform disparity: no smoothness penalty
    assert max(terms['smoothness']) == pytest.approx(0.0, abs=1e-12)


def test_unsupervised_total_linear_in_lambda1():
    left, right, sample = synth_pair()
    pyramid = pyramid_from(sample.gt_disparity.data.astype(np.float64), 0.5)
    base = losses.UnsupLossConfig()
    doubled = losses.UnsupLossConfig(lambda1=2 * base.lambda1)
    total, terms = losses.unsupervised_total(pyramid, left, right, base, return_terms=True)
    total2 = losses.unsupervised_total(pyramid, left, right, doubled).item()
    photometric = base.lambda1 * sum(terms['photometric'])
    assert photometric > 0
    assert total2 - total.item() == pytest.approx(photometric)


def test_unsupervised_config_validation():
    with pytest.raises(ConfigError):
        losses.UnsupLossConfig(alpha=1.5)
    with pytest.raises(ConfigError):
        losses.UnsupLossConfig(num_scales=0)


def test_mixed_total(rng):
    left, right, sample = synth_pair()
    gt = sample.gt_disparity.data.astype(np.float64)
    pyramid = pyramid_from(gt, 0.5)
    sup, unsup = losses.SupervisedLossConfig(), losses.UnsupLossConfig()
    valid = Tensor(np.ones_like(gt))
    supervised = losses.supervised_total(pyramid, Tensor(gt), valid, sup).item()
    assert losses.mixed_total(pyramid, Tensor(gt), valid, left, right, sup, unsup, 0.0).item() == \
        pytest.approx(supervised)
    unsupervised = losses.unsupervised_total(pyramid, left, right, unsup).item()
    mixed = losses.mixed_total(pyramid, Tensor(gt), valid, left, right, sup, unsup, 0.5).item()
    assert mixed == pytest.approx(supervised + 0.5 * unsupervised)
    with pytest.raises(ConfigError):
        losses.mixed_total(pyramid, Tensor(gt), valid, left, right, sup, unsup, -1.0)
