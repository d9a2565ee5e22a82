import numpy as np
import pytest

from esnet import network
from esnet.exceptions import ConfigError, ShapeError
from esnet.matching import correlate
from esnet.network import (BASELINE, ESNET, ESNET_M, PWC_ALL, DisparityPyramid, NetworkConfig, StereoNetwork,
                           esnet_forward, esnetm_forward, feature_extract, init_params)
from esnet.tensor import Tensor, no_grad, recording


def images(rng, h, w, batch=1):
    size = (batch, 3, h, w)
    return Tensor(rng.normal(size=size).astype(np.float32)), Tensor(rng.normal(size=size).astype(np.float32))


@pytest.mark.parametrize('h,w', [(64, 128), (128, 192)])
def test_pyramid_shapes(rng, h, w):
    net = StereoNetwork(NetworkConfig(ESNET, 'tiny'), seed=0)
    left, right = images(rng, h, w)
    with no_grad():
        pyramid, masks = net(left, right)
    assert pyramid.shapes() == [(1, 1, h >> s, w >> s) for s in range(7)]
    assert masks == []


@pytest.mark.parametrize('h,w', [(64, 128), (128, 192)])
def test_esnetm_masks(rng, h, w):
    config = NetworkConfig(ESNET_M, 'tiny')
    params = init_params(config, seed=0)
    left, right = images(rng, h, w)
    with no_grad():
        pyramid, masks = esnetm_forward(left, right, params, config)
    assert [m.shape for m in masks] == [(1, 1, h >> s, w >> s) for s in (2, 1, 0)]
    for m in masks:
        assert m.theta.data.min() >= 0.0 and m.theta.data.max() <= 1.0
    assert pyramid[0].shape == (1, 1, h, w)


def test_forward_entry_points_check_variant(rng):
    left, right = images(rng, 64, 64)
    esnetm = NetworkConfig(ESNET_M, 'tiny')
    with pytest.raises(ConfigError):
        esnet_forward(left, right, init_params(esnetm, seed=0), esnetm)
    esnet = NetworkConfig(ESNET, 'tiny')
    with pytest.raises(ConfigError):
        esnetm_forward(left, right, init_params(esnet, seed=0), esnet)


def test_input_divisibility(rng):
    net = StereoNetwork(NetworkConfig(ESNET, 'tiny'), seed=0)
    left, right = images(rng, 64, 100)
    with pytest.raises(ShapeError):
        net(left, right)


def test_feature_extract(rng):
    config = NetworkConfig(ESNET, 'tiny')
    params = init_params(config, seed=0)
    left, right = images(rng, 64, 128)
    with no_grad():
        f_l, f_r = feature_extract(left, right, params)
    assert sorted(f_l) == [0, 1, 2, 3]
    for s in range(4):
        assert f_l[s].shape == (1, config.channel_schedule[s], 64 >> s, 128 >> s)
        assert f_r[s].shape == f_l[s].shape
    with pytest.raises(ShapeError):
        feature_extract(Tensor(np.zeros((1, 1, 64, 64))), Tensor(np.zeros((1, 1, 64, 64))), params)


def test_shared_extractor_weights(rng):
    config = NetworkConfig(ESNET, 'tiny')
    params = init_params(config, seed=0)
    left, _ = images(rng, 64, 64)
    with no_grad():
        f_l, f_r = feature_extract(left, left, params)
    for s in range(4):
        np.testing.assert_array_equal(f_l[s].data, f_r[s].data)


@pytest.mark.parametrize('variant,warps', [(BASELINE, 0), (ESNET, 3), (ESNET_M, 3), (PWC_ALL, 4)])
def test_warps_per_variant(rng, variant, warps):
    config = NetworkConfig(variant, 'tiny')
    net = StereoNetwork(config, seed=0)
    left, right = images(rng, 64, 64)
    with recording() as graph:
        net(left, right)
        assert graph.count('WarpByDisparity') == warps
    assert config.fmm_scales == {BASELINE: (), ESNET: (2, 1, 0), ESNET_M: (2, 1, 0), PWC_ALL: (5, 4, 3, 2)}[variant]


def test_correlations_per_variant(rng):
    counts = {}
    for variant in (BASELINE, ESNET, PWC_ALL):
        net = StereoNetwork(NetworkConfig(variant, 'tiny'), seed=0)
        left, right = images(rng, 64, 64)
        with recording() as graph:
            net(left, right)
            counts[variant] = graph.count('Correlate')
    assert counts == {BASELINE: 1, ESNET: 4, PWC_ALL: 6}


def test_config_validation():
    with pytest.raises(ConfigError):
        NetworkConfig('ResNet')
    with pytest.raises(ConfigError):
        NetworkConfig(ESNET, 'huge')
    with pytest.raises(ConfigError):
        NetworkConfig(ESNET, channel_schedule=[8, 16, 32])
    with pytest.raises(ConfigError):
        NetworkConfig(ESNET, d_max_base=0)
    with pytest.raises(ConfigError):
        NetworkConfig(ESNET, dtype='int32')


def test_parameter_counts():
    tiny = StereoNetwork(NetworkConfig(ESNET, 'tiny'), seed=0)
    assert tiny.parameter_count() < 2000000
    assert tiny.parameter_count() == sum(int(np.prod(shape)) for _, shape in tiny.layer_shapes())
    small = network.parameter_count(init_params(NetworkConfig(ESNET, 'small'), seed=0))
    assert small > tiny.parameter_count()


def test_init_is_seeded():
    config = NetworkConfig(ESNET_M, 'tiny')
    a, b, c = init_params(config, seed=5), init_params(config, seed=5), init_params(config, seed=6)
    assert list(a) == list(b)
    for name in a:
        np.testing.assert_array_equal(a[name].data, b[name].data)
    assert any(not np.array_equal(a[n].data, c[n].data) for n in a if n.endswith('weight'))


def test_esnetm_only_adds_mask_parameters():
    plain = init_params(NetworkConfig(ESNET, 'tiny'), seed=0)
    masked = init_params(NetworkConfig(ESNET_M, 'tiny'), seed=0)
    extra = set(masked) - set(plain)
    assert set(plain) <= set(masked)
    assert extra and all(name.startswith('maskfmm.') for name in extra)


def test_network_gradients_reach_every_parameter(rng):
    from esnet.tensor import backward, mean_all

    net = StereoNetwork(NetworkConfig(ESNET_M, 'tiny'), seed=0)
    left, right = images(rng, 64, 64)
    with recording():
        pyramid, _ = net(left, right)
        loss = mean_all(pyramid[0])
        for s in range(1, 7):
            loss = loss + mean_all(pyramid[s])
        backward(loss)
    silent = [name for name, t in net.params.items() if not np.any(t.grad)]
    assert silent == []


def test_disparity_pyramid_validation():
    maps = [Tensor(np.zeros((1, 1, 64 >> s, 128 >> s))) for s in range(7)]
    assert len(DisparityPyramid(maps)) == 7
    with pytest.raises(ShapeError):
        DisparityPyramid(maps[:6])
    maps[3] = Tensor(np.zeros((1, 1, 9, 16)))
    with pytest.raises(ShapeError):
        DisparityPyramid(maps)


def test_batch_forward(rng):
    net = StereoNetwork(NetworkConfig(ESNET, 'tiny'), seed=0)
    left, right = images(rng, 64, 64, batch=2)
    with no_grad():
        pyramid, _ = net(left, right)
        single, _ = net(left[0:1], right[0:1])
    assert pyramid[0].shape == (2, 1, 64, 64)
    np.testing.assert_allclose(pyramid[0].data[:1], single[0].data, rtol=1e-4, atol=1e-5)


@pytest.mark.parametrize('seed', range(100))
def test_features_and_costs_stay_finite(seed):
    config = NetworkConfig(ESNET, 'tiny')
    params = init_params(config, seed=0)
    rng = np.random.default_rng(seed)
    left, right = images(rng, 64, 64)
    with no_grad():
        f_l, f_r = feature_extract(left, right, params)
        cost = correlate(f_l[3], f_r[3], range(config.d_max_base))
    for s in range(4):
        assert np.all(np.isfinite(f_l[s].data)) and np.all(np.isfinite(f_r[s].data))
    assert np.all(np.isfinite(cost.scores.data))
