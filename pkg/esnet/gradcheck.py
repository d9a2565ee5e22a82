'''Central finite-difference verification of analytic gradients.

Non-scalar outputs are reduced with a fixed random projection, so one
backward pass checks the full Jacobian-vector product. Run in float64.
'''
from collections import OrderedDict

import numpy as np

from esnet import utils
from esnet.exceptions import NumericalError
from esnet.tensor import Tensor, backward, mul, no_grad, recording, sum_all

EPSILON = 1e-3
TOLERANCE = 1e-4


def _finite(value, what):
    if not np.all(np.isfinite(value)):
        raise NumericalError('grad_check: non-finite {}'.format(what))


def grad_check_tensors(fn, leaves, epsilon=EPSILON, max_coords=None, seed=None):
    '''Compare analytic and numeric gradients of ``fn()`` w.r.t. ``leaves``

    Args:
        fn (callable): no-argument function computing a Tensor from ``leaves``
        leaves (list of Tensor): requires_grad inputs, perturbed in place
        epsilon (float): central difference step
        max_coords (int, optional): check at most this many randomly chosen
            coordinates per leaf
        seed (int, optional): projection / coordinate sampling seed

    Returns:
        float: max over coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|)
    '''
    rng = utils.make_rng(seed)
    for leaf in leaves:
        leaf.requires_grad = True
        leaf.zero_grad()

    with recording():
        out = fn()
        _finite(out.data, 'output')
        projection = None
        if out.shape != (1, 1, 1, 1):
            projection = rng.normal(size=out.shape)
            loss = sum_all(mul(out, Tensor(projection, dtype=out.dtype)))
        else:
            loss = out
        backward(loss)
    analytic = [leaf.grad.copy() for leaf in leaves]

    def evaluate():
        with no_grad():
            value = fn().data
        _finite(value, 'output under perturbation')
        if projection is None:
            return float(value.reshape(-1)[0])
        return float(np.sum(value * projection))

    worst = 0.0
    for leaf, grad in zip(leaves, analytic):
        _finite(grad, 'analytic gradient')
        flat = leaf.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        grad_flat = grad.reshape(-1)
        for i in coords:
            original = flat[i]
            flat[i] = original + epsilon
            f_plus = evaluate()
            flat[i] = original - epsilon
            f_minus = evaluate()
            flat[i] = original
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            a = float(grad_flat[i])
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a), abs(numeric)))
    return worst


def grad_check(f, x, epsilon=EPSILON, max_coords=None, seed=None):
    '''Max relative gradient error of ``f`` at ``x``

    Args:
        f (callable): Tensor -> Tensor, deterministic
        x (Tensor or np.ndarray): evaluation point, used in float64

    Returns:
        float
    '''
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    leaf = Tensor(np.array(data, dtype=np.float64), requires_grad=True, dtype=np.float64)
    return grad_check_tensors(lambda: f(leaf), [leaf], epsilon, max_coords, seed)


def _leaf(array):
    return Tensor(np.asarray(array, dtype=np.float64), requires_grad=True, dtype=np.float64)


def fractional_disparity(rng, shape, base=0.5):
    '''Disparities whose fractional parts stay clear of the warp's kinks

    Values alternate along both axes, so neighboring differences also stay
    clear of zero (where |.| in the smoothness term has a kink).
    '''
    _, _, h, w = shape
    pattern = 0.3 * (np.arange(w) % 2)[None, :] + 0.1 * (np.arange(h) % 2)[:, None]
    return base + pattern[None, None] + 0.04 * rng.random(shape)


def _suite_cases(rng, include_network):
    # Imported here: the suite reaches into every layer of the package.
    from esnet import losses, matching, network, ops

    cases = OrderedDict()

    w = _leaf(rng.normal(size=(4, 3, 3, 3)))
    cases['conv2d'] = (lambda x: ops.conv2d(x[0], w, stride=2, padding=1), [_leaf(rng.normal(size=(2, 3, 8, 8)))])
    wt = _leaf(rng.normal(size=(3, 2, 4, 4)))
    cases['conv_transpose2d'] = (lambda x: ops.conv_transpose2d(x[0], wt, stride=2, padding=1),
                                 [_leaf(rng.normal(size=(1, 3, 4, 5)))])
    cases['bilinear_resize'] = (lambda x: ops.bilinear_resize(x[0], 8, 12, disparity=True),
                                [_leaf(rng.normal(size=(1, 2, 4, 6)))])
    cases['box_filter3'] = (lambda x: ops.box_filter3(x[0]), [_leaf(rng.normal(size=(1, 2, 5, 6)))])

    disp = fractional_disparity(rng, (1, 1, 4, 10), base=1.5)
    cases['warp_by_disparity[feature]'] = (lambda x: matching.warp_by_disparity(x[0], Tensor(disp)),
                                           [_leaf(rng.normal(size=(1, 3, 4, 10)))])
    feat = rng.normal(size=(1, 3, 4, 10))
    cases['warp_by_disparity[disparity]'] = (lambda x: matching.warp_by_disparity(Tensor(feat), x[0]),
                                             [_leaf(disp)])
    cases['correlate'] = (lambda x: matching.correlate(x[0], x[1], range(-2, 5)).scores,
                          [_leaf(rng.normal(size=(1, 4, 4, 8))), _leaf(rng.normal(size=(1, 4, 4, 8)))])

    mparams = {}
    matching.init_mask_fmm(mparams, 1, 4, 3, 5, rng, np.float64)
    mask_inputs = [_leaf(rng.normal(size=(1, 4, 4, 8))), _leaf(rng.normal(size=(1, 4, 4, 8))),
                   _leaf(0.55 + 0.1 * rng.random((1, 1, 4, 8))), _leaf(rng.normal(size=(1, 5, 4, 8)))]
    cases['mask_fmm'] = (lambda x: matching.mask_fmm(x[0], x[1], x[2], x[3], 1, mparams)[0].scores,
                         mask_inputs + list(mparams.values()))

    gt = 4.0 * rng.random((1, 1, 8, 8))
    valid = (rng.random((1, 1, 8, 8)) > 0.3).astype(np.float64)
    cases['smooth_l1'] = (lambda x: losses.smooth_l1(x[0], Tensor(gt), Tensor(valid)),
                          [_leaf(gt + rng.normal(scale=1.5, size=gt.shape))])

    h, w_ = 64, 64
    gt_full = 8.0 * rng.random((1, 1, h, w_))
    valid_full = (rng.random((1, 1, h, w_)) > 0.2).astype(np.float64)
    sup_cfg = losses.SupervisedLossConfig(omega=(0.3, 0.2, 0.1, 0.1, 0.1, 0.1, 0.1))
    maps = [_leaf(gt_full[:, :, ::2 ** s, ::2 ** s] / 2 ** s + rng.normal(size=(1, 1, h >> s, w_ >> s)))
            for s in range(network.NUM_SCALES)]
    cases['supervised_total'] = (
        lambda x: losses.supervised_total(network.DisparityPyramid(x), Tensor(gt_full), Tensor(valid_full), sup_cfg),
        maps)

    img_a = rng.random((1, 3, 6, 8))
    cases['ssim'] = (lambda x: losses.ssim(x[0], Tensor(img_a)), [_leaf(rng.random((1, 3, 6, 8)))])

    # Keeps |warped - left| clear of zero so the L1 term stays differentiable.
    left = 0.4 * rng.random((1, 3, 16, 32))
    right = 0.6 + 0.4 * rng.random((1, 3, 16, 32))
    ucfg = losses.UnsupLossConfig()
    cases['photometric_loss'] = (lambda x: losses.photometric_loss(Tensor(left), Tensor(right), x[0], 1, ucfg),
                                 [_leaf(fractional_disparity(rng, (1, 1, 8, 16)))])
    cases['smoothness_loss'] = (lambda x: losses.smoothness_loss(x[0], Tensor(left)),
                                [_leaf(fractional_disparity(rng, (1, 1, 16, 32)))])

    left64 = 0.4 * rng.random((1, 3, 64, 64))
    right64 = 0.6 + 0.4 * rng.random((1, 3, 64, 64))
    umaps = [_leaf(fractional_disparity(rng, (1, 1, 64 >> s, 64 >> s))) for s in range(network.NUM_SCALES)]
    cases['unsupervised_total'] = (
        lambda x: losses.unsupervised_total(network.DisparityPyramid(x), Tensor(left64), Tensor(right64), ucfg),
        umaps)

    if include_network:
        config = network.NetworkConfig(network.ESNET, 'tiny', dtype='float64')
        params = network.init_params(config, seed=int(rng.integers(1 << 30)))
        image_l = Tensor(rng.normal(size=(1, 3, 64, 64)))
        image_r = Tensor(rng.normal(size=(1, 3, 64, 64)))
        net_gt = 3.0 + rng.random((1, 1, 64, 64))
        net_valid = np.ones_like(net_gt)
        cases['esnet_tiny+supervised_total'] = (
            lambda x: losses.supervised_total(network.esnet_forward(image_l, image_r, params, config),
                                              Tensor(net_gt), Tensor(net_valid), sup_cfg),
            list(params.values()))
    return cases


def run_suite(seed=None, epsilon=EPSILON, max_coords=16, include_network=True):
    '''Gradient check of every differentiable operation

    Args:
        seed (int, optional): data seed
        epsilon (float): finite difference step
        max_coords (int): coordinates sampled per input tensor
        include_network (bool): also check every parameter of a tiny ESNet

    Returns:
        OrderedDict: operation name -> max relative error
    '''
    rng = utils.make_rng(seed)
    results = OrderedDict()
    for name, (fn, leaves) in _suite_cases(rng, include_network).items():
        coords = 2 if name.startswith('esnet') else max_coords
        results[name] = grad_check_tensors(lambda: fn(leaves), leaves, epsilon, coords, utils.child_seed(rng))
        if utils.PLEVEL >= 1: utils.vprint(1, 'gradcheck {:<32s} {:.3e}', name, results[name])
    return results


if __name__ == '__main__':
    for op, error in run_suite(include_network=False).items():
        print('{:<32s} {:.3e} {}'.format(op, error, 'ok' if error <= TOLERANCE else 'FAIL'))
