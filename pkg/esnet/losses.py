'''Training objectives.

Supervised: smooth-L1 against (sparse) ground truth at every pyramid scale,
weighted per scale. Unsupervised: SSIM + L1 photometric reprojection of the
right image warped by the predicted disparity, plus an edge-aware smoothness
term, summed over the finest scales.

Images given to the unsupervised losses are in [0, 1] (not normalized).
'''
import warnings

import numpy as np

from esnet import utils
from esnet.exceptions import ConfigError, EmptyValidMaskWarning, ImageRangeWarning, ShapeError
from esnet.matching import warp_by_disparity
from esnet.network import NUM_SCALES
from esnet.ops import avg_pool, bilinear_resize, box_filter3
from esnet.tensor import (Function, Tensor, absolute, add, as_tensor, channel_mean, div, mean_all, mul, square,
                          sub, sum_all)

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

# Per-round scale weights (s=0..6): coarse scales first, full resolution last
DEFAULT_ROUNDS = (
    (0.05, 0.05, 0.1, 0.2, 0.2, 0.2, 0.2),
    (0.1, 0.1, 0.2, 0.2, 0.2, 0.1, 0.1),
    (0.2, 0.2, 0.2, 0.2, 0.1, 0.05, 0.05),
    (0.6, 0.2, 0.1, 0.05, 0.05, 0.0, 0.0),
)


def _check_omega(omega):
    omega = tuple(float(w) for w in omega)
    if len(omega) != NUM_SCALES:
        raise ConfigError('omega needs {} scale weights, got {}'.format(NUM_SCALES, len(omega)))
    if any(w < 0 for w in omega):
        raise ConfigError('omega weights must be >= 0: {}'.format(omega))
    return omega


class SupervisedLossConfig(object):
    '''Scale weights for the supervised loss

    Args:
        omega (sequence of float, optional): active weights for s=0..6,
            defaults to the first round
        rounds (sequence of sequence of float, optional): one weight vector
            per training round
    '''
    def __init__(self, omega=None, rounds=DEFAULT_ROUNDS):
        self.rounds = [_check_omega(r) for r in rounds]
        if omega is None:
            if not self.rounds:
                raise ConfigError('either omega or at least one round is required')
            omega = self.rounds[0]
        self.omega = _check_omega(omega)

    def for_round(self, index):
        '''Config whose active weights are those of round ``index``'''
        if not 0 <= index < len(self.rounds):
            raise ConfigError('round {} out of range, {} rounds configured'.format(index, len(self.rounds)))
        return SupervisedLossConfig(omega=self.rounds[index], rounds=self.rounds)


class UnsupLossConfig(object):
    '''Weights of the photometric pretraining objective

    Args:
        lambda1 (float): photometric weight
        lambda2 (float): smoothness weight
        alpha (float): SSIM share of the photometric error, in [0, 1]
        num_scales (int): scales 0 .. num_scales - 1 contribute
        full_resolution (bool): compare at full resolution (disparity
            upsampled) instead of against the downsampled left image
    '''
    def __init__(self, lambda1=5.0, lambda2=0.1, alpha=0.85, num_scales=4, full_resolution=False):
        if not 0.0 <= alpha <= 1.0:
            raise ConfigError('alpha must lie in [0, 1], got {}'.format(alpha))
        if not 1 <= num_scales <= NUM_SCALES:
            raise ConfigError('num_scales must be between 1 and {}, got {}'.format(NUM_SCALES, num_scales))
        self.lambda1 = float(lambda1)
        self.lambda2 = float(lambda2)
        self.alpha = float(alpha)
        self.num_scales = int(num_scales)
        self.full_resolution = bool(full_resolution)


class SmoothL1(Function):
    name = 'SmoothL1'

    def forward(self, pred, gt, mask):
        valid = mask > 0
        self.diff = np.where(valid, pred - np.where(valid, gt, 0), 0).astype(pred.dtype)
        a = np.abs(self.diff)
        self.quadratic = a < 1
        per_pixel = np.where(self.quadratic, 0.5 * self.diff * self.diff, a - 0.5)
        return np.full((1, 1, 1, 1), per_pixel.sum() / self.count, dtype=pred.dtype)

    def backward(self, grad):
        g = np.where(self.quadratic, self.diff, np.sign(self.diff)) * (grad / self.count)
        return g.astype(grad.dtype), None, None


def _zero_loss(like):
    '''A recorded zero that still connects to ``like``'s graph'''
    return mul(sum_all(like), 0.0)


def smooth_l1(pred, gt, valid_mask):
    '''Mean smooth-L1 error over valid pixels

    l(x) = x^2 / 2 for |x| < 1, |x| - 0.5 otherwise. Invalid pixels do not
    contribute to the value or the gradient, whatever ``gt`` holds there. With
    no valid pixel at all the loss is 0 and `EmptyValidMaskWarning` is issued.
    '''
    pred, gt, valid_mask = as_tensor(pred), as_tensor(gt), as_tensor(valid_mask)
    if not pred.shape == gt.shape == valid_mask.shape:
        raise ShapeError('smooth_l1 shapes differ: pred {}, gt {}, mask {}'.format(
            pred.shape, gt.shape, valid_mask.shape))
    count = int(np.count_nonzero(valid_mask.data > 0))
    if count == 0:
        warnings.warn('smooth_l1 got no valid pixels; loss defined as 0', EmptyValidMaskWarning)
        return _zero_loss(pred)
    return SmoothL1(count=count)(pred, gt, valid_mask)


def downsample_ground_truth(gt, valid, scale_s):
    '''Valid-aware 2^s x 2^s average pooling, values divided by 2^s

    Args:
        gt (Tensor): full-resolution disparity (B, 1, H, W)
        valid (Tensor): 1 where ``gt`` holds a measurement
        scale_s (int): target scale

    Returns:
        (Tensor, Tensor): disparity in scale-s pixels and its valid mask; a
            coarse pixel is valid if any of its source pixels is
    '''
    if scale_s == 0:
        return gt, valid
    f = 2 ** scale_s
    b, c, h, w = gt.shape
    if h % f or w % f:
        raise ShapeError('ground truth {}x{} is not divisible by 2^{}'.format(h, w, scale_s))
    mask = valid.data > 0
    values = np.where(mask, gt.data, 0).astype(np.float64).reshape(b, c, h // f, f, w // f, f)
    counts = mask.reshape(b, c, h // f, f, w // f, f).sum(axis=(3, 5))
    sums = values.sum(axis=(3, 5))
    coarse = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0) / f
    return Tensor(coarse, dtype=gt.dtype), Tensor((counts > 0).astype(gt.dtype))


def supervised_total(pyramid, gt_full, valid_full, cfg):
    '''Sum over s of omega[s] * smooth_l1 at scale s

    Scales with zero weight are skipped entirely.
    '''
    gt_full, valid_full = as_tensor(gt_full), as_tensor(valid_full)
    if gt_full.shape != pyramid[0].shape:
        raise ShapeError('ground truth {} does not match the full-resolution prediction {}'.format(
            gt_full.shape, pyramid[0].shape))
    total = None
    for s, weight in enumerate(cfg.omega):
        if weight == 0:
            continue
        gt_s, valid_s = downsample_ground_truth(gt_full, valid_full, s)
        term = mul(smooth_l1(pyramid[s], gt_s, valid_s), weight)
        total = term if total is None else add(total, term)
    if total is None:
        return _zero_loss(pyramid[0])
    return total


def _check_range(image, name):
    data = image.data
    if data.size and (data.min() < -1e-6 or data.max() > 1 + 1e-6):
        warnings.warn('{} lies outside [0, 1] (min {:.3f}, max {:.3f})'.format(name, data.min(), data.max()),
                      ImageRangeWarning)


def ssim(a, b):
    '''Per-pixel, per-channel SSIM over 3x3 mean-pooled windows

    Returns:
        Tensor: same shape as the inputs, values in [-1, 1]
    '''
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError('ssim inputs differ in shape: {} vs {}'.format(a.shape, b.shape))
    _check_range(a, 'ssim input a')
    _check_range(b, 'ssim input b')
    mu_a = box_filter3(a)
    mu_b = box_filter3(b)
    mu_ab = mul(mu_a, mu_b)
    mu_a2 = square(mu_a)
    mu_b2 = square(mu_b)
    sigma_a = sub(box_filter3(square(a)), mu_a2)
    sigma_b = sub(box_filter3(square(b)), mu_b2)
    sigma_ab = sub(box_filter3(mul(a, b)), mu_ab)
    numerator = mul(add(mul(mu_ab, 2.0), SSIM_C1), add(mul(sigma_ab, 2.0), SSIM_C2))
    denominator = mul(add(add(mu_a2, mu_b2), SSIM_C1), add(add(sigma_a, sigma_b), SSIM_C2))
    return div(numerator, denominator)


def _images_at_scale(left, right, scale_s):
    f = 2 ** scale_s
    return avg_pool(left, f), avg_pool(right, f)


def photometric_error_map(left, right, disparity_s, scale_s, cfg):
    '''Per-pixel reprojection error alpha * (1 - SSIM) / 2 + (1 - alpha) * |warped - left|

    Channel-averaged, so the result has shape (B, 1, h, w) at the comparison
    resolution (scale s, or full resolution with ``cfg.full_resolution``).
    '''
    left, right, disparity_s = as_tensor(left), as_tensor(right), as_tensor(disparity_s)
    if cfg.full_resolution:
        _, _, h, w = left.shape
        target = left
        disparity = bilinear_resize(disparity_s, h, w, disparity=True)
        warped = warp_by_disparity(right, disparity)
    else:
        target, right_s = _images_at_scale(left, right, scale_s)
        if target.shape[2:] != disparity_s.shape[2:]:
            raise ShapeError('disparity {} does not match the scale-{} image {}'.format(
                disparity_s.shape, scale_s, target.shape))
        warped = warp_by_disparity(right_s, disparity_s)
    dissimilarity = mul(add(mul(ssim(warped, target), -1.0), 1.0), cfg.alpha / 2.0)
    l1 = mul(absolute(sub(warped, target)), 1.0 - cfg.alpha)
    return channel_mean(add(dissimilarity, l1))


def photometric_loss(left, right, disparity_s, scale_s, cfg):
    '''Mean photometric reprojection error at one scale'''
    return mean_all(photometric_error_map(left, right, disparity_s, scale_s, cfg))


def _edge_weight(diff):
    return Tensor(np.exp(-np.abs(diff).mean(axis=1, keepdims=True)), dtype=diff.dtype)


def smoothness_loss(disparity_s, left_s):
    '''Edge-aware smoothness: mean |dd/dx| e^-|dI/dx| + mean |dd/dy| e^-|dI/dy|

    Forward differences; image gradients are channel-averaged before the
    exponent and carry no gradient.
    '''
    disparity_s, left_s = as_tensor(disparity_s), as_tensor(left_s)
    if disparity_s.shape[2:] != left_s.shape[2:]:
        raise ShapeError('disparity {} and image {} differ in size'.format(disparity_s.shape, left_s.shape))
    image = left_s.data
    _, _, h, w = disparity_s.shape
    total = None
    if w > 1:
        grad_x = absolute(sub(disparity_s[:, :, :, 1:], disparity_s[:, :, :, :-1]))
        term = mean_all(mul(grad_x, _edge_weight(image[:, :, :, 1:] - image[:, :, :, :-1])))
        total = term
    if h > 1:
        grad_y = absolute(sub(disparity_s[:, :, 1:, :], disparity_s[:, :, :-1, :]))
        term = mean_all(mul(grad_y, _edge_weight(image[:, :, 1:, :] - image[:, :, :-1, :])))
        total = term if total is None else add(total, term)
    return total if total is not None else _zero_loss(disparity_s)


def unsupervised_total(pyramid, left, right, cfg, return_terms=False):
    '''Sum over s < num_scales of lambda1 * photometric + lambda2 * smoothness

    Args:
        pyramid (DisparityPyramid): predictions
        left (Tensor): left image in [0, 1], full resolution
        right (Tensor): right image in [0, 1]
        cfg (UnsupLossConfig): weights
        return_terms (bool): also return {'photometric': [...], 'smoothness':
            [...]} holding the unweighted per-scale values as floats

    Returns:
        Tensor, or (Tensor, dict) with ``return_terms``
    '''
    left, right = as_tensor(left), as_tensor(right)
    total = None
    terms = {'photometric': [], 'smoothness': []}
    for s in range(cfg.num_scales):
        pe = photometric_loss(left, right, pyramid[s], s, cfg)
        sm = smoothness_loss(pyramid[s], avg_pool(left, 2 ** s))
        terms['photometric'].append(pe.item())
        terms['smoothness'].append(sm.item())
        term = add(mul(pe, cfg.lambda1), mul(sm, cfg.lambda2))
        total = term if total is None else add(total, term)
    if utils.PLEVEL >= 2:
        utils.vprint(2, 'unsupervised photometric {} smoothness {}',
                     ['{:.4f}'.format(v) for v in terms['photometric']],
                     ['{:.4f}'.format(v) for v in terms['smoothness']])
    if return_terms:
        return total, terms
    return total


def mixed_total(pyramid, gt_full, valid_full, left, right, sup_cfg, unsup_cfg, mixed_weight):
    '''Supervised loss plus ``mixed_weight`` times the unsupervised objective

    Experimental: there is no recommended weight; 0 reduces to the
    supervised loss.
    '''
    if mixed_weight < 0:
        raise ConfigError('mixed_weight must be >= 0, got {}'.format(mixed_weight))
    total = supervised_total(pyramid, gt_full, valid_full, sup_cfg)
    if mixed_weight == 0:
        return total
    return add(total, mul(unsupervised_total(pyramid, left, right, unsup_cfg), float(mixed_weight)))
