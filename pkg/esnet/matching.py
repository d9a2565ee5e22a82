'''Stereo-specific kernels: correlation cost volumes, horizontal disparity
warping, the Feature Matching Module (FMM) and its occlusion-aware variant.

Sign convention used everywhere: a positive disparity d at left-view pixel x
means the matching right-view pixel sits d pixels to the LEFT, at x - d. Both
the correlation (which compares f_l(x) with f_r(x - d)) and the warp (which
samples f_r at x - d) follow it, so a warp by the true disparity aligns the
right view onto the left one.

Out-of-bounds policy: correlation zero-pads (an impossible match scores 0),
warping clamps to the border (warped features stay finite).
'''
import numpy as np

from esnet import utils
from esnet.exceptions import ConfigError, ShapeError
from esnet.ops import bilinear_resize, conv2d, init_conv
from esnet.tensor import Function, Tensor, as_tensor, concat_channels, elementwise, sigmoid

FMM_OFFSETS = (-2, -1, 0, 1, 2)
D_MAX_BASE = 40
INVALID_DEPTH = 0.0


class CostVolume(object):
    '''Matching scores over a set of candidate disparities

    Attributes:
        scores (Tensor): (B, D, H, W), channel i scores candidate d_offsets[i]
        d_offsets (tuple): the integer disparity candidates, len == D
    '''
    def __init__(self, scores, d_offsets):
        d_offsets = tuple(int(d) for d in d_offsets)
        if scores.shape[1] != len(d_offsets):
            raise ShapeError('cost volume has {} channels but {} disparity offsets'.format(
                scores.shape[1], len(d_offsets)))
        self.scores = scores
        self.d_offsets = d_offsets

    @property
    def shape(self):
        return self.scores.shape

    def argmax_offset(self):
        '''Per-pixel best-scoring offset, (B, H, W) int array'''
        best = np.argmax(self.scores.data, axis=1)
        return np.asarray(self.d_offsets)[best]


class OcclusionMask(object):
    '''Soft occlusion mask theta in [0, 1], (B, 1, H, W)'''
    def __init__(self, theta):
        if theta.shape[1] != 1:
            raise ShapeError('occlusion mask must have 1 channel, got {}'.format(theta.shape[1]))
        self.theta = theta

    @property
    def shape(self):
        return self.theta.shape


class TradeoffFeature(object):
    '''Trade-off term mu filling masked regions, same shape as the warped feature'''
    def __init__(self, mu):
        self.mu = mu

    @property
    def shape(self):
        return self.mu.shape


class CameraRig(object):
    '''Rectified stereo rig intrinsics needed for z = f * b / d

    Args:
        focal_length_px (float): focal length in pixels, > 0
        baseline_m (float): baseline in meters, > 0
    '''
    def __init__(self, focal_length_px, baseline_m):
        if not focal_length_px > 0 or not baseline_m > 0:
            raise ConfigError('camera rig needs positive focal length and baseline, got f={} b={}'.format(
                focal_length_px, baseline_m))
        self.focal_length_px = float(focal_length_px)
        self.baseline_m = float(baseline_m)

    def to_dict(self):
        return {'focal_length_px': self.focal_length_px, 'baseline_m': self.baseline_m}

    def __eq__(self, other):
        return isinstance(other, CameraRig) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return 'CameraRig(focal_length_px={}, baseline_m={})'.format(self.focal_length_px, self.baseline_m)


def _shift_right(x, d):
    '''y[..., x] = x[..., x - d], zero where x - d falls outside the row'''
    width = x.shape[-1]
    y = np.zeros_like(x)
    if d >= width or d <= -width:
        return y
    if d > 0:
        y[..., d:] = x[..., :width - d]
    elif d < 0:
        y[..., :width + d] = x[..., -d:]
    else:
        y[...] = x
    return y


class Correlate(Function):
    name = 'Correlate'

    def forward(self, fl, fr):
        self.fl, self.fr = fl, fr
        b, c, h, w = fl.shape
        out = np.empty((b, len(self.offsets), h, w), dtype=fl.dtype)
        for i, d in enumerate(self.offsets):
            out[:, i] = (fl * _shift_right(fr, d)).sum(axis=1) / c
        return out

    def backward(self, grad):
        c = self.fl.shape[1]
        gl = np.zeros_like(self.fl)
        gr = np.zeros_like(self.fr)
        for i, d in enumerate(self.offsets):
            gi = grad[:, i:i + 1] / c
            gl += gi * _shift_right(self.fr, d)
            gr += _shift_right(gi * self.fl, -d)
        return gl, gr


def correlate(f_l, f_r, d_offsets):
    '''Channel-normalized correlation over horizontal disparity candidates

    scores[b, i, y, x] = (1 / C) * sum_c f_l[b, c, y, x] * f_r[b, c, y, x - d_i]

    Args:
        f_l (Tensor): left features (B, C, H, W)
        f_r (Tensor): right features, same shape
        d_offsets (iterable of int): candidate disparities, e.g. range(40)

    Returns:
        CostVolume
    '''
    f_l, f_r = as_tensor(f_l), as_tensor(f_r)
    d_offsets = tuple(int(d) for d in d_offsets)
    if not d_offsets:
        raise ShapeError('correlate needs at least one disparity offset')
    if f_l.shape != f_r.shape:
        raise ShapeError('correlate feature shapes differ: left {} vs right {}'.format(f_l.shape, f_r.shape))
    scores = Correlate(offsets=d_offsets)(f_l, f_r)
    return CostVolume(scores, d_offsets)


class WarpByDisparity(Function):
    name = 'WarpByDisparity'

    def forward(self, f, disp):
        b, c, h, w = f.shape
        xs = np.arange(w, dtype=f.dtype).reshape(1, 1, 1, w)
        pos = xs - disp
        clamped = np.clip(pos, 0, w - 1)
        x0 = np.floor(clamped).astype(np.int64)
        x1 = np.minimum(x0 + 1, w - 1)
        wt = (clamped - x0).astype(f.dtype)
        self.inside = (pos >= 0) & (pos <= w - 1)
        self.shape_ = f.shape
        self.x0 = np.broadcast_to(x0, f.shape)
        self.x1 = np.broadcast_to(x1, f.shape)
        self.wt = wt
        self.f0 = np.take_along_axis(f, self.x0, axis=3)
        self.f1 = np.take_along_axis(f, self.x1, axis=3)
        return (1 - wt) * self.f0 + wt * self.f1

    def backward(self, grad):
        b, c, h, w = self.shape_
        rows = (np.arange(b * c * h, dtype=np.int64) * w).reshape(b, c, h, 1)
        size = b * c * h * w
        gf = np.bincount((rows + self.x0).ravel(), ((1 - self.wt) * grad).ravel(), minlength=size)
        gf += np.bincount((rows + self.x1).ravel(), (self.wt * grad).ravel(), minlength=size)
        gd = -(grad * (self.f1 - self.f0)).sum(axis=1, keepdims=True) * self.inside
        return gf.reshape(self.shape_).astype(grad.dtype), gd.astype(grad.dtype)


def warp_by_disparity(f_r, disparity):
    '''Resample ``f_r`` horizontally at x - disparity(x, y)

    1-D linear interpolation along x with border clamping, differentiable in
    both the feature map and the disparity.

    Args:
        f_r (Tensor): right-view features (B, C, H, W)
        disparity (Tensor): (B, 1, H, W) in pixels at f_r's resolution

    Returns:
        Tensor: warped features, same shape as ``f_r``
    '''
    f_r, disparity = as_tensor(f_r), as_tensor(disparity)
    if disparity.shape[1] != 1:
        raise ShapeError('disparity must have 1 channel, got {}'.format(disparity.shape[1]))
    if (disparity.shape[0], disparity.shape[2], disparity.shape[3]) != (f_r.shape[0], f_r.shape[2], f_r.shape[3]):
        raise ShapeError('disparity {} does not match feature batch/height/width of {}'.format(
            disparity.shape, f_r.shape))
    return WarpByDisparity()(f_r, disparity)


def _check_coarse(d_coarse, height, width, what='d_coarse'):
    if d_coarse.shape[2] * 2 != height or d_coarse.shape[3] * 2 != width:
        raise ShapeError('{} spatial size {}x{} must be half of {}x{}'.format(
            what, d_coarse.shape[2], d_coarse.shape[3], height, width))


def fmm(f_l_s, f_r_s, d_coarse, offsets=FMM_OFFSETS):
    '''Feature Matching Module: upsample, warp, then correlate a residual range

    Args:
        f_l_s (Tensor): left features at scale s (B, C, H, W)
        f_r_s (Tensor): right features at scale s
        d_coarse (Tensor): disparity estimate at scale s + 1, (B, 1, H/2, W/2)
        offsets (tuple of int): residual candidates, -2..2 by default

    Returns:
        CostVolume: len(offsets) channels at scale s
    '''
    f_l_s, f_r_s, d_coarse = as_tensor(f_l_s), as_tensor(f_r_s), as_tensor(d_coarse)
    _, _, h, w = f_l_s.shape
    _check_coarse(d_coarse, h, w)
    d_up = bilinear_resize(d_coarse, h, w, disparity=True)
    warped = warp_by_disparity(f_r_s, d_up)
    return correlate(f_l_s, warped, offsets)


def mask_fmm_prefix(scale_s):
    return 'maskfmm.s{}'.format(scale_s)


def init_mask_fmm(params, scale_s, in_channels, out_channels, ctx_channels, rng, dtype=np.float32, prefix=None):
    '''Create the Mask-FMM parameters for one scale

    ``transform`` (1x1, only for scale_s != 2) maps the scale-2 features to
    ``out_channels``; ``theta`` and ``mu`` are 3x3 heads on the coarse context.
    '''
    prefix = prefix or mask_fmm_prefix(scale_s)
    channels = in_channels
    if scale_s != 2:
        init_conv(params, prefix + '.transform', out_channels, in_channels, 1, rng, dtype)
        channels = out_channels
    init_conv(params, prefix + '.theta', 1, ctx_channels, 3, rng, dtype)
    init_conv(params, prefix + '.mu', channels, ctx_channels, 3, rng, dtype)


def _transform_features(f2, scale_s, params, prefix):
    if scale_s == 2:
        return f2
    factor = 2 ** (2 - scale_s)
    up = bilinear_resize(f2, f2.shape[2] * factor, f2.shape[3] * factor)
    return conv2d(up, params[prefix + '.transform.weight'], params[prefix + '.transform.bias'])


def _override(value, shape, like):
    if isinstance(value, Tensor):
        if value.shape != shape:
            raise ShapeError('override has shape {}, expected {}'.format(value.shape, shape))
        return value
    return Tensor(np.full(shape, value, dtype=like.dtype))


def mask_fmm(f_l_2, f_r_2, d_coarse, ctx_coarse, scale_s, params, offsets=FMM_OFFSETS, prefix=None,
             theta_override=None, mu_override=None):
    '''Occlusion-aware Feature Matching Module at scale 0, 1 or 2

    Both views' scale-2 features are brought to scale ``scale_s`` (bilinear
    upsampling + shared 1x1 convolution), the right one is warped by the
    upsampled coarse disparity, multiplied by the soft mask theta (broadcast
    over channels) and offset by mu, then correlated against the left one.
    theta is learned only through this pathway.

    Args:
        f_l_2 (Tensor): left scale-2 features
        f_r_2 (Tensor): right scale-2 features
        d_coarse (Tensor): disparity at scale s + 1
        ctx_coarse (Tensor): decoder features at scale s + 1
        scale_s (int): 0, 1 or 2
        params (dict): parameter tensors, see `init_mask_fmm`
        offsets (tuple of int): residual candidates
        prefix (str, optional): parameter name prefix, ``maskfmm.s{scale_s}``
        theta_override (float or Tensor, optional): replace theta (diagnostics)
        mu_override (float or Tensor, optional): replace mu (diagnostics)

    Returns:
        (CostVolume, OcclusionMask, TradeoffFeature, Tensor): cost volume,
            mask, trade-off term and the modulated right feature
    '''
    if scale_s not in (0, 1, 2):
        raise ShapeError('mask_fmm scale_s must be 0, 1 or 2, got {}'.format(scale_s))
    prefix = prefix or mask_fmm_prefix(scale_s)
    f_l_2, f_r_2 = as_tensor(f_l_2), as_tensor(f_r_2)
    d_coarse, ctx_coarse = as_tensor(d_coarse), as_tensor(ctx_coarse)
    if f_l_2.shape != f_r_2.shape:
        raise ShapeError('mask_fmm feature shapes differ: {} vs {}'.format(f_l_2.shape, f_r_2.shape))

    fl = _transform_features(f_l_2, scale_s, params, prefix)
    fr = _transform_features(f_r_2, scale_s, params, prefix)
    b, c, h, w = fl.shape
    _check_coarse(d_coarse, h, w)
    _check_coarse(ctx_coarse, h, w, what='ctx_coarse')

    d_up = bilinear_resize(d_coarse, h, w, disparity=True)
    warped = warp_by_disparity(fr, d_up)

    if theta_override is None:
        theta_c = sigmoid(conv2d(ctx_coarse, params[prefix + '.theta.weight'], params[prefix + '.theta.bias'],
                                 padding=1))
        theta = bilinear_resize(theta_c, h, w)
    else:
        theta = _override(theta_override, (b, 1, h, w), fl)
    if mu_override is None:
        mu_c = conv2d(ctx_coarse, params[prefix + '.mu.weight'], params[prefix + '.mu.bias'], padding=1)
        mu = bilinear_resize(mu_c, h, w)
    else:
        mu = _override(mu_override, (b, c, h, w), fl)
    if mu.shape != warped.shape:
        raise ShapeError('mu has shape {} but the warped feature is {}'.format(mu.shape, warped.shape))

    modulated = elementwise('add', elementwise('mul', warped, theta), mu)
    cost = correlate(fl, modulated, offsets)
    if utils.PLEVEL >= 3: utils.vprint(3, 'mask_fmm s={} theta mean {:.4f}', scale_s, float(theta.data.mean()))
    return cost, OcclusionMask(theta), TradeoffFeature(mu), modulated


def disparity_to_depth(disparity, rig, epsilon_d=1e-3):
    '''Depth z = f * b / d; disparities <= epsilon_d map to `INVALID_DEPTH`

    Args:
        disparity (Tensor or np.ndarray): disparities in pixels
        rig (CameraRig): focal length and baseline
        epsilon_d (float): smallest disparity treated as valid

    Returns:
        Tensor: depth in meters (no gradient)
    '''
    d = disparity.data if isinstance(disparity, Tensor) else np.asarray(disparity)
    valid = d > epsilon_d
    depth = np.full(d.shape, INVALID_DEPTH, dtype=np.float64)
    depth[valid] = rig.focal_length_px * rig.baseline_m / d[valid].astype(np.float64)
    return Tensor(depth.reshape((1,) * (4 - depth.ndim) + depth.shape), dtype=d.dtype if d.dtype.kind == 'f' else None)


def depth_to_disparity(depth, rig, epsilon_z=1e-6):
    '''Inverse of `disparity_to_depth`; `INVALID_DEPTH` maps back to 0'''
    z = depth.data if isinstance(depth, Tensor) else np.asarray(depth)
    valid = z > epsilon_z
    disp = np.zeros(z.shape, dtype=np.float64)
    disp[valid] = rig.focal_length_px * rig.baseline_m / z[valid].astype(np.float64)
    return Tensor(disp.reshape((1,) * (4 - disp.ndim) + disp.shape), dtype=z.dtype if z.dtype.kind == 'f' else None)


def occlusion_summary(mask, band, visible=None):
    '''Mean theta inside a known occluded band vs the rest of the image

    Args:
        mask (OcclusionMask): mask at full resolution of ``band``'s coordinates
        band (tuple): (y0, y1, x0, x1) occluded region
        visible (np.ndarray, optional): boolean map of visible pixels; defaults
            to everything outside ``band``

    Returns:
        dict: ``occluded_mean`` and ``visible_mean``
    '''
    theta = mask.theta.data[:, 0]
    y0, y1, x0, x1 = band
    occluded = np.zeros(theta.shape[1:], dtype=bool)
    occluded[y0:y1, x0:x1] = True
    if visible is None:
        visible = ~occluded
    return {
        'occluded_mean': float(theta[:, occluded].mean()),
        'visible_mean': float(theta[:, visible].mean()),
    }


def concat_costs(parts):
    '''Concatenate decoder inputs; ``parts`` may hold CostVolumes'''
    return concat_channels([p.scores if isinstance(p, CostVolume) else p for p in parts])


if __name__ == '__main__':
    rng = np.random.default_rng(0)
    f_l = Tensor(rng.normal(size=(1, 16, 8, 32)))
    f_r = Tensor(np.roll(f_l.data, -4, axis=3))
    cost = fmm(f_l, f_r, Tensor.full((1, 1, 4, 16), 2.0))
    print(cost.shape, np.mean(cost.argmax_offset()[:, :, 8:-8] == 0))
