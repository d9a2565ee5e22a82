'''ESNet and ESNet-M stereo networks.

The network is a plain dict of named parameter `Tensor`s plus functions that
run the forward pass over it; `StereoNetwork` bundles a config with its
parameters and everything derived from it once at construction.

Topology (scale s has resolution H/2^s x W/2^s):

    shared extractor      f^0 .. f^3 for both views (f^0 .. f^6 for PWC-AllScales)
    base cost volume      correlate(f_l^3, f_r^3, 0 .. d_max_base-1)
    encoder               s=3 (features + base volume), s=4..6 stride-2
    decoder               s=6 .. 0, transposed-conv upsampling + concatenated skips
    disparity heads       3x3 conv on [decoder feature, upsampled disparity, cost volume]

Cost volumes feeding the heads, by variant:

    ESNet            base volume at 3, FMM at 2, 1, 0
    ESNetM           base volume at 3, Mask-FMM at 2, 1, 0
    Baseline-NoFMM   base volume at 3 only
    PWC-AllScales    plain correlation at 6, FMM at 5 .. 2
'''
import numpy as np

from esnet import utils
from esnet.exceptions import ConfigError, ShapeError
from esnet.matching import (D_MAX_BASE, FMM_OFFSETS, correlate, fmm, init_mask_fmm, mask_fmm)
from esnet.ops import apply_conv, bilinear_resize, conv_transpose2d, init_conv, init_conv_transpose
from esnet.tensor import Tensor, concat_channels, leaky_relu, to_array

NUM_SCALES = 7

ESNET = 'ESNet'
ESNET_M = 'ESNetM'
BASELINE = 'Baseline-NoFMM'
PWC_ALL = 'PWC-AllScales'
VARIANTS = (ESNET, ESNET_M, BASELINE, PWC_ALL)

# preset -> (channels at s=0..6, residual blocks per scale)
PRESETS = {
    'tiny': ([8, 16, 32, 64, 64, 64, 64], 1),
    'small': ([16, 32, 64, 128, 128, 256, 256], 1),
    'paper-scale': ([32, 64, 128, 256, 512, 512, 1024], 2),
}

HEAD_INIT_SCALE = 0.1


class NetworkConfig(object):
    '''Architecture knobs

    Args:
        variant (str): one of `VARIANTS`
        size_preset (str): one of `PRESETS`; supplies the defaults below
        channel_schedule (list of int, optional): widths at s=0..6
        blocks_per_scale (int, optional): residual blocks per extractor /
            encoder scale
        d_max_base (int): base cost volume candidates 0 .. d_max_base - 1
        fmm_offsets (iterable of int): FMM residual search range
        dtype (str): 'float32' for training, 'float64' for gradient checks
    '''
    def __init__(self, variant=ESNET, size_preset='tiny', channel_schedule=None, blocks_per_scale=None,
                 d_max_base=D_MAX_BASE, fmm_offsets=FMM_OFFSETS, dtype='float32'):
        if variant not in VARIANTS:
            raise ConfigError('unknown network variant {!r}, expected one of {}'.format(variant, VARIANTS))
        if size_preset not in PRESETS:
            raise ConfigError('unknown size preset {!r}, expected one of {}'.format(
                size_preset, sorted(PRESETS)))
        preset_channels, preset_blocks = PRESETS[size_preset]
        self.variant = variant
        self.size_preset = size_preset
        self.channel_schedule = [int(c) for c in (channel_schedule or preset_channels)]
        self.blocks_per_scale = int(preset_blocks if blocks_per_scale is None else blocks_per_scale)
        self.d_max_base = int(d_max_base)
        self.fmm_offsets = tuple(int(d) for d in fmm_offsets)
        self.dtype = np.dtype(dtype)

        if len(self.channel_schedule) != NUM_SCALES:
            raise ConfigError('channel_schedule needs {} widths (s=0..6), got {}'.format(
                NUM_SCALES, len(self.channel_schedule)))
        if min(self.channel_schedule) < 1:
            raise ConfigError('channel widths must be positive: {}'.format(self.channel_schedule))
        if self.d_max_base < 1:
            raise ConfigError('d_max_base must be >= 1, got {}'.format(self.d_max_base))
        if not self.fmm_offsets:
            raise ConfigError('fmm_offsets cannot be empty')
        if self.blocks_per_scale < 0:
            raise ConfigError('blocks_per_scale must be >= 0')
        if self.dtype not in (np.float32, np.float64):
            raise ConfigError('dtype must be float32 or float64, got {}'.format(self.dtype))

    @property
    def extractor_scales(self):
        return 7 if self.variant == PWC_ALL else 4

    @property
    def fmm_scales(self):
        '''Decoder scales that get an FMM / Mask-FMM cost volume'''
        if self.variant in (ESNET, ESNET_M):
            return (2, 1, 0)
        if self.variant == PWC_ALL:
            return (5, 4, 3, 2)
        return ()

    @property
    def coarse_offsets(self):
        '''Candidates of the plain correlation at s=6 (PWC-AllScales)'''
        return tuple(range(max(1, self.d_max_base // 8)))

    def to_dict(self):
        return {
            'variant': self.variant,
            'size_preset': self.size_preset,
            'channel_schedule': list(self.channel_schedule),
            'blocks_per_scale': self.blocks_per_scale,
            'd_max_base': self.d_max_base,
            'fmm_offsets': list(self.fmm_offsets),
            'dtype': self.dtype.name,
        }

    def __repr__(self):
        return 'NetworkConfig({})'.format(', '.join('{}={!r}'.format(k, v) for k, v in self.to_dict().items()))


class DisparityPyramid(object):
    '''Disparity maps d^0 .. d^6, each in pixels at its own resolution'''
    def __init__(self, maps):
        maps = list(maps)
        if len(maps) != NUM_SCALES:
            raise ShapeError('a disparity pyramid has {} maps, got {}'.format(NUM_SCALES, len(maps)))
        b, _, h, w = maps[0].shape
        for s, m in enumerate(maps):
            expected = (b, 1, h >> s, w >> s)
            if m.shape != expected:
                raise ShapeError('pyramid map at s={} has shape {}, expected {}'.format(s, m.shape, expected))
        self.maps = maps

    def __len__(self):
        return len(self.maps)

    def __getitem__(self, s):
        return self.maps[s]

    def __iter__(self):
        return iter(self.maps)

    def shapes(self):
        return [m.shape for m in self.maps]

    def detach(self):
        return DisparityPyramid([m.detach() for m in self.maps])


def _init_res_blocks(params, name, channels, blocks, rng, dtype):
    for j in range(blocks):
        init_conv(params, '{}.res{}.conv1'.format(name, j), channels, channels, 3, rng, dtype)
        init_conv(params, '{}.res{}.conv2'.format(name, j), channels, channels, 3, rng, dtype)


def _head_cost_channels(config, s):
    if config.variant == PWC_ALL:
        if s == 6:
            return len(config.coarse_offsets)
        return len(config.fmm_offsets) if s in config.fmm_scales else 0
    if s == 3:
        return config.d_max_base
    return len(config.fmm_offsets) if s in config.fmm_scales else 0


def init_params(config, seed=None):
    '''Create every parameter of ``config``'s network

    Weights use He fan-in scaling for leaky-ReLU, biases are zero. The
    creation order (and therefore the checkpoint order) is fixed.

    Args:
        config (NetworkConfig): architecture
        seed (int or np.random.Generator, optional): initialization seed

    Returns:
        dict: name -> requires_grad Tensor
    '''
    rng = utils.make_rng(seed)
    c = config.channel_schedule
    dtype = config.dtype
    params = {}

    for s in range(config.extractor_scales):
        c_in = 3 if s == 0 else c[s - 1]
        init_conv(params, 'extract.s{}.conv'.format(s), c[s], c_in, 3, rng, dtype)
        _init_res_blocks(params, 'extract.s{}'.format(s), c[s], config.blocks_per_scale, rng, dtype)

    init_conv(params, 'encode.s3.conv', c[3], c[3] + config.d_max_base, 3, rng, dtype)
    for s in range(4, NUM_SCALES):
        init_conv(params, 'encode.s{}.conv'.format(s), c[s], c[s - 1], 3, rng, dtype)
        _init_res_blocks(params, 'encode.s{}'.format(s), c[s], config.blocks_per_scale, rng, dtype)

    init_conv(params, 'head.s6', 1, c[6] + _head_cost_channels(config, 6), 3, rng, dtype, scale=HEAD_INIT_SCALE)
    for s in range(NUM_SCALES - 2, -1, -1):
        init_conv_transpose(params, 'decode.s{}.up'.format(s), c[s + 1], c[s], 4, rng, dtype)
        init_conv(params, 'decode.s{}.fuse'.format(s), c[s], 2 * c[s], 3, rng, dtype)
        head_in = c[s] + 1 + _head_cost_channels(config, s)
        init_conv(params, 'head.s{}'.format(s), 1, head_in, 3, rng, dtype, scale=HEAD_INIT_SCALE)

    if config.variant == ESNET_M:
        for s in config.fmm_scales:
            init_mask_fmm(params, s, c[2], c[s], c[s + 1], rng, dtype)

    if utils.PLEVEL >= 1:
        utils.vprint(1, 'initialized {} {} with {} parameters', config.size_preset, config.variant,
                     parameter_count(params))
    return params


def parameter_count(params):
    return int(sum(t.data.size for t in params.values()))


def _res_blocks(params, name, x, blocks):
    for j in range(blocks):
        h = leaky_relu(apply_conv(params, '{}.res{}.conv1'.format(name, j), x))
        h = apply_conv(params, '{}.res{}.conv2'.format(name, j), h)
        x = leaky_relu(x + h)
    return x


def _extract_one(image, params, num_scales, blocks):
    features = {}
    x = image
    for s in range(num_scales):
        x = leaky_relu(apply_conv(params, 'extract.s{}.conv'.format(s), x, stride=1 if s == 0 else 2))
        x = _res_blocks(params, 'extract.s{}'.format(s), x, blocks)
        features[s] = x
    return features


def _blocks_in(params, prefix):
    j = 0
    while '{}.res{}.conv1.weight'.format(prefix, j) in params:
        j += 1
    return j


def feature_extract(left, right, params, num_scales=4):
    '''Run the shared residual extractor on both views

    Args:
        left (Tensor): normalized left image (B, 3, H, W), H and W divisible by 64
        right (Tensor): normalized right image, same shape
        params (dict): network parameters
        num_scales (int): number of pyramid levels, 4 gives f^0 .. f^3

    Returns:
        (dict, dict): scale -> feature Tensor, for the left and the right view
    '''
    if left.shape != right.shape:
        raise ShapeError('left {} and right {} images differ in shape'.format(left.shape, right.shape))
    if left.shape[1] != 3:
        raise ShapeError('images must have 3 channels, got {}'.format(left.shape[1]))
    utils.check_divisible(left.shape[2], left.shape[3], 64, what='stereo input')
    blocks = _blocks_in(params, 'extract.s0')
    return (_extract_one(left, params, num_scales, blocks),
            _extract_one(right, params, num_scales, blocks))


def _head(params, s, parts):
    return apply_conv(params, 'head.s{}'.format(s), concat_channels(parts))


def _decode(f_l, f_r, enc, base_cost, params, config):
    '''Decoder from s=6 to s=0; returns the 7 disparities and Mask-FMM masks'''
    c6_parts = [enc[6]]
    if config.variant == PWC_ALL:
        c6_parts.append(correlate(f_l[6], f_r[6], config.coarse_offsets).scores)
    disparities = {6: _head(params, 6, c6_parts)}
    decoded = {6: enc[6]}
    masks = []

    for s in range(NUM_SCALES - 2, -1, -1):
        prefix = 'decode.s{}'.format(s)
        up = leaky_relu(conv_transpose2d(decoded[s + 1], params[prefix + '.up.weight'],
                                         params[prefix + '.up.bias'], stride=2, padding=1))
        skip = enc[s] if s >= 3 else f_l[s]
        decoded[s] = leaky_relu(apply_conv(params, prefix + '.fuse', concat_channels([up, skip])))
        _, _, h, w = decoded[s].shape
        d_up = bilinear_resize(disparities[s + 1], h, w, disparity=True)

        parts = [decoded[s], d_up]
        if s == 3 and config.variant != PWC_ALL:
            parts.append(base_cost.scores)
        elif s in config.fmm_scales:
            if config.variant == ESNET_M:
                cost, mask, _, _ = mask_fmm(f_l[2], f_r[2], disparities[s + 1], decoded[s + 1], s, params,
                                            offsets=config.fmm_offsets)
                masks.append(mask)
            else:
                cost = fmm(f_l[s], f_r[s], disparities[s + 1], config.fmm_offsets)
            parts.append(cost.scores)
        disparities[s] = _head(params, s, parts)
        if utils.PLEVEL >= 2: utils.vprint(2, 'decoded s={} {}', s, disparities[s].shape)

    return DisparityPyramid([disparities[s] for s in range(NUM_SCALES)]), masks


def _forward(left, right, params, config):
    blocks = config.blocks_per_scale
    f_l, f_r = feature_extract(left, right, params, config.extractor_scales)
    base_cost = correlate(f_l[3], f_r[3], range(config.d_max_base))
    enc = {3: leaky_relu(apply_conv(params, 'encode.s3.conv', concat_channels([f_l[3], base_cost.scores])))}
    for s in range(4, NUM_SCALES):
        x = leaky_relu(apply_conv(params, 'encode.s{}.conv'.format(s), enc[s - 1], stride=2))
        enc[s] = _res_blocks(params, 'encode.s{}'.format(s), x, blocks)
    return _decode(f_l, f_r, enc, base_cost, params, config)


def esnet_forward(left, right, params, config):
    '''ESNet (and the Baseline-NoFMM / PWC-AllScales ablations) forward pass

    Returns:
        DisparityPyramid
    '''
    if config.variant == ESNET_M:
        raise ConfigError('esnet_forward cannot run the ESNetM variant, use esnetm_forward')
    pyramid, _ = _forward(left, right, params, config)
    return pyramid


def esnetm_forward(left, right, params, config):
    '''ESNet-M forward pass

    Returns:
        (DisparityPyramid, list of OcclusionMask): masks at s=2, 1, 0
    '''
    if config.variant != ESNET_M:
        raise ConfigError('esnetm_forward needs the ESNetM variant, got {}'.format(config.variant))
    return _forward(left, right, params, config)


class StereoNetwork(object):
    '''A network config plus its parameters

    Args:
        config (NetworkConfig): architecture
        params (dict, optional): existing parameters; freshly initialized
            from ``seed`` when omitted
        seed (int, optional): initialization seed
    '''
    def __init__(self, config, params=None, seed=None):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)

    def __call__(self, left, right):
        '''Returns (DisparityPyramid, masks); masks is empty unless ESNetM'''
        if self.config.variant == ESNET_M:
            return esnetm_forward(left, right, self.params, self.config)
        return esnet_forward(left, right, self.params, self.config), []

    def as_input(self, array):
        return array if isinstance(array, Tensor) and array.dtype == self.config.dtype \
            else Tensor(to_array(array), dtype=self.config.dtype)

    def parameter_count(self):
        return parameter_count(self.params)

    def layer_shapes(self):
        '''(name, shape) of every parameter in creation order'''
        return [(name, t.shape) for name, t in self.params.items()]

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()


if __name__ == '__main__':
    net = StereoNetwork(NetworkConfig(ESNET_M, 'tiny'), seed=0)
    x = Tensor(np.random.default_rng(0).normal(size=(1, 3, 64, 128)))
    pyr, masks = net(x, x)
    print(net.parameter_count(), pyr.shapes(), [m.shape for m in masks])
