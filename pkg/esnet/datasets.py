'''Stereo samples, normalization, cropping, the synthetic scene generator and
on-disk dataset directories.

A dataset directory holds::

    left/000000.png  right/000000.png  disparity/000000.pfm (or .png, KITTI)
    valid/000000.png (only for sparse ground truth)  metadata.json
'''
import json
import os

import numpy as np
from joblib import Parallel, delayed

from esnet import formats, utils
from esnet.exceptions import ConfigError, DataError, GroundTruthAccessError, ShapeError
from esnet.matching import CameraRig
from esnet.tensor import Tensor, to_array

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

SYNTH_STYLES = ('uniform-shift', 'two-layer-occlusion', 'smooth-ramp')
METADATA_FILE = 'metadata.json'


class StereoSample(object):
    '''A rectified image pair with optional ground truth

    Args:
        left (Tensor): (1, 3, H, W) in [0, 1]
        right (Tensor): same shape as ``left``
        gt_disparity (Tensor, optional): (1, 1, H, W) in pixels
        valid_mask (Tensor, optional): (1, 1, H, W), 1 where ``gt_disparity``
            is measured; all ones when omitted with ground truth present
        rig (CameraRig, optional): intrinsics for depth conversion
        source_tag (str): dataset identifier
        metadata (dict, optional): generator bookkeeping (occluded band, ...)
    '''
    def __init__(self, left, right, gt_disparity=None, valid_mask=None, rig=None, source_tag='', metadata=None):
        if left.shape != right.shape:
            raise ShapeError('left {} and right {} differ in shape'.format(left.shape, right.shape))
        if left.shape[0] != 1 or left.shape[1] != 3:
            raise ShapeError('sample images must be (1, 3, H, W), got {}'.format(left.shape))
        spatial = (1, 1) + left.shape[2:]
        if gt_disparity is not None:
            if gt_disparity.shape != spatial:
                raise ShapeError('ground truth {} does not match the images {}'.format(gt_disparity.shape, spatial))
            if valid_mask is None:
                valid_mask = Tensor(np.ones(spatial, dtype=np.float32))
            if valid_mask.shape != spatial:
                raise ShapeError('valid mask {} does not match the images {}'.format(valid_mask.shape, spatial))
            if np.any(gt_disparity.data[valid_mask.data > 0] < 0):
                raise DataError('valid ground-truth disparities must be >= 0 ({})'.format(source_tag))
        self.left = left
        self.right = right
        self._gt = gt_disparity
        self._valid = valid_mask if gt_disparity is not None else None
        self._stripped = False
        self.rig = rig
        self.source_tag = source_tag
        self.metadata = dict(metadata or {})

    @property
    def shape(self):
        return self.left.shape[2:]

    @property
    def has_ground_truth(self):
        return self._gt is not None and not self._stripped

    @property
    def gt_disparity(self):
        if self._stripped:
            raise GroundTruthAccessError('ground truth of a {} sample was stripped for unsupervised use'.format(
                self.source_tag or 'dataset'))
        return self._gt

    @property
    def valid_mask(self):
        if self._stripped:
            raise GroundTruthAccessError('valid mask of a {} sample was stripped for unsupervised use'.format(
                self.source_tag or 'dataset'))
        return self._valid

    def strip_ground_truth(self):
        '''Copy of this sample whose ground truth can no longer be read'''
        stripped = StereoSample(self.left, self.right, rig=self.rig, source_tag=self.source_tag,
                                metadata=self.metadata)
        stripped._stripped = True
        return stripped

    def __repr__(self):
        return 'StereoSample({}, {}x{}, gt={})'.format(self.source_tag, self.shape[0], self.shape[1],
                                                        self.has_ground_truth)


def _channel_constants(values, dtype):
    return np.asarray(values, dtype=dtype).reshape(1, 3, 1, 1)


def normalize(image, mean=IMAGENET_MEAN, std=IMAGENET_STD):
    '''(image - mean) / std per channel'''
    data = to_array(image)
    return Tensor((data - _channel_constants(mean, data.dtype)) / _channel_constants(std, data.dtype),
                  dtype=data.dtype)


def denormalize(image, mean=IMAGENET_MEAN, std=IMAGENET_STD):
    data = to_array(image)
    return Tensor(data * _channel_constants(std, data.dtype) + _channel_constants(mean, data.dtype),
                  dtype=data.dtype)


def _crop(tensor, y0, x0, h, w):
    if tensor is None:
        return None
    return Tensor(tensor.data[:, :, y0:y0 + h, x0:x0 + w], dtype=tensor.dtype)


def random_crop(sample, crop_h, crop_w, rng):
    '''Crop left, right, ground truth and mask at the same random window

    Disparities are not rescaled: a crop shifts both views equally.
    '''
    height, width = sample.shape
    if crop_h > height or crop_w > width:
        raise DataError('crop {}x{} is larger than the {}x{} image ({})'.format(
            crop_h, crop_w, height, width, sample.source_tag))
    y0 = int(rng.integers(0, height - crop_h + 1))
    x0 = int(rng.integers(0, width - crop_w + 1))
    metadata = dict(sample.metadata, crop=(y0, x0, crop_h, crop_w))
    if sample.has_ground_truth:
        gt, valid = sample.gt_disparity, sample.valid_mask
    else:
        gt, valid = None, None
    cropped = StereoSample(_crop(sample.left, y0, x0, crop_h, crop_w), _crop(sample.right, y0, x0, crop_h, crop_w),
                           _crop(gt, y0, x0, crop_h, crop_w), _crop(valid, y0, x0, crop_h, crop_w),
                           rig=sample.rig, source_tag=sample.source_tag, metadata=metadata)
    if sample._stripped:
        cropped._stripped = True
    return cropped


class SynthSpec(object):
    '''Parameters of a synthetic stereo dataset

    Args:
        count (int): number of pairs
        height (int): image height, divisible by 64
        width (int): image width, divisible by 64
        style (str): 'uniform-shift', 'two-layer-occlusion' or 'smooth-ramp'
        disparity (float): shift for uniform-shift
        background_disparity (int): two-layer-occlusion background shift
        foreground_disparity (int): two-layer-occlusion foreground shift
        ramp (tuple): (top, bottom) disparities for smooth-ramp
        components (int): sinusoids per texture channel
        rig (CameraRig, optional): stored on every sample
        source_tag (str): dataset identifier
    '''
    def __init__(self, count=4, height=64, width=128, style='uniform-shift', disparity=4.0,
                 background_disparity=2, foreground_disparity=8, ramp=(2.0, 10.0), components=12, rig=None,
                 source_tag='synth'):
        if style not in SYNTH_STYLES:
            raise ConfigError('unknown synthetic style {!r}, expected one of {}'.format(style, SYNTH_STYLES))
        if count < 1:
            raise ConfigError('synthetic count must be >= 1, got {}'.format(count))
        utils.check_divisible(height, width, 64, what='synthetic image')
        if style == 'two-layer-occlusion' and not foreground_disparity > background_disparity >= 0:
            raise ConfigError('two-layer-occlusion needs foreground_disparity > background_disparity >= 0')
        self.count = int(count)
        self.height = int(height)
        self.width = int(width)
        self.style = style
        self.disparity = float(disparity)
        self.background_disparity = int(background_disparity)
        self.foreground_disparity = int(foreground_disparity)
        self.ramp = (float(ramp[0]), float(ramp[1]))
        self.components = int(components)
        self.rig = rig or CameraRig(720.0, 0.54)
        self.source_tag = source_tag


class _Texture(object):
    '''Band-limited random texture: per channel a sum of random sinusoids

    Being analytic, it can be sampled at any real coordinate, which makes the
    synthesized right views exact warps of the left ones.
    '''
    def __init__(self, rng, components):
        n = components
        periods = rng.uniform(4.0, 32.0, size=(3, n))
        angles = rng.uniform(0.0, np.pi, size=(3, n))
        self.fx = np.cos(angles) / periods
        self.fy = np.sin(angles) / periods
        self.phase = rng.uniform(0.0, 2 * np.pi, size=(3, n))
        self.amplitude = rng.uniform(0.5, 1.0, size=(3, n))
        self.amplitude *= 0.45 / self.amplitude.sum(axis=1, keepdims=True)

    def __call__(self, x, y):
        '''Sample at coordinate grids ``x``, ``y`` (H x W) -> (3, H, W)'''
        out = np.empty((3,) + x.shape)
        for c in range(3):
            arg = (2 * np.pi * (x[..., None] * self.fx[c] + y[..., None] * self.fy[c]) + self.phase[c])
            out[c] = 0.5 + (self.amplitude[c] * np.sin(arg)).sum(axis=-1)
        return out


def _as_sample(left, right, disparity, spec, index, extra):
    metadata = {'style': spec.style, 'index': index}
    metadata.update(extra)
    return StereoSample(Tensor(left[None].astype(np.float32)), Tensor(right[None].astype(np.float32)),
                        Tensor(disparity[None, None].astype(np.float32)), rig=spec.rig,
                        source_tag=spec.source_tag, metadata=metadata)


def _foreground_box(spec, rng):
    h, w = spec.height, spec.width
    bh = int(rng.integers(h // 3, h // 2 + 1))
    bw = int(rng.integers(w // 6, w // 4 + 1))
    y0 = int(rng.integers(0, h - bh + 1))
    x0 = int(rng.integers(spec.foreground_disparity + 2, w - bw - 1))
    return y0, y0 + bh, x0, x0 + bw


def synth_generate(spec, rng=None):
    '''Generate ``spec.count`` stereo pairs with exact ground truth

    The right view is rendered so that left(x, y) == right(x - d(x, y), y)
    wherever the left pixel is visible in the right view.

    Returns:
        list of StereoSample
    '''
    rng = utils.make_rng(rng)
    h, w = spec.height, spec.width
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    samples = []
    for index in range(spec.count):
        texture = _Texture(rng, spec.components)
        extra = {}
        if spec.style == 'uniform-shift':
            disparity = np.full((h, w), spec.disparity)
            left = texture(xs, ys)
            right = texture(xs + spec.disparity, ys)
            extra['disparity'] = spec.disparity
        elif spec.style == 'smooth-ramp':
            top, bottom = spec.ramp
            row = top + (bottom - top) * ys / max(h - 1, 1)
            disparity = row
            left = texture(xs, ys)
            right = texture(xs + row, ys)
            extra['ramp'] = list(spec.ramp)
        else:
            front = _Texture(rng, spec.components)
            d_b, d_f = spec.background_disparity, spec.foreground_disparity
            y0, y1, x0, x1 = _foreground_box(spec, rng)
            in_box = (ys >= y0) & (ys < y1) & (xs >= x0) & (xs < x1)
            disparity = np.where(in_box, float(d_f), float(d_b))
            left = np.where(in_box, front(xs, ys), texture(xs, ys))
            # right-view pixels covered by the shifted foreground
            in_box_right = (ys >= y0) & (ys < y1) & (xs >= x0 - d_f) & (xs < x1 - d_f)
            right = np.where(in_box_right, front(xs + d_f, ys), texture(xs + d_b, ys))
            extra.update(foreground_box=[y0, y1, x0, x1], occluded_band=[y0, y1, x0 - (d_f - d_b), x0],
                         background_disparity=d_b, foreground_disparity=d_f)
        samples.append(_as_sample(np.clip(left, 0, 1), np.clip(right, 0, 1), disparity, spec, index, extra))
    if utils.PLEVEL >= 1: utils.vprint(1, 'generated {} {} pairs of {}x{}', spec.count, spec.style, h, w)
    return samples


def collate(samples, normalized=True, mean=IMAGENET_MEAN, std=IMAGENET_STD):
    '''Stack samples into a batch

    Returns:
        dict: 'left', 'right' (normalized when ``normalized``), 'left_raw',
            'right_raw', and 'gt' / 'valid' when every sample has ground truth
    '''
    if not samples:
        raise DataError('cannot collate an empty batch')
    shape = samples[0].shape
    for s in samples:
        if s.shape != shape:
            raise ShapeError('batch mixes image sizes {} and {}'.format(shape, s.shape))
    left = np.concatenate([s.left.data for s in samples])
    right = np.concatenate([s.right.data for s in samples])
    batch = {'left_raw': Tensor(left), 'right_raw': Tensor(right)}
    batch['left'] = normalize(batch['left_raw'], mean, std) if normalized else batch['left_raw']
    batch['right'] = normalize(batch['right_raw'], mean, std) if normalized else batch['right_raw']
    if all(s.has_ground_truth for s in samples):
        batch['gt'] = Tensor(np.concatenate([s.gt_disparity.data for s in samples]))
        batch['valid'] = Tensor(np.concatenate([s.valid_mask.data for s in samples]))
    return batch


def split_samples(samples, ratio=0.9):
    '''Ordered train/validation split; at least one training sample'''
    if not 0 < ratio <= 1:
        raise ConfigError('split ratio must lie in (0, 1], got {}'.format(ratio))
    n_train = max(1, int(len(samples) * ratio))
    return samples[:n_train], samples[n_train:]


def _name(index):
    return '{:06d}'.format(index)


def save_dataset(directory, samples):
    '''Write ``samples`` as a dataset directory (PNG images, PFM disparities)'''
    entries = []
    for i, sample in enumerate(samples):
        name = _name(i)
        formats.write_image(os.path.join(directory, 'left', name + '.png'), sample.left)
        formats.write_image(os.path.join(directory, 'right', name + '.png'), sample.right)
        entry = {'name': name, 'source_tag': sample.source_tag, 'metadata': sample.metadata,
                 'rig': sample.rig.to_dict() if sample.rig else None, 'disparity': None, 'valid': None}
        if sample.has_ground_truth:
            entry['disparity'] = os.path.join('disparity', name + '.pfm')
            formats.write_pfm(os.path.join(directory, entry['disparity']), sample.gt_disparity)
            if not np.all(sample.valid_mask.data > 0):
                entry['valid'] = os.path.join('valid', name + '.png')
                formats.write_gray(os.path.join(directory, entry['valid']), sample.valid_mask)
        entries.append(entry)
    with open(os.path.join(directory, METADATA_FILE), 'w') as f:
        json.dump({'samples': entries}, f, indent=2, sort_keys=True)
    if utils.PLEVEL >= 1: utils.vprint(1, 'saved {} samples to {}', len(samples), directory)


def _load_one(directory, entry, with_ground_truth):
    left = formats.read_image(os.path.join(directory, 'left', entry['name'] + '.png'))
    right = formats.read_image(os.path.join(directory, 'right', entry['name'] + '.png'))
    gt = valid = None
    if with_ground_truth and entry.get('disparity'):
        path = os.path.join(directory, entry['disparity'])
        if path.endswith('.png'):
            gt, valid = formats.read_kitti_disparity(path)
        else:
            gt = formats.read_pfm(path)
            if entry.get('valid'):
                mask = formats.read_image(os.path.join(directory, entry['valid'])).data[:, :1]
                valid = Tensor((mask > 0.5).astype(np.float32))
    rig = CameraRig(**entry['rig']) if entry.get('rig') else None
    return StereoSample(left, right, gt, valid, rig=rig, source_tag=entry.get('source_tag', ''),
                        metadata=entry.get('metadata'))


def read_metadata(directory):
    path = os.path.join(directory, METADATA_FILE)
    if not os.path.isfile(path):
        raise DataError('not a dataset directory (no {}): {}'.format(METADATA_FILE, directory))
    try:
        with open(path) as f:
            return json.load(f)['samples']
    except (ValueError, KeyError) as e:
        raise DataError('{}: malformed dataset metadata ({})'.format(path, e))


def load_dataset(directory, with_ground_truth=True, n_jobs=1):
    '''Read a dataset directory written by `save_dataset`

    Decoding runs on ``n_jobs`` joblib workers; samples come back in file order.

    Args:
        directory (str): dataset root
        with_ground_truth (bool): False never opens the disparity files and
            returns stripped samples
        n_jobs (int): joblib workers, 1 decodes in-process

    Returns:
        list of StereoSample
    '''
    entries = read_metadata(directory)
    samples = Parallel(n_jobs=n_jobs)(delayed(_load_one)(directory, e, with_ground_truth) for e in entries)
    if not with_ground_truth:
        samples = [s.strip_ground_truth() for s in samples]
    if utils.PLEVEL >= 1: utils.vprint(1, 'loaded {} samples from {}', len(samples), directory)
    return samples
