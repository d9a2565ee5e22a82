'''File formats: PFM disparity maps, KITTI 16-bit disparity PNGs, RGB images
and diagnostic grayscale / colormapped PNGs.

Every reader returns 4-D `Tensor`s (batch of one) and every writer accepts a
Tensor or array holding a single image.
'''
import os
import re

import matplotlib
import numpy as np
from PIL import Image

from esnet import utils
from esnet.exceptions import DataError, ShapeError
from esnet.tensor import Tensor, to_array

KITTI_SCALE = 256.0
IMAGE_EXTENSIONS = ('.png', '.ppm')
KITTI_MODES = ('I;16', 'I;16B', 'I;16L', 'I')


def _plane(value, what):
    '''Single H x W plane from a (1, 1, H, W) tensor/array or an H x W array'''
    arr = to_array(value)
    if arr.ndim == 4:
        if arr.shape[0] != 1 or arr.shape[1] != 1:
            raise ShapeError('{} needs a single-channel single image, got shape {}'.format(what, arr.shape))
        arr = arr[0, 0]
    if arr.ndim != 2:
        raise ShapeError('{} needs a 2-D map, got shape {}'.format(what, arr.shape))
    return arr


def _rgb(value, what):
    arr = to_array(value)
    if arr.ndim == 4:
        if arr.shape[0] != 1 or arr.shape[1] != 3:
            raise ShapeError('{} needs one 3-channel image, got shape {}'.format(what, arr.shape))
        arr = arr[0].transpose(1, 2, 0)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError('{} needs an H x W x 3 image, got shape {}'.format(what, arr.shape))
    return arr


def _ensure_dir(path):
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory):
        os.makedirs(directory)


def _read_header_line(f, path):
    line = f.readline()
    if not line:
        raise DataError('{}: truncated PFM header'.format(path))
    return line.decode('ascii', errors='replace').strip()


def read_pfm(path):
    '''Read a grayscale ("Pf") PFM file

    Rows are stored bottom-up; a negative scale means little-endian floats.

    Returns:
        Tensor: (1, 1, H, W) float32, top row first
    '''
    if not os.path.isfile(path):
        raise DataError('PFM file not found: {}'.format(path))
    with open(path, 'rb') as f:
        kind = _read_header_line(f, path)
        if kind == 'PF':
            raise DataError('{}: color PFM ("PF") is not supported, expected "Pf"'.format(path))
        if kind != 'Pf':
            raise DataError('{}: not a PFM file (header {!r})'.format(path, kind[:16]))
        dims = re.match(r'^(\d+)\s+(\d+)$', _read_header_line(f, path))
        if not dims:
            raise DataError('{}: malformed PFM size line'.format(path))
        width, height = int(dims.group(1)), int(dims.group(2))
        try:
            scale = float(_read_header_line(f, path))
        except ValueError:
            raise DataError('{}: malformed PFM scale line'.format(path))
        if scale == 0:
            raise DataError('{}: PFM scale cannot be 0'.format(path))
        payload = f.read()

    count = width * height
    if len(payload) < 4 * count:
        raise DataError('{}: truncated PFM payload, expected {} bytes, found {}'.format(
            path, 4 * count, len(payload)))
    endian = '<' if scale < 0 else '>'
    data = np.frombuffer(payload[:4 * count], dtype=endian + 'f4').reshape(height, width)
    data = np.flipud(data).astype(np.float32)
    return Tensor(data[None, None], dtype=np.float32)


def write_pfm(path, disparity):
    '''Write a single-channel map as little-endian grayscale PFM'''
    plane = _plane(disparity, 'write_pfm').astype('<f4')
    height, width = plane.shape
    _ensure_dir(path)
    with open(path, 'wb') as f:
        f.write('Pf\n{} {}\n-1.0\n'.format(width, height).encode('ascii'))
        f.write(np.ascontiguousarray(np.flipud(plane)).tobytes())


def read_kitti_disparity(path):
    '''Read a KITTI disparity PNG (uint16, value = disparity * 256, 0 = no data)

    Returns:
        (Tensor, Tensor): disparity in pixels and the valid mask, (1, 1, H, W)
    '''
    if not os.path.isfile(path):
        raise DataError('KITTI disparity file not found: {}'.format(path))
    try:
        img = Image.open(path)
        img.load()
    except (IOError, OSError) as e:
        raise DataError('{}: cannot decode PNG ({})'.format(path, e))
    if img.mode not in KITTI_MODES:
        raise DataError('{}: KITTI disparity must be a 16-bit single-channel PNG, got mode {}'.format(
            path, img.mode))
    raw = np.asarray(img).astype(np.float64)
    if raw.ndim != 2:
        raise DataError('{}: expected a single-channel image'.format(path))
    valid = raw > 0
    disparity = (raw / KITTI_SCALE).astype(np.float32)
    return Tensor(disparity[None, None]), Tensor(valid[None, None].astype(np.float32))


def write_kitti_disparity(path, disparity, valid=None):
    '''Write disparities (pixels) as a KITTI 16-bit PNG; invalid pixels become 0'''
    plane = _plane(disparity, 'write_kitti_disparity').astype(np.float64)
    raw = np.clip(np.round(plane * KITTI_SCALE), 0, 65535).astype(np.uint16)
    if valid is not None:
        raw[_plane(valid, 'write_kitti_disparity mask') <= 0] = 0
    _ensure_dir(path)
    Image.fromarray(raw).save(path, format='PNG')


def _image_format(path):
    ext = os.path.splitext(path)[1].lower()
    if ext not in IMAGE_EXTENSIONS:
        raise DataError('{}: unsupported image type {!r}, expected one of {}'.format(path, ext, IMAGE_EXTENSIONS))
    return 'PNG' if ext == '.png' else 'PPM'


def read_image(path):
    '''Read an 8-bit RGB PNG/PPM image as (1, 3, H, W) float32 in [0, 1]'''
    _image_format(path)
    if not os.path.isfile(path):
        raise DataError('image not found: {}'.format(path))
    try:
        img = Image.open(path)
        img.load()
    except (IOError, OSError) as e:
        raise DataError('{}: cannot decode image ({})'.format(path, e))
    arr = np.asarray(img.convert('RGB'), dtype=np.float32) / 255.0
    return Tensor(arr.transpose(2, 0, 1)[None])


def to_uint8(values):
    return np.clip(np.round(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_image(path, image):
    '''Write a [0, 1] RGB image as 8-bit PNG or PPM (by extension)'''
    fmt = _image_format(path)
    _ensure_dir(path)
    Image.fromarray(to_uint8(_rgb(image, 'write_image'))).save(path, format=fmt)


def write_gray(path, values, vmax=1.0):
    '''Write ``values / vmax`` clipped to [0, 1] as an 8-bit grayscale PNG'''
    plane = _plane(values, 'write_gray').astype(np.float64)
    scaled = plane / vmax if vmax > 0 else np.zeros_like(plane)
    _ensure_dir(path)
    Image.fromarray(to_uint8(scaled)).save(path, format='PNG')


def write_colormap(path, values, vmax=1.0, cmap='magma'):
    '''Write ``values / vmax`` through a matplotlib colormap as an RGB PNG'''
    plane = _plane(values, 'write_colormap').astype(np.float64)
    scaled = np.clip(plane / vmax if vmax > 0 else np.zeros_like(plane), 0.0, 1.0)
    try:
        colormap = matplotlib.colormaps[cmap]
    except KeyError:
        raise DataError('unknown matplotlib colormap {!r}'.format(cmap))
    rgba = colormap(scaled, bytes=True)
    _ensure_dir(path)
    Image.fromarray(np.ascontiguousarray(rgba[..., :3])).save(path, format='PNG')
    if utils.PLEVEL >= 3: utils.vprint(3, 'wrote {} ({})', path, cmap)
