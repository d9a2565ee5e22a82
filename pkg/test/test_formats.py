import numpy as np
import pytest
from PIL import Image

from esnet import formats
from esnet.exceptions import DataError, ShapeError
from esnet.tensor import Tensor


def test_pfm_round_trip(tmpdir, rng):
    disparity = rng.random((1, 1, 5, 7)).astype(np.float32) * 100
    path = str(tmpdir.join('d.pfm'))
    formats.write_pfm(path, Tensor(disparity))
    loaded = formats.read_pfm(path)
    assert loaded.shape == (1, 1, 5, 7)
    np.testing.assert_array_equal(loaded.data, disparity)


def test_pfm_rows_are_bottom_up(tmpdir):
    path = str(tmpdir.join('d.pfm'))
    formats.write_pfm(path, np.array([[1.0, 2.0], [3.0, 4.0]]))
    with open(path, 'rb') as f:
        data = f.read()
    payload = np.frombuffer(data[-16:], dtype='<f4')
    np.testing.assert_array_equal(payload, [3.0, 4.0, 1.0, 2.0])


def test_pfm_big_endian(tmpdir):
    path = str(tmpdir.join('be.pfm'))
    with open(path, 'wb') as f:
        f.write(b'Pf\n2 1\n1.0\n')
        f.write(np.array([1.5, -2.0], dtype='>f4').tobytes())
    np.testing.assert_array_equal(formats.read_pfm(path).data.ravel(), [1.5, -2.0])


@pytest.mark.parametrize('content', [b'PF\n2 1\n-1.0\n' + b'\0' * 24, b'P6\n2 1\n255\n', b'Pf\n2 x\n-1.0\n',
                                     b'Pf\n2 2\n-1.0\n' + b'\0' * 8, b'Pf\n'])
def test_pfm_rejects_bad_files(tmpdir, content):
    path = str(tmpdir.join('bad.pfm'))
    with open(path, 'wb') as f:
        f.write(content)
    with pytest.raises(DataError):
        formats.read_pfm(path)


def test_pfm_missing_file(tmpdir):
    with pytest.raises(DataError):
        formats.read_pfm(str(tmpdir.join('missing.pfm')))


def test_write_pfm_needs_single_map():
    with pytest.raises(ShapeError):
        formats.write_pfm('unused.pfm', np.zeros((1, 3, 4, 4)))


def test_kitti_decoding(tmpdir):
    raw = np.array([[12800, 0], [256, 65535]], dtype=np.uint16)
    path = str(tmpdir.join('k.png'))
    Image.fromarray(raw).save(path)
    disparity, valid = formats.read_kitti_disparity(path)
    np.testing.assert_allclose(disparity.data[0, 0], [[50.0, 0.0], [1.0, 65535 / 256.0]])
    np.testing.assert_array_equal(valid.data[0, 0], [[1.0, 0.0], [1.0, 1.0]])


def test_kitti_write_then_read(tmpdir):
    path = str(tmpdir.join('k.png'))
    values = np.array([[50.0, 3.25], [7.5, 0.0]])
    formats.write_kitti_disparity(path, values, valid=np.array([[1, 1], [0, 1]]))
    disparity, valid = formats.read_kitti_disparity(path)
    np.testing.assert_allclose(disparity.data[0, 0], [[50.0, 3.25], [0.0, 0.0]])
    np.testing.assert_array_equal(valid.data[0, 0], [[1, 1], [0, 0]])


def test_kitti_rejects_8bit(tmpdir):
    path = str(tmpdir.join('rgb.png'))
    Image.fromarray(np.zeros((2, 2, 3), dtype=np.uint8)).save(path)
    with pytest.raises(DataError):
        formats.read_kitti_disparity(path)


@pytest.mark.parametrize('ext', ['.png', '.ppm'])
def test_image_round_trip(tmpdir, rng, ext):
    image = np.round(rng.random((1, 3, 6, 5)) * 255) / 255
    path = str(tmpdir.join('img' + ext))
    formats.write_image(path, Tensor(image))
    loaded = formats.read_image(path)
    assert loaded.shape == (1, 3, 6, 5)
    np.testing.assert_allclose(loaded.data, image, atol=1e-6)


def test_image_errors(tmpdir):
    with pytest.raises(DataError):
        formats.read_image(str(tmpdir.join('img.jpg')))
    with pytest.raises(DataError):
        formats.read_image(str(tmpdir.join('missing.png')))
    with pytest.raises(ShapeError):
        formats.write_image(str(tmpdir.join('x.png')), np.zeros((1, 1, 4, 4)))


def test_write_gray_scales_and_clips(tmpdir):
    path = str(tmpdir.join('sub', 'g.png'))
    formats.write_gray(path, np.array([[0.0, 5.0], [10.0, 20.0]]), vmax=10.0)
    np.testing.assert_array_equal(np.asarray(Image.open(path)), [[0, 128], [255, 255]])


def test_write_colormap(tmpdir):
    path = str(tmpdir.join('c.png'))
    formats.write_colormap(path, np.linspace(0, 1, 12).reshape(3, 4), cmap='magma')
    img = Image.open(path)
    assert img.mode == 'RGB' and img.size == (4, 3)
    with pytest.raises(DataError):
        formats.write_colormap(path, np.zeros((2, 2)), cmap='no-such-map')
