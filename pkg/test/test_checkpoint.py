import os

import numpy as np
import pytest

from esnet import checkpoint
from esnet.exceptions import DataError
from esnet.network import NetworkConfig, StereoNetwork


def test_round_trip_is_bit_exact(tmpdir, rng):
    arrays = {
        'a.weight': rng.normal(size=(4, 3, 3, 3)).astype(np.float32),
        'a.bias': rng.normal(size=(1, 4, 1, 1)),
        'scalar': np.array(2.5),
    }
    path = str(tmpdir.join('ckpt.esnet'))
    checkpoint.save_checkpoint(path, arrays)
    loaded = checkpoint.load_checkpoint(path)
    assert list(loaded) == list(arrays)
    for name, arr in arrays.items():
        assert loaded[name].dtype == arr.dtype
        assert loaded[name].shape == arr.shape
        assert loaded[name].tobytes() == arr.tobytes()
    assert not os.path.exists(path + '.tmp')


def test_same_arrays_same_bytes(tmpdir, rng):
    arrays = {'w': rng.normal(size=(2, 2))}
    a, b = str(tmpdir.join('a')), str(tmpdir.join('b'))
    checkpoint.save_checkpoint(a, arrays)
    checkpoint.save_checkpoint(b, arrays)
    with open(a, 'rb') as fa, open(b, 'rb') as fb:
        assert fa.read() == fb.read()


def test_truncated_file(tmpdir, rng):
    path = str(tmpdir.join('ckpt'))
    checkpoint.save_checkpoint(path, {'w': rng.normal(size=(8, 8))})
    with open(path, 'rb') as f:
        data = f.read()
    with open(path, 'wb') as f:
        f.write(data[:-16])
    with pytest.raises(DataError):
        checkpoint.load_checkpoint(path)


def test_not_a_checkpoint(tmpdir):
    path = str(tmpdir.join('junk'))
    with open(path, 'w') as f:
        f.write('hello\n')
    with pytest.raises(DataError):
        checkpoint.load_checkpoint(path)
    with pytest.raises(DataError):
        checkpoint.load_checkpoint(str(tmpdir.join('missing')))


def test_whitespace_names_rejected(tmpdir):
    with pytest.raises(DataError):
        checkpoint.save_checkpoint(str(tmpdir.join('c')), {'bad name': np.zeros(2)})


def test_restore_into_network(tmpdir):
    config = NetworkConfig('ESNet', 'tiny')
    source = StereoNetwork(config, seed=1)
    target = StereoNetwork(config, seed=2)
    path = str(tmpdir.join('net.esnet'))
    checkpoint.save_checkpoint(path, checkpoint.params_to_arrays(source.params))
    checkpoint.restore_params(target.params, checkpoint.load_checkpoint(path))
    for name in source.params:
        np.testing.assert_array_equal(source.params[name].data, target.params[name].data)


def test_restore_rejects_other_architecture(tmpdir):
    path = str(tmpdir.join('net.esnet'))
    checkpoint.save_checkpoint(path, checkpoint.params_to_arrays(StereoNetwork(NetworkConfig('ESNet'), seed=0).params))
    other = StereoNetwork(NetworkConfig('ESNetM'), seed=0)
    with pytest.raises(DataError):
        checkpoint.restore_params(other.params, checkpoint.load_checkpoint(path))


def test_tensors_and_arrays_save_alike(tmpdir, rng):
    from esnet.tensor import Tensor

    arr = rng.normal(size=(1, 2, 3, 3))
    a, b = str(tmpdir.join('a')), str(tmpdir.join('b'))
    checkpoint.save_checkpoint(a, {'w': arr})
    checkpoint.save_checkpoint(b, {'w': Tensor(arr, dtype=np.float64)})
    with open(a, 'rb') as fa, open(b, 'rb') as fb:
        assert fa.read() == fb.read()
