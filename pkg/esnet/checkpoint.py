'''Flat container of named parameter arrays.

Layout::

    ESNET-CHECKPOINT 1
    <name> <dtype> <d0,d1,...> <byte offset> <byte count>
    ...
    END
    <raw little-endian payload, arrays back to back>

Offsets are relative to the start of the payload. Files are written to a
temporary name and renamed, so an interrupted write never replaces a good
checkpoint.
'''
import os

import numpy as np

from esnet import utils
from esnet.exceptions import DataError
from esnet.tensor import to_array

MAGIC = 'ESNET-CHECKPOINT 1'


def save_checkpoint(path, arrays):
    '''Write ``arrays`` (name -> ndarray or Tensor) to ``path``

    Names must not contain whitespace; arrays are stored in insertion order.
    '''
    lines = [MAGIC]
    payload = []
    offset = 0
    for name, arr in arrays.items():
        arr = to_array(arr)
        if not name or any(ch.isspace() for ch in name):
            raise DataError('checkpoint array names cannot contain whitespace: {!r}'.format(name))
        le = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder('<'))
        raw = le.tobytes()
        shape = ','.join(str(d) for d in arr.shape) or '-'
        lines.append('{} {} {} {} {}'.format(name, arr.dtype.newbyteorder('<').str, shape, offset, len(raw)))
        payload.append(raw)
        offset += len(raw)
    lines.append('END')

    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory):
        os.makedirs(directory)
    tmp = path + '.tmp'
    with open(tmp, 'wb') as f:
        f.write(('\n'.join(lines) + '\n').encode('ascii'))
        for raw in payload:
            f.write(raw)
    os.replace(tmp, path)
    if utils.PLEVEL >= 2: utils.vprint(2, 'wrote checkpoint {} ({} arrays, {} bytes)', path, len(payload), offset)


def load_checkpoint(path):
    '''Read a checkpoint written by `save_checkpoint`

    Returns:
        dict: name -> np.ndarray, in file order
    '''
    if not os.path.isfile(path):
        raise DataError('checkpoint not found: {}'.format(path))
    with open(path, 'rb') as f:
        blob = f.read()

    header = []
    pos = 0
    while True:
        end = blob.find(b'\n', pos)
        if end < 0:
            raise DataError('{}: checkpoint header is not terminated'.format(path))
        line = blob[pos:end].decode('ascii', errors='replace')
        pos = end + 1
        if line == 'END':
            break
        header.append(line)
    if not header or header[0] != MAGIC:
        raise DataError('{}: not an esnet checkpoint'.format(path))

    payload = blob[pos:]
    arrays = {}
    for line in header[1:]:
        try:
            name, dtype, shape, offset, nbytes = line.split(' ')
            shape = tuple(int(d) for d in shape.split(',') if d and d != '-')
            offset, nbytes = int(offset), int(nbytes)
            dtype = np.dtype(dtype)
        except (ValueError, TypeError):
            raise DataError('{}: malformed checkpoint header line {!r}'.format(path, line))
        if offset + nbytes > len(payload):
            raise DataError('{}: payload for {} is truncated'.format(path, name))
        arr = np.frombuffer(payload[offset:offset + nbytes], dtype=dtype).reshape(shape)
        arrays[name] = arr.astype(dtype.newbyteorder('='))
    return arrays


def params_to_arrays(params):
    return {name: t.data for name, t in params.items()}


def restore_params(params, arrays):
    '''Copy ``arrays`` into the Tensors of ``params``; names and shapes must match'''
    missing = sorted(set(params) - set(arrays))
    extra = sorted(set(arrays) - set(params))
    if missing or extra:
        raise DataError('checkpoint does not match the model (missing: {}, unexpected: {})'.format(
            missing[:5], extra[:5]))
    for name, t in params.items():
        if arrays[name].shape != t.shape:
            raise DataError('checkpoint array {} has shape {}, model expects {}'.format(
                name, arrays[name].shape, t.shape))
        t.data[...] = arrays[name]
