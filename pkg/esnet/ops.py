'''Convolution and resampling kernels on top of `esnet.tensor`.

conv2d is an im2col-free implementation: the padded input is viewed as
sliding k x k windows and contracted against the weight with tensordot; the
input gradient scatters the per-tap products back (col2im), looping only over
the k*k taps. conv_transpose2d is the adjoint of that map, so both share the
same three kernels.

Resampling (bilinear resize, 3x3 box filtering) is separable and linear, so it
is expressed as ``Ry @ x @ Rx.T`` with small dense interpolation matrices.
'''
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from esnet.exceptions import ShapeError
from esnet.tensor import Function, Tensor, as_tensor, elementwise, LEAKY_SLOPE


def conv_output_size(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


def conv_transpose_output_size(size, k, stride, padding):
    return (size - 1) * stride - 2 * padding + k


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _windows(x, k, stride, padding):
    '''(B, C, Ho, Wo, k, k) strided view of the padded input'''
    xp = _pad(x, padding)
    return sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]


def _conv_forward(x, w, stride, padding):
    win = _windows(x, w.shape[2], stride, padding)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _conv_input_grad(g, w, stride, padding, in_h, in_w):
    '''col2im: adjoint of `_conv_forward` with respect to its input'''
    k = w.shape[2]
    b, _, ho, wo = g.shape
    cols = np.tensordot(g, w, axes=([1], [0]))  # (B, Ho, Wo, C, k, k)
    dxp = np.zeros((b, w.shape[1], in_h + 2 * padding, in_w + 2 * padding), dtype=g.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if padding:
        dxp = dxp[:, :, padding:padding + in_h, padding:padding + in_w]
    return np.ascontiguousarray(dxp)


def _conv_weight_grad(g, x, k, stride, padding):
    win = _windows(x, k, stride, padding)
    return np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))


class Conv2d(Function):
    name = 'Conv2d'

    def forward(self, x, w, b):
        self.x, self.w = x, w
        out = _conv_forward(x, w, self.stride, self.padding)
        return out + b

    def backward(self, grad):
        gx = _conv_input_grad(grad, self.w, self.stride, self.padding, self.x.shape[2], self.x.shape[3])
        gw = _conv_weight_grad(grad, self.x, self.w.shape[2], self.stride, self.padding)
        gb = grad.sum(axis=(0, 2, 3), keepdims=True).reshape(1, -1, 1, 1)
        return gx, gw.astype(grad.dtype, copy=False), gb


class ConvTranspose2d(Function):
    name = 'ConvTranspose2d'

    def forward(self, y, w, b):
        self.y, self.w = y, w
        out_h = conv_transpose_output_size(y.shape[2], w.shape[2], self.stride, self.padding)
        out_w = conv_transpose_output_size(y.shape[3], w.shape[3], self.stride, self.padding)
        out = _conv_input_grad(y, w, self.stride, self.padding, out_h, out_w)
        return out + b

    def backward(self, grad):
        gy = _conv_forward(grad, self.w, self.stride, self.padding)
        gw = _conv_weight_grad(self.y, grad, self.w.shape[2], self.stride, self.padding)
        gb = grad.sum(axis=(0, 2, 3), keepdims=True).reshape(1, -1, 1, 1)
        return gy, gw.astype(grad.dtype, copy=False), gb


def _zero_bias(channels, like):
    return Tensor(np.zeros((1, channels, 1, 1), dtype=like.dtype))


def _check_bias(bias, channels):
    if bias.shape != (1, channels, 1, 1):
        raise ShapeError('bias must have shape (1, {}, 1, 1), got {}'.format(channels, bias.shape))


def conv2d(input, weight, bias=None, stride=1, padding=0):
    '''2-D cross-correlation, differentiable in input, weight and bias

    Args:
        input (Tensor): (B, C_in, H, W)
        weight (Tensor): (C_out, C_in, k, k)
        bias (Tensor, optional): (1, C_out, 1, 1)
        stride (int): >= 1
        padding (int): zero padding on every side, >= 0

    Returns:
        Tensor: (B, C_out, floor((H + 2p - k) / s) + 1, ...)
    '''
    input, weight = as_tensor(input), as_tensor(weight)
    c_out, c_in, kh, kw = weight.shape
    if kh != kw:
        raise ShapeError('conv2d kernels must be square, got {}x{}'.format(kh, kw))
    if input.shape[1] != c_in:
        raise ShapeError('conv2d input has {} channels but weight expects C_in={}'.format(input.shape[1], c_in))
    if stride < 1 or padding < 0:
        raise ShapeError('conv2d needs stride >= 1 and padding >= 0, got stride={} padding={}'.format(
            stride, padding))
    for axis, label in ((2, 'height'), (3, 'width')):
        if input.shape[axis] + 2 * padding < kh:
            raise ShapeError('conv2d {} {} (+2*{} padding) is smaller than kernel size {}'.format(
                label, input.shape[axis], padding, kh))
    bias = _zero_bias(c_out, input) if bias is None else as_tensor(bias)
    _check_bias(bias, c_out)
    return Conv2d(stride=int(stride), padding=int(padding))(input, weight, bias)


def conv_transpose2d(input, weight, bias=None, stride=2, padding=0):
    '''Transposed convolution (adjoint of conv2d in its input)

    Args:
        input (Tensor): (B, C_in, H, W)
        weight (Tensor): (C_in, C_out, k, k)
        bias (Tensor, optional): (1, C_out, 1, 1)
        stride (int): 1 or 2
        padding (int): >= 0

    Returns:
        Tensor: (B, C_out, (H - 1) * stride - 2 * padding + k, ...)
    '''
    input, weight = as_tensor(input), as_tensor(weight)
    c_in, c_out, kh, kw = weight.shape
    if kh != kw:
        raise ShapeError('conv_transpose2d kernels must be square, got {}x{}'.format(kh, kw))
    if input.shape[1] != c_in:
        raise ShapeError('conv_transpose2d input has {} channels but weight expects C_in={}'.format(
            input.shape[1], c_in))
    if stride not in (1, 2):
        raise ShapeError('conv_transpose2d stride must be 1 or 2, got {}'.format(stride))
    if padding < 0:
        raise ShapeError('conv_transpose2d padding must be >= 0, got {}'.format(padding))
    for axis, label in ((2, 'height'), (3, 'width')):
        if conv_transpose_output_size(input.shape[axis], kh, stride, padding) < 1:
            raise ShapeError('conv_transpose2d output {} would be empty'.format(label))
    bias = _zero_bias(c_out, input) if bias is None else as_tensor(bias)
    _check_bias(bias, c_out)
    return ConvTranspose2d(stride=int(stride), padding=int(padding))(input, weight, bias)


class SeparableLinear(Function):
    '''out = Ry @ x @ Rx.T applied to every (batch, channel) plane'''
    name = 'SeparableLinear'

    def forward(self, x):
        self.ry_ = self.ry.astype(x.dtype, copy=False)
        self.rx_ = self.rx.astype(x.dtype, copy=False)
        return np.matmul(np.matmul(self.ry_, x), self.rx_.T)

    def backward(self, grad):
        return (np.matmul(np.matmul(self.ry_.T, grad), self.rx_),)


def interpolation_matrix(in_size, out_size):
    '''1-D linear interpolation weights, align-corners-false, border clamped

    Row i holds the weights of output sample i, whose source coordinate is
    ``(i + 0.5) * in_size / out_size - 0.5`` clamped to ``[0, in_size - 1]``.
    '''
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * (in_size / out_size) - 0.5
    src = np.clip(src, 0, in_size - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, in_size - 1)
    w1 = src - i0
    m = np.zeros((out_size, in_size), dtype=np.float64)
    rows = np.arange(out_size)
    np.add.at(m, (rows, i0), 1.0 - w1)
    np.add.at(m, (rows, i1), w1)
    return m


def bilinear_resize(input, out_h, out_w, disparity=False):
    '''Bilinear resampling to (out_h, out_w), align-corners-false

    Args:
        input (Tensor): (B, C, H, W)
        out_h (int): output height, >= 1
        out_w (int): output width, >= 1
        disparity (bool): the input is a disparity map; values are multiplied
            by out_w / W so they stay in output-pixel units

    Returns:
        Tensor: (B, C, out_h, out_w)
    '''
    input = as_tensor(input)
    if out_h < 1 or out_w < 1:
        raise ShapeError('bilinear_resize output size must be >= 1, got {}x{}'.format(out_h, out_w))
    _, _, h, w = input.shape
    out = SeparableLinear(ry=interpolation_matrix(h, out_h), rx=interpolation_matrix(w, out_w))(input)
    if disparity and out_w != w:
        out = elementwise('mul', out, float(out_w) / float(w))
    return out


def _reflect_box_matrix(size):
    '''3-tap mean with reflected borders (replicated when size == 1)'''
    m = np.zeros((size, size), dtype=np.float64)
    for i in range(size):
        for j in (i - 1, i, i + 1):
            if size == 1:
                j = 0
            elif j < 0:
                j = -j
            elif j >= size:
                j = 2 * (size - 1) - j
            m[i, j] += 1.0 / 3.0
    return m


def box_filter3(input):
    '''3x3 mean filter with reflection padding, same output size'''
    input = as_tensor(input)
    _, _, h, w = input.shape
    return SeparableLinear(ry=_reflect_box_matrix(h), rx=_reflect_box_matrix(w))(input)


def _block_mean_matrix(size, factor):
    m = np.zeros((size // factor, size), dtype=np.float64)
    for i in range(size // factor):
        m[i, i * factor:(i + 1) * factor] = 1.0 / factor
    return m


def avg_pool(input, factor):
    '''Non-overlapping ``factor`` x ``factor`` mean pooling

    Args:
        input (Tensor): (B, C, H, W) with H and W divisible by ``factor``
        factor (int): pooling size, >= 1

    Returns:
        Tensor: (B, C, H / factor, W / factor)
    '''
    input = as_tensor(input)
    if factor < 1:
        raise ShapeError('avg_pool factor must be >= 1, got {}'.format(factor))
    if factor == 1:
        return input
    _, _, h, w = input.shape
    if h % factor or w % factor:
        raise ShapeError('avg_pool input {}x{} is not divisible by {}'.format(h, w, factor))
    return SeparableLinear(ry=_block_mean_matrix(h, factor), rx=_block_mean_matrix(w, factor))(input)


def he_std(fan_in, slope=LEAKY_SLOPE):
    return np.sqrt(2.0 / ((1.0 + slope ** 2) * fan_in))


def init_conv(params, name, c_out, c_in, k, rng, dtype=np.float32, scale=1.0):
    '''Add ``name.weight`` (He fan-in) and ``name.bias`` (zeros) to ``params``'''
    std = scale * he_std(c_in * k * k)
    params[name + '.weight'] = Tensor(rng.normal(0.0, std, (c_out, c_in, k, k)), requires_grad=True, dtype=dtype)
    params[name + '.bias'] = Tensor(np.zeros((1, c_out, 1, 1)), requires_grad=True, dtype=dtype)


def init_conv_transpose(params, name, c_in, c_out, k, rng, dtype=np.float32):
    '''Transposed-conv parameters; fan-in counts the taps hitting one output'''
    std = he_std(c_in * k * k / 4.0)
    params[name + '.weight'] = Tensor(rng.normal(0.0, std, (c_in, c_out, k, k)), requires_grad=True, dtype=dtype)
    params[name + '.bias'] = Tensor(np.zeros((1, c_out, 1, 1)), requires_grad=True, dtype=dtype)


def apply_conv(params, name, x, stride=1, padding=None):
    '''conv2d with ``params[name.weight]``; 'same' padding by default'''
    w = params[name + '.weight']
    if padding is None:
        padding = w.shape[2] // 2
    return conv2d(x, w, params[name + '.bias'], stride=stride, padding=padding)
