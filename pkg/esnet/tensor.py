'''Dense 4-D tensors with tape-based reverse-mode differentiation.

Every value flowing through the network is a `Tensor` of shape
(batch, channels, height, width). Operations are `Function` subclasses whose
numpy ``forward``/``backward`` rules are recorded on the current
`ComputationGraph` whenever one of their inputs requires a gradient.
`backward` then replays that record once, newest operation first.

Graphs are per thread: the graph a thread records on is single-writer, while
finished tensors can be shared read-only between threads.
'''
import numbers
import threading
from contextlib import contextmanager

import numpy as np

from esnet import utils
from esnet.exceptions import GraphError, NumericalError, ShapeError

# Raise NumericalError as soon as an op produces NaN/Inf
CHECK_FINITE = True

LEAKY_SLOPE = 0.1


class Tensor(object):
    '''A 4-D float array plus an optional gradient buffer

    Attributes:
        data (np.ndarray): contiguous float32/float64 array, row-major NCHW
        requires_grad (bool): whether backward populates `grad`
        node (Node): the graph record that produced this tensor, None for leaves

    Args:
        data (array-like): values; must be 4-D
        requires_grad (bool): track gradients for this tensor
        dtype (np.dtype, optional): float32 unless the input already is float64
    '''
    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = np.float64 if arr.dtype == np.float64 else np.float32
        arr = np.ascontiguousarray(arr, dtype=dtype)
        if arr.ndim != 4:
            raise ShapeError('Tensor data must be 4-D (batch, channels, height, width), got shape {}'.format(
                arr.shape))
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node = None
        self._grad = np.zeros_like(arr) if self.requires_grad else None

    @classmethod
    def zeros(cls, shape, dtype=np.float32, requires_grad=False):
        return cls(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)

    @classmethod
    def ones(cls, shape, dtype=np.float32, requires_grad=False):
        return cls(np.ones(shape, dtype=dtype), requires_grad=requires_grad)

    @classmethod
    def full(cls, shape, value, dtype=np.float32):
        return cls(np.full(shape, value, dtype=dtype))

    @classmethod
    def scalar(cls, value, dtype=np.float32):
        return cls(np.full((1, 1, 1, 1), value, dtype=dtype))

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def grad(self):
        '''Gradient buffer, same shape as `data`; None unless requires_grad'''
        if not self.requires_grad:
            return None
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    def zero_grad(self):
        if self.requires_grad:
            self._grad = np.zeros_like(self.data)

    def _accumulate(self, g):
        if self._grad is None:
            self._grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self._grad += g

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ShapeError('item() needs a single-element tensor, got shape {}'.format(self.shape))
        return float(self.data.reshape(-1)[0])

    def detach(self):
        '''Same values, no graph history, no gradient'''
        return Tensor(self.data, requires_grad=False, dtype=self.dtype)

    def astype(self, dtype):
        return Tensor(self.data.astype(dtype), requires_grad=False, dtype=dtype)

    def __repr__(self):
        return 'Tensor(shape={}, dtype={}, requires_grad={})'.format(
            self.shape, self.dtype, self.requires_grad)

    def __add__(self, other):
        return elementwise('add', self, other)

    def __radd__(self, other):
        return elementwise('add', self, other)

    def __sub__(self, other):
        return elementwise('sub', self, other)

    def __rsub__(self, other):
        return elementwise('add', elementwise('neg', self), other)

    def __mul__(self, other):
        return elementwise('mul', self, other)

    def __rmul__(self, other):
        return elementwise('mul', self, other)

    def __truediv__(self, other):
        return elementwise('div', self, other)

    def __neg__(self):
        return elementwise('neg', self)

    def __abs__(self):
        return elementwise('abs', self)

    def __getitem__(self, key):
        return Slice(key=key)(self)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)


class Node(object):
    '''One executed operation on a `ComputationGraph`'''
    __slots__ = ('fn', 'inputs', 'output', 'graph', 'index')

    def __init__(self, fn, inputs, output, graph, index):
        self.fn = fn
        self.inputs = inputs
        self.output = output
        self.graph = graph
        self.index = index


class ComputationGraph(object):
    '''Ordered record of executed operations

    Nodes are appended in execution order, which is a topological order by
    construction. `backward` walks them in reverse exactly once; afterwards the
    graph is consumed and its saved buffers are released.

    Attributes:
        nodes (list): executed `Node`s, oldest first
        consumed (bool): True once backward has run
    '''
    def __init__(self):
        self.nodes = []
        self.consumed = False

    def __len__(self):
        return len(self.nodes)

    def record(self, fn, inputs, output):
        if self.consumed:
            raise GraphError('cannot record {} on a consumed graph'.format(fn.name))
        node = Node(fn, inputs, output, self, len(self.nodes))
        self.nodes.append(node)
        output.node = node
        return node

    def count(self, op_name):
        '''Number of recorded operations named ``op_name``'''
        return sum(1 for node in self.nodes if node.fn is not None and node.fn.name == op_name)

    def op_names(self):
        return [node.fn.name for node in self.nodes if node.fn is not None]

    def backward(self, loss):
        if self.consumed:
            raise GraphError('graph already consumed by a previous backward()')
        loss._grad = np.ones_like(loss.data)
        for node in reversed(self.nodes[:loss.node.index + 1]):
            g = node.output._grad
            if g is None:
                continue
            input_grads = node.fn.backward(g)
            for tensor, tg in zip(node.inputs, input_grads):
                if tg is None or not tensor.requires_grad:
                    continue
                if CHECK_FINITE and not np.all(np.isfinite(tg)):
                    raise NumericalError('backward of {} produced non-finite gradients'.format(node.fn.name))
                tensor._accumulate(tg)
        self.release()

    def release(self):
        self.consumed = True
        for node in self.nodes:
            node.fn = None
        if utils.PLEVEL >= 3: utils.vprint(3, 'released graph with {} nodes', len(self.nodes))


_state = threading.local()


def _graph_state():
    if not hasattr(_state, 'graph'):
        _state.graph = None
        _state.enabled = True
    return _state


def current_graph():
    '''The graph this thread records on, replaced once it is consumed'''
    state = _graph_state()
    if state.graph is None or state.graph.consumed:
        state.graph = ComputationGraph()
    return state.graph


def is_recording():
    return _graph_state().enabled


@contextmanager
def no_grad():
    '''Run operations without recording them (inference, finite differences)'''
    state = _graph_state()
    previous = state.enabled
    state.enabled = False
    try:
        yield
    finally:
        state.enabled = previous


@contextmanager
def recording(graph=None):
    '''Record onto a fresh (or given) graph for the duration of the block

    Yields:
        ComputationGraph: the graph operations inside the block are recorded on
    '''
    state = _graph_state()
    previous_graph, previous_enabled = state.graph, state.enabled
    state.graph = graph if graph is not None else ComputationGraph()
    state.enabled = True
    try:
        yield state.graph
    finally:
        state.graph, state.enabled = previous_graph, previous_enabled


def backward(loss):
    '''Populate ``grad`` of every requires_grad tensor that ``loss`` depends on

    Gradients accumulate additively, both across multiple uses of one tensor
    and across calls; call ``zero_grad`` between optimizer steps.

    Args:
        loss (Tensor): scalar of shape (1, 1, 1, 1)
    '''
    if not isinstance(loss, Tensor):
        raise GraphError('backward() expects a Tensor, got {}'.format(type(loss).__name__))
    if loss.shape != (1, 1, 1, 1):
        raise GraphError('loss must be a scalar of shape (1, 1, 1, 1), got {}'.format(loss.shape))
    if loss.node is None:
        if loss.requires_grad:
            loss._accumulate(np.ones_like(loss.data))
            return
        raise GraphError('loss was not produced by a recorded graph')
    loss.node.graph.backward(loss)


def as_tensor(value, like=None):
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(value, dtype=dtype)


def to_array(value):
    '''The ndarray behind a Tensor, or ``value`` as an ndarray'''
    if isinstance(value, Tensor):
        return value.data
    return np.asarray(value)


class Function(object):
    '''Base class for differentiable operations

    Subclasses implement ``forward(*arrays)`` returning an ndarray and
    ``backward(grad)`` returning one gradient (or None) per input. Keyword
    arguments given to the constructor become attributes.
    '''
    name = 'Function'

    def __init__(self, **kwargs):
        for key, value in kwargs.items():
            setattr(self, key, value)

    def forward(self, *arrays):
        raise NotImplementedError('forward not implemented for {}'.format(self.name))

    def backward(self, grad):
        raise NotImplementedError('backward not implemented for {}'.format(self.name))

    def __call__(self, *inputs):
        tensors = tuple(as_tensor(t) for t in inputs)
        out_data = self.forward(*(t.data for t in tensors))
        if CHECK_FINITE and not np.all(np.isfinite(out_data)):
            raise NumericalError('{} produced non-finite values'.format(self.name))
        out = Tensor(out_data, dtype=out_data.dtype)
        if is_recording() and any(t.requires_grad for t in tensors):
            out.requires_grad = True
            current_graph().record(self, tensors, out)
        return out


def _check_broadcast(a_shape, b_shape):
    if a_shape == b_shape or b_shape == (1, 1, 1, 1) or a_shape == (1, 1, 1, 1):
        return
    for axis, label in enumerate(('batch', 'channel', 'height', 'width')):
        if a_shape[axis] == b_shape[axis]:
            continue
        if axis == 1 and (a_shape[1] == 1 or b_shape[1] == 1):
            continue
        raise ShapeError('cannot broadcast {} against {}: {} dimension {} != {}'.format(
            a_shape, b_shape, label, a_shape[axis], b_shape[axis]))


def unbroadcast(grad, shape):
    '''Sum ``grad`` over the axes that were broadcast to reach its shape'''
    if grad.shape == shape:
        return grad
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    return grad.sum(axis=axes, keepdims=True)


class Add(Function):
    name = 'Add'

    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(grad, self.shapes[1])


class Sub(Function):
    name = 'Sub'

    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    name = 'Mul'

    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return unbroadcast(grad * self.b, self.a.shape), unbroadcast(grad * self.a, self.b.shape)


class Div(Function):
    name = 'Div'

    def forward(self, a, b):
        self.a, self.b = a, b
        return a / b

    def backward(self, grad):
        ga = grad / self.b
        gb = -grad * self.a / (self.b * self.b)
        return unbroadcast(ga, self.a.shape), unbroadcast(gb, self.b.shape)


class ShiftScalar(Function):
    name = 'ShiftScalar'

    def forward(self, x):
        return x + x.dtype.type(self.value)

    def backward(self, grad):
        return (grad,)


class ScaleScalar(Function):
    name = 'ScaleScalar'

    def forward(self, x):
        self.factor_ = x.dtype.type(self.value)
        return x * self.factor_

    def backward(self, grad):
        return (grad * self.factor_,)


class DivScalar(Function):
    name = 'DivScalar'

    def forward(self, x):
        self.divisor_ = x.dtype.type(self.value)
        return x / self.divisor_

    def backward(self, grad):
        return (grad / self.divisor_,)


class Neg(Function):
    name = 'Neg'

    def forward(self, x):
        return -x

    def backward(self, grad):
        return (-grad,)


class Abs(Function):
    name = 'Abs'

    def forward(self, x):
        self.sign = np.sign(x)
        return np.abs(x)

    def backward(self, grad):
        return (grad * self.sign,)


class Exp(Function):
    name = 'Exp'

    def forward(self, x):
        self.out = np.exp(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Sigmoid(Function):
    name = 'Sigmoid'

    def forward(self, x):
        half = x.dtype.type(0.5)
        self.out = half * (1 + np.tanh(half * x))
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1 - self.out),)


class LeakyReLU(Function):
    name = 'LeakyReLU'

    def forward(self, x):
        self.positive = x > 0
        return np.where(self.positive, x, x * x.dtype.type(self.slope))

    def backward(self, grad):
        return (np.where(self.positive, grad, grad * grad.dtype.type(self.slope)),)


class Square(Function):
    name = 'Square'

    def forward(self, x):
        self.x = x
        return x * x

    def backward(self, grad):
        return (2 * grad * self.x,)


_BINARY = {'add': Add, 'sub': Sub, 'mul': Mul, 'div': Div}
_SCALAR = {'add': ShiftScalar, 'mul': ScaleScalar, 'div': DivScalar}
_UNARY = {'neg': Neg, 'abs': Abs, 'exp': Exp, 'sigmoid': Sigmoid, 'square': Square}


def elementwise(op_kind, a, b=None):
    '''Pointwise op with channel broadcasting

    Args:
        op_kind (str): one of add, sub, mul, div, neg, abs, exp, sigmoid,
            square, leaky_relu
        a (Tensor): first operand
        b (Tensor or float, optional): second operand for binary kinds; a
            tensor must match ``a`` or differ only by a channel size of 1

    Returns:
        Tensor
    '''
    a = as_tensor(a)
    if op_kind == 'leaky_relu':
        return LeakyReLU(slope=LEAKY_SLOPE if b is None else float(b))(a)
    if op_kind in _UNARY:
        return _UNARY[op_kind]()(a)
    if op_kind not in _BINARY:
        raise ValueError('unknown elementwise op {!r}'.format(op_kind))
    if b is None:
        raise ValueError('{} needs a second operand'.format(op_kind))
    if isinstance(b, numbers.Number):
        if op_kind == 'sub':
            return ShiftScalar(value=-b)(a)
        return _SCALAR[op_kind](value=b)(a)
    b = as_tensor(b, like=a)
    _check_broadcast(a.shape, b.shape)
    return _BINARY[op_kind]()(a, b)


def add(a, b):
    return elementwise('add', a, b)


def sub(a, b):
    return elementwise('sub', a, b)


def mul(a, b):
    return elementwise('mul', a, b)


def div(a, b):
    return elementwise('div', a, b)


def absolute(x):
    return elementwise('abs', x)


def exp(x):
    return elementwise('exp', x)


def sigmoid(x):
    return elementwise('sigmoid', x)


def square(x):
    return elementwise('square', x)


def leaky_relu(x, slope=LEAKY_SLOPE):
    return elementwise('leaky_relu', x, slope)


class SumAll(Function):
    name = 'SumAll'

    def forward(self, x):
        self.in_shape = x.shape
        return np.full((1, 1, 1, 1), x.sum(), dtype=x.dtype)

    def backward(self, grad):
        return (np.broadcast_to(grad, self.in_shape).copy(),)


class ChannelMean(Function):
    name = 'ChannelMean'

    def forward(self, x):
        self.in_shape = x.shape
        return x.mean(axis=1, keepdims=True)

    def backward(self, grad):
        return (np.broadcast_to(grad / self.in_shape[1], self.in_shape).copy(),)


def sum_all(x):
    '''Sum of every element, as a (1, 1, 1, 1) tensor'''
    return SumAll()(x)


def mean_all(x):
    return DivScalar(value=float(x.data.size))(SumAll()(x))


def channel_mean(x):
    '''Mean over the channel axis, keeping it as size 1'''
    return ChannelMean()(x)


def _normalize_key(key):
    if not isinstance(key, tuple):
        key = (key,)
    if len(key) > 4:
        raise ShapeError('too many indices for a 4-D tensor: {}'.format(len(key)))
    out = []
    for k in key:
        if isinstance(k, numbers.Integral):
            k = slice(int(k), int(k) + 1 if k != -1 else None)
        elif not isinstance(k, slice):
            raise ShapeError('only slices and integers may index a Tensor, got {!r}'.format(k))
        out.append(k)
    return tuple(out) + (slice(None),) * (4 - len(out))


class Slice(Function):
    name = 'Slice'

    def forward(self, x):
        self.key_ = _normalize_key(self.key)
        self.in_shape = x.shape
        return np.ascontiguousarray(x[self.key_])

    def backward(self, grad):
        full = np.zeros(self.in_shape, dtype=grad.dtype)
        full[self.key_] += grad
        return (full,)


class ConcatChannels(Function):
    name = 'ConcatChannels'

    def forward(self, *arrays):
        self.splits = np.cumsum([a.shape[1] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=1)

    def backward(self, grad):
        return tuple(np.ascontiguousarray(g) for g in np.split(grad, self.splits, axis=1))


def concat_channels(tensors):
    '''Concatenate tensors along the channel axis, preserving order

    Args:
        tensors (list of Tensor): share batch, height and width

    Returns:
        Tensor: channel count is the sum of the inputs'
    '''
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError('concat_channels needs at least one tensor')
    b, _, h, w = tensors[0].shape
    for i, t in enumerate(tensors[1:], 1):
        if (t.shape[0], t.shape[2], t.shape[3]) != (b, h, w):
            raise ShapeError('concat_channels input {} has shape {}, expected batch/height/width {}'.format(
                i, t.shape, (b, h, w)))
    return ConcatChannels()(*tensors)
