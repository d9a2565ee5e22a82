'''Adam, in a functional form over named arrays and as a stateful wrapper
around a parameter dict.
'''
import numpy as np

from esnet import utils
from esnet.exceptions import ShapeError

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


def init_adam_state(params):
    '''Zero moment buffers and step counter for ``params`` (name -> ndarray)'''
    return {
        'step': 0,
        'm': {name: np.zeros_like(p) for name, p in params.items()},
        'v': {name: np.zeros_like(p) for name, p in params.items()},
    }


def adam_step(params, grads, state, lr, beta1=BETA1, beta2=BETA2, eps=EPS):
    '''One bias-corrected Adam update

    Args:
        params (dict): name -> np.ndarray, updated in place
        grads (dict): name -> np.ndarray, same keys and shapes as ``params``
        state (dict): from `init_adam_state`, updated in place
        lr (float): learning rate
        beta1 (float): first moment decay
        beta2 (float): second moment decay
        eps (float): denominator guard

    Returns:
        (dict, dict): ``params`` and ``state``
    '''
    for name, p in params.items():
        if name not in grads:
            raise ShapeError('no gradient for parameter {}'.format(name))
        if grads[name].shape != p.shape:
            raise ShapeError('gradient for {} has shape {}, parameter has {}'.format(
                name, grads[name].shape, p.shape))

    state['step'] += 1
    t = state['step']
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads[name]
        m = state['m'][name]
        v = state['v'][name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
        p -= update.astype(p.dtype, copy=False)
    return params, state


class Adam(object):
    '''Adam over a dict of requires_grad `Tensor`s

    Args:
        params (dict): name -> Tensor
        lr (float): learning rate, changeable between steps via ``lr``
        beta1 (float): first moment decay
        beta2 (float): second moment decay
        eps (float): denominator guard
    '''
    def __init__(self, params, lr=1e-4, beta1=BETA1, beta2=BETA2, eps=EPS):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.reset()

    def reset(self):
        '''Forget the moment estimates (a new training round starts clean)'''
        self.state = init_adam_state({name: t.data for name, t in self.params.items()})

    @property
    def step_count(self):
        return self.state['step']

    def step(self):
        arrays = {name: t.data for name, t in self.params.items()}
        grads = {name: t.grad for name, t in self.params.items()}
        adam_step(arrays, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)
        if utils.PLEVEL >= 3: utils.vprint(3, 'adam step {} lr {:g}', self.state['step'], self.lr)

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()
