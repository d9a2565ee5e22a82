import numpy as np
import pytest

from esnet.exceptions import ShapeError
from esnet.optim import Adam, adam_step, init_adam_state
from esnet.tensor import Tensor, backward, recording, square, sum_all


def test_first_step_moves_by_lr():
    # bias correction makes the first update lr * sign(g)
    params = {'w': np.array([1.0, -2.0, 3.0])}
    grads = {'w': np.array([0.5, -4.0, 0.0])}
    state = init_adam_state(params)
    adam_step(params, grads, state, lr=0.1)
    np.testing.assert_allclose(params['w'], [0.9, -1.9, 3.0], atol=1e-6)
    assert state['step'] == 1


def test_missing_or_mismatched_gradient():
    params = {'w': np.zeros(3)}
    state = init_adam_state(params)
    with pytest.raises(ShapeError):
        adam_step(params, {}, state, lr=0.1)
    with pytest.raises(ShapeError):
        adam_step(params, {'w': np.zeros(2)}, state, lr=0.1)
    assert state['step'] == 0


def test_adam_minimizes_quadratic():
    w = Tensor(np.full((1, 1, 1, 4), 5.0), requires_grad=True, dtype=np.float64)
    opt = Adam({'w': w}, lr=0.1)
    for _ in range(500):
        opt.zero_grad()
        with recording():
            backward(sum_all(square(w)))
        opt.step()
    assert opt.step_count == 500
    assert np.all(np.abs(w.data) < 0.1)


def test_reset_clears_moments():
    w = Tensor(np.ones((1, 1, 1, 2)), requires_grad=True, dtype=np.float64)
    opt = Adam({'w': w}, lr=0.01)
    with recording():
        backward(sum_all(square(w)))
    opt.step()
    assert opt.step_count == 1
    opt.reset()
    assert opt.step_count == 0
    np.testing.assert_array_equal(opt.state['m']['w'], 0.0)
