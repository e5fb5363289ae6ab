import numpy as np
import pytest

from ddxt.errors import DimensionError, ParameterError
from ddxt.optim import Adam, AdamState, adam_step
from ddxt.tensor import Tensor, backward


def test_zero_gradient_leaves_param_unchanged():
    p = Tensor(np.array([0.5, -1.0]), dtype=np.float64)
    adam_step(p, np.zeros(2), AdamState.zeros_like(p), lr=0.1)
    assert p.data.tolist() == [0.5, -1.0]


def test_first_step_moves_by_lr():
    # bias-corrected m_hat / sqrt(v_hat) is exactly 1 after one step with grad 1
    p = Tensor(np.array(2.0), dtype=np.float64)
    adam_step(p, np.array(1.0), AdamState.zeros_like(p), lr=1e-3)
    assert p.data == pytest.approx(2.0 - 1e-3 / (1 + 1e-8), abs=1e-12)


def test_descends_on_quadratic():
    x = Tensor(np.array([1.0]), requires_grad=True, dtype=np.float64)
    opt = Adam()
    for _ in range(100):
        x.grad = None
        backward((x * x).sum())
        opt.step({"x": x}, lr=1e-2)
    assert abs(x.data[0]) < 1.0
    assert opt.step_count == 100


def test_shape_mismatch_and_negative_lr():
    p = Tensor(np.zeros(3))
    with pytest.raises(DimensionError):
        adam_step(p, np.zeros(2), AdamState.zeros_like(p), 0.1)
    with pytest.raises(ParameterError):
        adam_step(p, np.zeros(3), AdamState.zeros_like(p), -1.0)


def test_params_without_grad_are_skipped():
    a, b = Tensor(np.ones(2), requires_grad=True), Tensor(np.ones(2), requires_grad=True)
    a.grad = np.ones(2, dtype=np.float32)
    opt = Adam()
    opt.step({"a": a, "b": b}, 0.1)
    assert set(opt.states) == {"a"} and b.data.tolist() == [1.0, 1.0]
