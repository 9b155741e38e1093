import numpy as np
import pytest

from twins.oracles import central_difference, rel_error
from twins.tensor import Tensor, backward


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def leaf(arr):
    return Tensor(np.array(arr, dtype=np.float64), requires_grad=True)


def fd_error(build_loss, *arrays, h=1e-5):
    """Worst relative error between autodiff and central differences over ``arrays``."""
    tensors = [leaf(a) for a in arrays]
    loss = build_loss(*tensors)
    backward(loss)
    worst = 0.0
    for t in tensors:
        data = np.array(t.data)
        t.data = data

        def f():
            return float(build_loss(*tensors).data)

        worst = max(worst, rel_error(t.grad, central_difference(f, data, h)))
    return worst
