import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def finite_difference_grad(loss_fn, arrays, index, element, h=1e-5):
    """Central-difference gradient of a scalar loss in one array element."""
    plus = [a.copy() for a in arrays]
    minus = [a.copy() for a in arrays]
    plus[index][element] += h
    minus[index][element] -= h
    return (loss_fn(plus) - loss_fn(minus)) / (2.0 * h)


def max_rel_grad_error(loss_and_grads, arrays, samples_per_array=6, h=1e-5, seed=99):
    """Compare tape gradients against central finite differences.

    `loss_and_grads(arrays)` returns (loss_value, [grad per array]).
    Returns the max relative error over sampled elements.
    """
    rng = np.random.default_rng(seed)
    _, grads = loss_and_grads(arrays)

    def loss_only(arrs):
        return loss_and_grads(arrs)[0]

    worst = 0.0
    for ai, arr in enumerate(arrays):
        if grads[ai] is None:
            continue
        n = min(samples_per_array, arr.size)
        flat_choices = rng.choice(arr.size, size=n, replace=False)
        for flat in flat_choices:
            element = np.unravel_index(flat, arr.shape)
            fd = finite_difference_grad(loss_only, arrays, ai, element, h=h)
            err = abs(grads[ai][element] - fd) / max(abs(fd), 1e-8)
            worst = max(worst, err)
    return worst
