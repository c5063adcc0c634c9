"""Shared builders and oracles for the test suite."""

import numpy as np
import pytest

from tascforge.nn.model import forward, init_model
from tascforge.nn.regularizer import FilterPair
from tascforge.nn.spec import Conv, Dense, Dropout, Flatten, MaxPool, NetworkSpec, Output
from tascforge.nn.train import loss_and_grads, one_hot


def grad_net(batchnorm=True):
    """2 conv + pool + 1 dense toy net touching every layer kind."""
    return NetworkSpec(
        (
            Conv(3, 4, "TanH", batchnorm=batchnorm),
            MaxPool(2, 1),
            Conv(2, 3, "ELU"),
            Flatten(),
            Dense(5, "SELU", batchnorm=batchnorm),
            Dropout(0.3),
            Output(3),
        ),
        (7, 7, 2),
    )


def residual_net(filters=20):
    """conv -> conv(1x1) -> conv(1x1) with a skip from layer 0 into layer 2."""
    return NetworkSpec(
        (
            Conv(3, filters, "ReLU"),
            Conv(1, filters, "ReLU"),
            Conv(1, filters, "ReLU"),
            Conv(3, 8, "ReLU"),
            Flatten(),
            Output(3),
        ),
        (9, 9, 1),
        residual_groups=((0, 2),),
    )


def total_loss(model, spec, x, y, w, pairs, seed):
    ce, reg, _ = loss_and_grads(model, spec, x, y, w, pairs, np.random.default_rng(seed))
    return ce + reg


def finite_difference_errors(model, spec, x, y, w, pairs=None, h=1e-5, seed=11, floor=1e-7):
    """Worst relative error per (layer, key) between backprop and central differences.

    The dropout mask is frozen by reseeding the generator for every
    evaluation.  Entries where both gradients are below ``floor`` in
    magnitude are compared absolutely (true zeros, such as a bias feeding
    batch normalization, leave only rounding noise).
    """
    _, _, grads = loss_and_grads(model, spec, x, y, w, pairs, np.random.default_rng(seed))
    worst = {}
    for i, p in enumerate(model.params):
        for key in ("W", "b", "gamma", "beta"):
            if key not in p:
                continue
            arr, g = p[key], grads[i][key]
            err = 0.0
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                up = total_loss(model, spec, x, y, w, pairs, seed)
                arr[idx] = old - h
                down = total_loss(model, spec, x, y, w, pairs, seed)
                arr[idx] = old
                num = (up - down) / (2 * h)
                scale = max(abs(num), abs(g[idx]))
                err = max(err, abs(num - g[idx]) / scale if scale > floor else 0.0)
            worst[(i, key)] = err
    return worst


@pytest.fixture
def grad_problem():
    spec = grad_net()
    rng = np.random.default_rng(0)
    model = init_model(spec, rng)
    x = rng.random((6, 7, 7, 2))
    labels = np.array([0, 1, 2, 0, 1, 1])
    w = np.array([1 / 2, 1 / 3, 1.0])
    pairs = [FilterPair((0,), 0, 2), FilterPair((0,), 1, 3), FilterPair((2,), 0, 1)]
    return model, spec, x, one_hot(labels, 3), w, pairs


@pytest.fixture
def tiny_data():
    from tascforge.data import generate_synthetic, split
    ds = generate_synthetic(3, 20, 8, 8, 1, np.random.default_rng(0))
    return split(ds, 0.25, np.random.default_rng(1))


# -- a 48-configuration benchmark for the search loop -------------------------

def toy_bo_space():
    from tascforge.space import SearchSpace
    return SearchSpace(conv_counts=(0,), pool_counts=(0,), fc_counts=(1,),
                       fc_neurons=(64, 128, 256, 512),
                       fc_activations=("Sigmoid", "TanH", "ReLU", "ELU"),
                       fc_dropouts=(0.1, 0.3, 0.5))


_ACT_PENALTY = {"ELU": 0.0, "ReLU": 0.03, "TanH": 0.08, "Sigmoid": 0.15}


class ToyObjective:
    """Deterministic pseudo-accuracy: a smooth bowl plus a fixed bump per config."""

    def __init__(self, space=None, amplitude=0.03):
        from tascforge.space import enumerate_space
        self.space = space or toy_bo_space()
        self.configs = list(enumerate_space(self.space, 100))
        bumps = np.random.default_rng(123).uniform(-amplitude, amplitude, len(self.configs))
        self.bump = dict(zip(self.configs, bumps))
        self.calls = 0

    def __call__(self, config, index=0):
        self.calls += 1
        f = config.fcs[0]
        n = self.space.fc_neurons.index(f.neurons)
        d = self.space.fc_dropouts.index(f.dropout)
        score = 0.95 - 0.25 * (n - 2) ** 2 / 4 - 0.15 * (d - 1) ** 2 - _ACT_PENALTY[f.activation]
        return score + self.bump[config]

    def argmax(self):
        return max(self.configs, key=self)
