"""Shared fixtures: the analytic linear oracle, a random model zoo, and
independent finite-difference oracles (never the package's own FD path)."""

import os

import numpy as np
import pytest

from gradlab.layers import Conv2d, Dense, Flatten, LeakyRelu, MaxPool
from gradlab.models import Batch, ModelSpec, ParamVector, forward_loss, init_params

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "fixtures")


@pytest.fixture
def linear_oracle():
    """L(x, theta) = 0.5 (theta . x - t)^2 with theta=(1,2), x=(1,1), t=0.

    Analytic facts: loss 4.5, dL/dtheta = (3,3), dL/dx = (3,6), Jacobian of
    the parameter gradient has rows (4,2) and (1,5), row norms (20, 26).
    """
    model = ModelSpec((2,), (Dense(2, 1, bias=False),), "squared_error")
    params = ParamVector(np.array([1.0, 2.0]), model)
    batch = Batch(np.array([[1.0, 1.0]]), targets=np.array([[0.0]]))
    return model, params, batch


@pytest.fixture
def identity_map():
    """Model whose parameter gradient equals the input for batch size 1."""
    m = 6
    model = ModelSpec((m,), (Dense(m, 1, bias=False),), "output_sum")
    params = ParamVector(np.ones(m), model)
    return model, params


def digits_path(name):
    return os.path.join(FIXTURES, name)


def make_random_model(rng):
    """Small random architecture (dense or conv) plus a matching batch."""
    kind = int(rng.integers(0, 3))
    if kind == 0:
        dims = [int(rng.integers(2, 7)) for _ in range(int(rng.integers(2, 4)))]
        layers = []
        for a, b in zip(dims[:-1], dims[1:]):
            layers.append(Dense(a, b, bias=bool(rng.integers(0, 2))))
            layers.append(LeakyRelu(0.1))
        layers.append(Dense(dims[-1], 3))
        model = ModelSpec((dims[0],), tuple(layers), "cross_entropy")
    elif kind == 1:
        ch = int(rng.integers(1, 3))
        model = ModelSpec(
            (ch, 4, 4),
            (Conv2d(ch, 3, 3, pad=1), LeakyRelu(0.2), MaxPool(2), Flatten(), Dense(12, 3)),
            "cross_entropy",
        )
    else:
        dims = int(rng.integers(3, 6))
        model = ModelSpec(
            (dims,),
            (Dense(dims, 4), LeakyRelu(0.05), Dense(4, 2)),
            "squared_error",
        )
    params = init_params(model, rng)
    b = int(rng.integers(1, 4))
    inputs = rng.standard_normal((b,) + model.input_shape)
    labels = rng.integers(0, model.output_shape[0], size=b)
    return model, params, Batch(inputs, labels=labels)


def fd_param_gradient(model, params, batch, h=1e-5):
    """Independent central-difference oracle over every parameter."""
    vals = params.values
    out = np.zeros_like(vals)
    for i in range(vals.shape[0]):
        up = vals.copy()
        up[i] += h
        dn = vals.copy()
        dn[i] -= h
        out[i] = (
            forward_loss(model, ParamVector(up, model), batch)
            - forward_loss(model, ParamVector(dn, model), batch)
        ) / (2.0 * h)
    return out


def fd_input_gradient(model, params, batch, h=1e-5):
    """Independent central-difference oracle over every input coordinate."""
    flat = batch.inputs.reshape(-1)
    out = np.zeros_like(flat)
    for i in range(flat.shape[0]):
        up = flat.copy()
        up[i] += h
        dn = flat.copy()
        dn[i] -= h
        bu = Batch(up.reshape(batch.inputs.shape), batch.labels, batch.targets)
        bd = Batch(dn.reshape(batch.inputs.shape), batch.labels, batch.targets)
        out[i] = (forward_loss(model, params, bu) - forward_loss(model, params, bd)) / (2.0 * h)
    return out.reshape(batch.inputs.shape)


def vec_rel_error(a, b):
    """Relative error between vectors on the max-magnitude scale."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    scale = max(float(np.abs(b).max()), 1e-12)
    return float(np.abs(a - b).max()) / scale
