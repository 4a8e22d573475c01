"""Shared bits for the experiment scripts: fixture paths and the desk model."""

import os

from gradlab.data import Dataset, load_idx
from gradlab.layers import Conv2d, Dense, Flatten, LeakyRelu, MaxPool
from gradlab.models import ModelSpec

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "fixtures")


def load_digits_dataset():
    ds = load_idx(
        os.path.join(FIXTURES, "digits512_images.idx"),
        os.path.join(FIXTURES, "digits512_labels.idx"),
        name="digits512",
    )
    return Dataset(ds.inputs.reshape(-1, 1, 8, 8), ds.labels, name=ds.name)


def desk_model():
    """Conv stack shrunk to 8x8 inputs: 9802 parameters, LeakyReLU activations."""
    return ModelSpec(
        (1, 8, 8),
        (
            Conv2d(1, 8, 3, pad=1), LeakyRelu(0.01), MaxPool(2),
            Conv2d(8, 16, 3, pad=1), LeakyRelu(0.01),
            Flatten(), Dense(256, 32), LeakyRelu(0.01), Dense(32, 10),
        ),
        "cross_entropy",
    )


def mlp_model():
    """Small dense model on flattened digits (2410 parameters)."""
    return ModelSpec(
        (64,),
        (Dense(64, 32), LeakyRelu(0.01), Dense(32, 10)),
        "cross_entropy",
    )


def flat_digits_dataset():
    ds = load_idx(
        os.path.join(FIXTURES, "digits512_images.idx"),
        os.path.join(FIXTURES, "digits512_labels.idx"),
        name="digits512",
    )
    return Dataset(ds.inputs.reshape(-1, 64), ds.labels, name=ds.name)
