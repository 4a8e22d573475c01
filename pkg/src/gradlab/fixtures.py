"""Committed fixtures: the analytic linear-oracle config and IDX datasets.

Regeneration is bit-exact: everything below is a pure function of fixed
seeds (and the static sklearn digits data for the desk-scale dataset).
"""

from __future__ import annotations

import os

import numpy as np
import yaml

from .data import write_idx_images, write_idx_labels

LINEAR_ORACLE = {
    "config_version": 1,
    "experiment": "linear-oracle-bound",
    "seed": 0,
    "model": {
        "input_shape": [2],
        "layers": [{"type": "dense", "in": 2, "out": 1, "bias": False}],
        "loss": "squared_error",
    },
    "params": {"values": [1.0, 2.0]},
    "dataset": {"kind": "inline", "inputs": [[1.0, 1.0]], "targets": [[0.0]]},
    "defense": {"kind": "noise", "sigma": 1.0},
    "prior": {"kind": "flat"},
    "bound": {"row_norms": "exact"},
}


def write_linear_oracle(path):
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(LINEAR_ORACLE, fh, sort_keys=False)


def write_tiny_idx(images_path, labels_path):
    """4 deterministic 8x8 images for byte-level loader checks."""
    rng = np.random.default_rng([7, 7, 7])
    images = rng.integers(0, 256, size=(4, 8, 8)).astype(np.uint8)
    labels = rng.integers(0, 10, size=4).astype(np.uint8)
    write_idx_images(images_path, images)
    write_idx_labels(labels_path, labels)


def write_digits_idx(images_path, labels_path, limit=512):
    """First `limit` sklearn handwritten digits (8x8, 10 classes) as IDX.

    Stands in for the MNIST subset at desk scale without any downloads;
    sklearn is only needed to regenerate, not to load.
    """
    from sklearn.datasets import load_digits

    digits = load_digits()
    images = np.round(digits.images[:limit] / 16.0 * 255.0).astype(np.uint8)
    labels = digits.target[:limit].astype(np.uint8)
    write_idx_images(images_path, images)
    write_idx_labels(labels_path, labels)


def generate_all(out_dir):
    """Write every fixture into out_dir; returns the list of paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "linear_oracle": os.path.join(out_dir, "linear_oracle.yaml"),
        "tiny_images": os.path.join(out_dir, "tiny_images.idx"),
        "tiny_labels": os.path.join(out_dir, "tiny_labels.idx"),
        "digits_images": os.path.join(out_dir, "digits512_images.idx"),
        "digits_labels": os.path.join(out_dir, "digits512_labels.idx"),
    }
    write_linear_oracle(paths["linear_oracle"])
    write_tiny_idx(paths["tiny_images"], paths["tiny_labels"])
    write_digits_idx(paths["digits_images"], paths["digits_labels"])
    return list(paths.values())
