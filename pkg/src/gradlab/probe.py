"""Per-parameter sensitivity probes: ||d g_i / d x||^2 for every gradient entry.

These squared Jacobian row norms drive all the adaptive defenses.  The
randomized sketch averages squared directional derivatives of the gradient
along standard-normal directions; its expectation is exact and k * estimate
/ exact is chi-square(k) per coordinate.  The exact routine enumerates the
input dimensions and exists as a testing oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dual as dd
from .errors import ConfigError
from .models import Batch, ModelSpec, ParamVector, _check_batch, run_gradients

EXACT_GUARD = int(1e7)


@dataclass
class RowNormEstimate:
    """Estimated or exact squared row norms, one entry per parameter."""

    values: np.ndarray
    k: int
    method: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if (self.values < 0).any():
            raise ConfigError("squared row norms cannot be negative")


def grad_directional_derivative(
    model: ModelSpec,
    params: ParamVector,
    batch: Batch,
    direction: np.ndarray,
    method: str = "forward",
) -> np.ndarray:
    """Derivative of every parameter-gradient entry along an input direction.

    Equals the gradient Jacobian (d params x m inputs) applied to the
    direction.  `forward` threads a dual scalar through the whole gradient
    computation; `fd` is the central-difference fallback with step
    1e-4 * max(1, ||x||_inf).
    """
    _check_batch(model, batch)
    direction = np.asarray(direction, dtype=np.float64)
    if direction.shape != batch.inputs.shape:
        raise ConfigError(
            f"direction shape {direction.shape} does not match inputs {batch.inputs.shape}"
        )
    if method == "forward":
        _, g = run_gradients(
            model, params.values, dd.Dual(batch.inputs, direction), batch, wrt="params"
        )
        return dd.tangent(g)
    if method == "fd":
        h = 1e-4 * max(1.0, float(np.abs(batch.inputs).max()))
        up = Batch(batch.inputs + h * direction, batch.labels, batch.targets)
        dn = Batch(batch.inputs - h * direction, batch.labels, batch.targets)
        _, gp = run_gradients(model, params.values, up.inputs, up, wrt="params")
        _, gm = run_gradients(model, params.values, dn.inputs, dn, wrt="params")
        return (gp - gm) / (2.0 * h)
    raise ConfigError(f"unknown directional-derivative method {method!r}")


def sketch_row_norms(
    model: ModelSpec,
    params: ParamVector,
    batch: Batch,
    k: int,
    rng: np.random.Generator,
    method: str = "forward",
) -> RowNormEstimate:
    """Monte-Carlo row-norm estimate from k shared-per-batch normal directions.

    Child generators are derived up front, so evaluating the k samples in
    any order (or in parallel) reproduces the same estimate.
    """
    if k < 1:
        raise ConfigError(f"sketch needs k >= 1, got {k}")
    acc = np.zeros(model.param_count)
    seeds = rng.integers(0, 2**63 - 1, size=k)
    for seed in seeds:
        v = np.random.default_rng(int(seed)).standard_normal(batch.inputs.shape)
        jv = grad_directional_derivative(model, params, batch, v, method=method)
        acc += jv * jv
    return RowNormEstimate(acc / k, k=k, method="sketch")


def exact_row_norms(model: ModelSpec, params: ParamVector, batch: Batch) -> RowNormEstimate:
    """Exact squared row norms via one directional derivative per input dim.

    Refuses when m * d would exceed the enumeration guard; the full Jacobian
    is exactly what the sketch exists to avoid.
    """
    m = batch.m
    if m * model.param_count > EXACT_GUARD:
        raise ConfigError(
            f"exact row norms need m*d <= {EXACT_GUARD}, got {m * model.param_count}; "
            "use sketch_row_norms instead"
        )
    acc = np.zeros(model.param_count)
    basis = np.zeros(batch.inputs.shape)
    flat = basis.reshape(-1)
    for j in range(m):
        flat[j] = 1.0
        col = grad_directional_derivative(model, params, batch, basis)
        acc += col * col
        flat[j] = 0.0
    return RowNormEstimate(acc, k=0, method="exact")
