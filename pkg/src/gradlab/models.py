"""Minimal dense-tensor model engine: losses, parameter gradients, input gradients.

Everything runs in float64 on plain numpy arrays.  The defense formulas
divide by gradient magnitudes that can sit near 1e-6, so single precision
is never used.  All entry points are pure functions of their arguments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dual as dd
from .errors import ConfigError, NumericError
from .layers import LAYER_KINDS, Conv2d, Dense, Flatten, LeakyRelu, MaxPool

LOSS_KINDS = ("cross_entropy", "squared_error", "output_sum")


@dataclass(frozen=True)
class ParamSlot:
    """Location of one parameter array inside the flat vector."""

    layer: int
    name: str
    start: int
    length: int
    shape: tuple


@dataclass(frozen=True)
class ModelSpec:
    input_shape: tuple
    layers: tuple
    loss: str
    slots: tuple = field(init=False)
    param_count: int = field(init=False)
    output_shape: tuple = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {self.loss!r}; expected one of {LOSS_KINDS}")
        if any(s < 1 for s in self.input_shape):
            raise ConfigError(f"input shape must be positive, got {self.input_shape}")
        for layer in self.layers:
            if isinstance(layer, LeakyRelu) and layer.slope < 0:
                raise ConfigError(f"leaky_relu slope must be >= 0, got {layer.slope}")
        shape = self.input_shape
        slots = []
        offset = 0
        for i, layer in enumerate(self.layers):
            shape = layer.out_shape(shape)
            for name, pshape in layer.param_shapes():
                length = int(np.prod(pshape))
                slots.append(ParamSlot(i, name, offset, length, tuple(pshape)))
                offset += length
        if self.loss in ("cross_entropy", "squared_error") and len(shape) != 1:
            raise ConfigError(f"{self.loss} needs a flat (classes,) output, got {shape}")
        object.__setattr__(self, "slots", tuple(slots))
        object.__setattr__(self, "param_count", offset)
        object.__setattr__(self, "output_shape", shape)

    @property
    def has_plain_relu(self):
        return any(isinstance(l, LeakyRelu) and l.slope == 0.0 for l in self.layers)

    def layer_offsets(self):
        """Map layer index -> (start, length) over that layer's parameter span."""
        spans = {}
        for slot in self.slots:
            start, length = spans.get(slot.layer, (slot.start, 0))
            spans[slot.layer] = (min(start, slot.start), length + slot.length)
        return spans

    def to_config(self):
        out = []
        for layer in self.layers:
            if isinstance(layer, Dense):
                out.append({"type": "dense", "in": layer.in_dim, "out": layer.out_dim, "bias": layer.bias})
            elif isinstance(layer, Conv2d):
                out.append({"type": "conv2d", "in_ch": layer.in_ch, "out_ch": layer.out_ch, "k": layer.kernel, "pad": layer.pad})
            elif isinstance(layer, LeakyRelu):
                out.append({"type": "leaky_relu", "slope": layer.slope})
            elif isinstance(layer, MaxPool):
                out.append({"type": "max_pool", "k": layer.kernel})
            elif isinstance(layer, Flatten):
                out.append({"type": "flatten"})
        return {"input_shape": list(self.input_shape), "layers": out, "loss": self.loss}

    @classmethod
    def from_config(cls, cfg):
        known = {"input_shape", "layers", "loss"}
        extra = set(cfg) - known
        if extra:
            raise ConfigError(f"unknown model keys: {sorted(extra)}")
        layers = []
        for entry in cfg.get("layers", []):
            entry = dict(entry)
            kind = entry.pop("type", None)
            if kind not in LAYER_KINDS:
                raise ConfigError(f"unknown layer type {kind!r}")
            try:
                if kind == "dense":
                    layers.append(Dense(entry.pop("in"), entry.pop("out"), entry.pop("bias", True)))
                elif kind == "conv2d":
                    layers.append(Conv2d(entry.pop("in_ch"), entry.pop("out_ch"), entry.pop("k"), entry.pop("pad", 0)))
                elif kind == "leaky_relu":
                    layers.append(LeakyRelu(entry.pop("slope", 0.01)))
                elif kind == "max_pool":
                    layers.append(MaxPool(entry.pop("k")))
                else:
                    layers.append(Flatten())
            except KeyError as exc:
                raise ConfigError(f"layer {kind!r} missing field {exc}") from None
            if entry:
                raise ConfigError(f"unknown keys for layer {kind!r}: {sorted(entry)}")
        return cls(tuple(cfg.get("input_shape", ())), tuple(layers), cfg.get("loss", "cross_entropy"))


def _as_finite_f64(arr, what):
    arr = np.asarray(arr, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise NumericError(f"{what} contains non-finite entries")
    return arr


@dataclass
class ParamVector:
    """Flat float64 parameter vector plus the layout of its layers."""

    values: np.ndarray
    model: ModelSpec

    def __post_init__(self):
        self.values = _as_finite_f64(self.values, "parameter vector").reshape(-1)
        if self.values.shape[0] != self.model.param_count:
            raise ConfigError(
                f"parameter vector length {self.values.shape[0]} != model count {self.model.param_count}"
            )

    def to_layers(self):
        """Per-layer list of parameter arrays, views into the flat vector."""
        return unflatten_params(self.model, self.values)

    @classmethod
    def from_layers(cls, model, per_layer):
        flat = np.concatenate([np.ravel(a) for arrays in per_layer for a in arrays]) if model.param_count else np.zeros(0)
        return cls(flat, model)


def unflatten_params(model, flat):
    """Slice a flat (plain or dual) vector into per-layer parameter arrays."""
    per_layer = [[] for _ in model.layers]
    for slot in model.slots:
        per_layer[slot.layer].append(flat[slot.start : slot.start + slot.length].reshape(slot.shape))
    return per_layer


@dataclass
class Batch:
    """Flattened training batch: inputs (b, *input_shape) plus labels/targets."""

    inputs: np.ndarray
    labels: np.ndarray | None = None
    targets: np.ndarray | None = None

    def __post_init__(self):
        self.inputs = _as_finite_f64(self.inputs, "batch inputs")
        if self.inputs.ndim < 1 or self.inputs.shape[0] < 1:
            raise ConfigError("batch needs at least one sample")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if self.labels.shape[0] != self.inputs.shape[0]:
                raise ConfigError("one label per sample required")
        if self.targets is not None:
            self.targets = _as_finite_f64(self.targets, "batch targets")

    @property
    def size(self):
        return self.inputs.shape[0]

    @property
    def m(self):
        """Total input dimension: batch size times per-sample dimension."""
        return int(self.inputs.size)


def init_params(model: ModelSpec, rng: np.random.Generator) -> ParamVector:
    """Uniform fan-in initialization, deterministic given the generator."""
    flat = np.zeros(model.param_count)
    for slot in model.slots:
        layer = model.layers[slot.layer]
        if isinstance(layer, Dense):
            bound = 1.0 / np.sqrt(layer.in_dim)
        else:
            bound = 1.0 / np.sqrt(layer.in_ch * layer.kernel**2)
        flat[slot.start : slot.start + slot.length] = rng.uniform(-bound, bound, slot.length)
    return ParamVector(flat, model)


def _check_batch(model, batch):
    if batch.inputs.shape[1:] != model.input_shape:
        raise ConfigError(
            f"batch inputs {batch.inputs.shape[1:]} do not match model input {model.input_shape}"
        )
    if model.loss == "cross_entropy":
        if batch.labels is None:
            raise ConfigError("cross_entropy needs integer labels")
        k = model.output_shape[0]
        if batch.labels.min() < 0 or batch.labels.max() >= k:
            raise ConfigError(f"labels must lie in [0, {k})")


def _loss_targets(model, batch):
    if model.loss != "squared_error":
        return None
    k = model.output_shape[0]
    if batch.targets is not None:
        t = batch.targets.reshape(batch.size, k)
        return t
    if batch.labels is None:
        raise ConfigError("squared_error needs targets or labels")
    t = np.zeros((batch.size, k))
    t[np.arange(batch.size), batch.labels] = 1.0
    return t


def _forward(model, flat_params, x):
    per_layer = unflatten_params(model, flat_params)
    caches = []
    out = x
    for i, layer in enumerate(model.layers):
        out, cache = layer.forward(out, per_layer[i])
        if not np.isfinite(dd.value(out)).all():
            raise NumericError(f"non-finite activation after layer {i} ({type(layer).__name__})")
        caches.append(cache)
    return out, caches


def _loss_and_seed(model, out, batch):
    b = batch.size
    if model.loss == "cross_entropy":
        shift = dd.value(out).max(axis=1, keepdims=True)
        logits = out - shift
        expl = dd.exp(logits)
        logp = logits - dd.log(expl.sum(axis=1, keepdims=True))
        picked = logp[np.arange(b), batch.labels]
        loss = -picked.mean()
        onehot = np.zeros((b, model.output_shape[0]))
        onehot[np.arange(b), batch.labels] = 1.0
        seed = (dd.exp(logp) - onehot) * (1.0 / b)
        return loss, seed
    if model.loss == "squared_error":
        r = out - _loss_targets(model, batch)
        loss = (r * r).sum() * (0.5 / b)
        return loss, r * (1.0 / b)
    # output_sum: the mean over the batch of the summed outputs; its
    # parameter gradient for a bias-free linear map is the input itself.
    loss = out.sum() * (1.0 / b)
    seed = np.full(dd.value(out).shape, 1.0 / b)
    return loss, seed


def _backward(model, caches, seed):
    per_layer_grads = [None] * len(model.layers)
    dx = seed
    for i in range(len(model.layers) - 1, -1, -1):
        dx, grads = model.layers[i].backward(caches[i], dx)
        per_layer_grads[i] = grads
    return dx, per_layer_grads


def _flatten_grads(model, per_layer_grads):
    parts = []
    counters = {}
    for slot in model.slots:
        j = counters.get(slot.layer, 0)
        counters[slot.layer] = j + 1
        parts.append(per_layer_grads[slot.layer][j].reshape(-1))
    if not parts:
        return np.zeros(0)
    if any(isinstance(p, dd.Dual) for p in parts):
        return dd.Dual(
            np.concatenate([dd.value(p) for p in parts]),
            np.concatenate([dd.tangent(p) for p in parts]),
        )
    return np.concatenate(parts)


def run_gradients(model, flat_params, inputs, batch, *, wrt):
    """Shared engine: loss plus gradient w.r.t. params or inputs.

    flat_params and inputs may carry dual tangents; the returned loss and
    gradient then carry the corresponding directional derivatives.
    """
    out, caches = _forward(model, flat_params, inputs)
    loss, seed = _loss_and_seed(model, out, batch)
    dx, per_layer = _backward(model, caches, seed)
    if wrt == "inputs":
        return loss, dx
    if wrt == "params":
        return loss, _flatten_grads(model, per_layer)
    raise ValueError(f"wrt must be 'params' or 'inputs', got {wrt!r}")


def forward_loss(model: ModelSpec, params: ParamVector, batch: Batch) -> float:
    """Mean loss over the batch."""
    _check_batch(model, batch)
    out, _ = _forward(model, params.values, batch.inputs)
    loss, _ = _loss_and_seed(model, out, batch)
    return float(dd.value(loss))


def param_gradient(model: ModelSpec, params: ParamVector, batch: Batch) -> np.ndarray:
    """Gradient of the mean batch loss with respect to the flat parameters."""
    _check_batch(model, batch)
    _, g = run_gradients(model, params.values, batch.inputs, batch, wrt="params")
    return g


def input_gradient(model: ModelSpec, params: ParamVector, batch: Batch) -> np.ndarray:
    """Gradient of the mean batch loss with respect to the batch inputs."""
    _check_batch(model, batch)
    _, g = run_gradients(model, params.values, batch.inputs, batch, wrt="inputs")
    return g
