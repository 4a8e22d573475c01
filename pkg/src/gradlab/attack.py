"""Gradient inversion: optimize a dummy batch whose parameter gradient
matches an observed (defended) gradient.

The attacker sees only the shared gradient vector, never the defense audit,
and treats every parameter equally.  Matching uses cosine dissimilarity
(optionally squared L2) plus total-variation regularization for image
inputs; the dummy batch is updated with adaptive-moment steps and a staged
step-size decay at 3/8, 5/8, 7/8 of the budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import dual as dd
from .errors import ConfigError
from .layers import Dense
from .models import Batch, ModelSpec, ParamVector, run_gradients

MATCH_LOSSES = ("cosine", "squared-l2")
INITS = ("standard-normal", "uniform")
LABEL_MODES = ("known", "inferred-single")


@dataclass(frozen=True)
class AttackConfig:
    iterations: int = 2000
    match_loss: str = "cosine"
    tv_weight: float = 0.0
    step_size: float = 0.1
    init: str = "standard-normal"
    labels: str = "known"
    restarts: int = 1
    box: tuple | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("attack needs iterations >= 1")
        if self.match_loss not in MATCH_LOSSES:
            raise ConfigError(f"match_loss must be one of {MATCH_LOSSES}")
        if self.tv_weight < 0:
            raise ConfigError("tv_weight must be >= 0")
        if self.init not in INITS:
            raise ConfigError(f"init must be one of {INITS}")
        if self.labels not in LABEL_MODES:
            raise ConfigError(f"labels must be one of {LABEL_MODES}")
        if self.restarts < 1:
            raise ConfigError("attack needs restarts >= 1")
        if self.box is not None and not self.box[0] < self.box[1]:
            raise ConfigError("box must be (low, high) with low < high")

    def to_config(self):
        return {f.name: (list(self.box) if f.name == "box" and self.box else getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_config(cls, cfg):
        cfg = dict(cfg)
        extra = set(cfg) - {f.name for f in fields(cls)}
        if extra:
            raise ConfigError(f"unknown attack keys: {sorted(extra)}")
        if cfg.get("box") is not None:
            cfg["box"] = tuple(cfg["box"])
        return cls(**cfg)


@dataclass
class AttackResult:
    reconstruction: np.ndarray
    final_match_loss: float
    per_image_mse: np.ndarray | None = None
    mse: float | None = None
    psnr: float | None = None
    notes: list = field(default_factory=list)


def _match_and_grad(g, y, kind):
    if kind == "squared-l2":
        r = g - y
        return float(np.sum(r * r)), 2.0 * r
    n_g = float(np.linalg.norm(g))
    n_y = float(np.linalg.norm(y))
    if n_g == 0.0:
        return 1.0, np.zeros_like(g)
    dot = float(np.dot(g, y))
    cos = dot / (n_g * n_y)
    grad = (dot / (n_g * n_g)) * g / (n_g * n_y) - y / (n_g * n_y)
    return 1.0 - cos, grad


def _tv_and_grad(x):
    """Anisotropic total variation over the trailing two (spatial) axes."""
    dh = x[..., 1:, :] - x[..., :-1, :]
    dw = x[..., :, 1:] - x[..., :, :-1]
    value = float(np.abs(dh).sum() + np.abs(dw).sum())
    grad = np.zeros_like(x)
    sh = np.sign(dh)
    sw = np.sign(dw)
    grad[..., 1:, :] += sh
    grad[..., :-1, :] -= sh
    grad[..., :, 1:] += sw
    grad[..., :, :-1] -= sw
    return value, grad


def infer_single_label(model: ModelSpec, observed: np.ndarray) -> int:
    """Single-sample label from the classifier head's bias gradient sign.

    With cross-entropy, the bias gradient of the final dense layer is
    softmax - onehot, so the only negative entry marks the true class.
    """
    if model.loss != "cross_entropy":
        raise ConfigError("label inference needs a cross-entropy model")
    bias_slot = None
    for slot in model.slots:
        if slot.name == "bias" and isinstance(model.layers[slot.layer], Dense):
            bias_slot = slot
    if bias_slot is None:
        raise ConfigError("label inference needs a final dense layer with bias")
    head = observed[bias_slot.start : bias_slot.start + bias_slot.length]
    return int(np.argmin(head))


def _objective_and_grad(model, params, dummy, batch, y, match_kind, tv_weight):
    _, g = run_gradients(model, params.values, dummy, batch, wrt="params")
    match, dmatch = _match_and_grad(g, y, match_kind)
    # d/dx f(g(x)) = (dg/dx)^T df: thread df as a parameter tangent through
    # the input-gradient computation and read off the tangent.
    _, gx = run_gradients(model, dd.Dual(params.values, dmatch), dummy, batch, wrt="inputs")
    grad_x = dd.tangent(gx)
    if tv_weight > 0.0 and dummy.ndim >= 3:
        tv, dtv = _tv_and_grad(dummy)
        match += tv_weight * tv
        grad_x = grad_x + tv_weight * dtv
    return match, grad_x


def invert(
    model: ModelSpec,
    params: ParamVector,
    observed,
    shape,
    cfg: AttackConfig,
    rng: np.random.Generator,
    labels=None,
    targets=None,
    truth=None,
    peak: float = 1.0,
) -> AttackResult:
    """Reconstruct a batch of the given shape from an observed gradient.

    `observed` may be a DefendedGradient or a plain vector; only the shared
    values are ever read.  When `truth` is provided the result carries
    assignment-matched MSE and PSNR.
    """
    y = np.asarray(getattr(observed, "values", observed), dtype=np.float64).reshape(-1)
    if y.shape[0] != model.param_count:
        raise ConfigError(f"observed gradient length {y.shape[0]} != d={model.param_count}")
    shape = tuple(shape)
    if shape[1:] != model.input_shape:
        raise ConfigError(f"batch shape {shape} does not match model input {model.input_shape}")

    notes = []
    match_kind = cfg.match_loss
    if match_kind == "cosine" and not np.any(y):
        notes.append("zero observed gradient: cosine undefined, fell back to squared-l2")
        match_kind = "squared-l2"

    if cfg.labels == "known":
        if labels is None and targets is None and model.loss != "output_sum":
            raise ConfigError("labels mode 'known' needs labels or targets")
    else:
        if shape[0] != 1:
            raise ConfigError("label inference handles single-sample batches only")
        labels = np.array([infer_single_label(model, y)])
    batch_kwargs = {"labels": labels, "targets": targets}

    milestones = {(3 * cfg.iterations) // 8, (5 * cfg.iterations) // 8, (7 * cfg.iterations) // 8}
    best = None
    for _ in range(cfg.restarts):
        if cfg.init == "standard-normal":
            dummy = rng.standard_normal(shape)
        else:
            dummy = rng.uniform(0.0, 1.0, shape)
        if cfg.box is not None:
            dummy = np.clip(dummy, *cfg.box)
        lr = cfg.step_size
        m = np.zeros(shape)
        v = np.zeros(shape)
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        for t in range(1, cfg.iterations + 1):
            if t - 1 in milestones and t - 1 > 0:
                lr *= 0.1
            batch = Batch(dummy, **batch_kwargs)
            loss, grad_x = _objective_and_grad(
                model, params, dummy, batch, y, match_kind, cfg.tv_weight
            )
            m = beta1 * m + (1 - beta1) * grad_x
            v = beta2 * v + (1 - beta2) * grad_x * grad_x
            mhat = m / (1 - beta1**t)
            vhat = v / (1 - beta2**t)
            dummy = dummy - lr * mhat / (np.sqrt(vhat) + eps)
            if cfg.box is not None:
                dummy = np.clip(dummy, *cfg.box)
        final_loss, _ = _objective_and_grad(
            model, params, dummy, Batch(dummy, **batch_kwargs), y, match_kind, cfg.tv_weight
        )
        if best is None or final_loss < best[0]:
            best = (final_loss, dummy)

    result = AttackResult(reconstruction=best[1], final_match_loss=float(best[0]), notes=notes)
    if truth is not None:
        truth = np.asarray(truth, dtype=np.float64)
        _, per_image = match_assignment(result.reconstruction, truth)
        result.per_image_mse = per_image
        result.mse = float(np.mean(per_image))
        result.psnr = psnr_from_mse(result.mse, peak)
    return result


def match_assignment(recon_batch, true_batch):
    """Minimum-total-MSE pairing between reconstructed and true samples.

    Returns (perm, per_image_mse) where recon_batch[perm[j]] pairs with
    true_batch[j]; batch order is not identifiable from an averaged
    gradient, so scoring must be permutation-invariant.
    """
    recon = np.asarray(recon_batch, dtype=np.float64)
    truth = np.asarray(true_batch, dtype=np.float64)
    if recon.shape != truth.shape:
        raise ConfigError(f"batch shapes differ: {recon.shape} vs {truth.shape}")
    b = recon.shape[0]
    r = recon.reshape(b, -1)
    t = truth.reshape(b, -1)
    cost = np.mean((r[:, None, :] - t[None, :, :]) ** 2, axis=2)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(b, dtype=np.int64)
    perm[cols] = rows
    per_image = cost[perm, np.arange(b)]
    return perm, per_image


def psnr_from_mse(mse: float, peak: float = 1.0) -> float:
    """PSNR in dB; exact recovery reports the +inf sentinel."""
    if peak <= 0:
        raise ConfigError("peak must be > 0")
    if mse < 0:
        raise ConfigError("mse must be >= 0")
    if mse == 0.0:
        return math.inf
    return float(10.0 * math.log10(peak * peak / mse))
