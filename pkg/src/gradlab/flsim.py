"""Federated training simulator: clients defend local gradients, the server
aggregates and steps, sweeps pair defenses with attacks and bounds.

All randomness is derived from (seed, round, client, purpose) so runs are
reproducible regardless of evaluation order; defenses that add zero noise
leave the loss trajectory bit-identical to no defense at all.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .attack import AttackConfig, invert, match_assignment, psnr_from_mse
from .bounds import (
    PriorSpec,
    fisher_trace_noise,
    fisher_trace_prune,
    reconstruction_bound,
    utility_first_order,
    utility_second_order,
)
from .defenses import DefendedGradient, DefenseSpec, defend
from .errors import ConfigError, NumericError
from .metrics import MetricRow
from .models import Batch, ModelSpec, ParamVector, forward_loss, param_gradient
from .probe import exact_row_norms, sketch_row_norms


@dataclass(frozen=True)
class OptimizerSpec:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer kind {self.kind!r}")
        if self.lr <= 0:
            raise ConfigError("learning rate must be > 0")

    @classmethod
    def from_config(cls, cfg):
        cfg = dict(cfg)
        extra = set(cfg) - {f.name for f in fields(cls)}
        if extra:
            raise ConfigError(f"unknown optimizer keys: {sorted(extra)}")
        return cls(**cfg)


@dataclass(frozen=True, eq=False)
class FLConfig:
    num_clients: int = 4
    per_round_samples: int = 8
    rounds: int = 10
    seed: int = 0
    defense: object = field(default_factory=DefenseSpec)
    server_optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    shard_sizes: tuple | None = None
    refresh_every: int = 1
    row_norms_mode: str = "sketch"

    def __post_init__(self):
        if self.num_clients < 1:
            raise ConfigError("need at least one client")
        if self.rounds < 1:
            raise ConfigError("need at least one round")
        if self.refresh_every < 1:
            raise ConfigError("refresh_every must be >= 1")
        if self.row_norms_mode not in ("sketch", "exact"):
            raise ConfigError("row_norms_mode must be 'sketch' or 'exact'")

    def defense_for(self, client: int) -> DefenseSpec:
        if isinstance(self.defense, DefenseSpec):
            return self.defense
        return self.defense[client]

    def samples_for(self, client: int) -> int:
        if isinstance(self.per_round_samples, int):
            return self.per_round_samples
        return self.per_round_samples[client]


@dataclass
class TrainRound:
    round: int
    train_loss: float
    eval_loss: float | None
    u1: float | None
    u2: float | None
    noise_frobenius: float
    per_layer_sigma: dict


@dataclass
class TrainLog:
    rounds: list = field(default_factory=list)

    def losses(self):
        return np.array([r.train_loss for r in self.rounds])

    def smoothed_losses(self, window: int = 8):
        return smooth(self.losses(), window)


def smooth(values, window: int = 8):
    """Trailing moving average with partial windows at the start."""
    values = np.asarray(values, dtype=np.float64)
    out = np.empty_like(values)
    csum = np.concatenate([[0.0], np.cumsum(values)])
    for i in range(len(values)):
        lo = max(0, i - window + 1)
        out[i] = (csum[i + 1] - csum[lo]) / (i + 1 - lo)
    return out


def _rng(seed, round_idx, client, purpose):
    return np.random.default_rng([seed, round_idx, client, purpose])


def _row_norms(model, params, batch, spec, mode, rng):
    if mode == "exact":
        return exact_row_norms(model, params, batch)
    return sketch_row_norms(model, params, batch, spec.sketch_samples, rng)


def client_round(
    model: ModelSpec,
    params: ParamVector,
    shard_batch: Batch,
    defense: DefenseSpec,
    rng: np.random.Generator,
    row_norms=None,
    row_norms_mode: str = "sketch",
    sketch_rng: np.random.Generator | None = None,
) -> DefendedGradient:
    """One client step: local gradient, optional row-norm probe, defense."""
    g = param_gradient(model, params, shard_batch)
    if defense.needs_row_norms and row_norms is None:
        row_norms = _row_norms(model, params, shard_batch, defense, row_norms_mode, sketch_rng or rng)
    return defend(g, defense, row_norms=row_norms, rng=rng)


def aggregate(defended, weights) -> np.ndarray:
    """Weighted average of shared gradients: sum w_i y_i / sum w_i."""
    vectors = [np.asarray(getattr(d, "values", d), dtype=np.float64).reshape(-1) for d in defended]
    if not vectors:
        raise ConfigError("nothing to aggregate")
    length = vectors[0].shape[0]
    if any(v.shape[0] != length for v in vectors):
        raise ConfigError("defended gradients have mismatched lengths")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape[0] != len(vectors) or (weights <= 0).any():
        raise ConfigError("need one positive weight per client")
    acc = np.zeros(length)
    for w, v in zip(weights, vectors):
        acc += w * v
    return acc / weights.sum()


class _ServerOptimizer:
    def __init__(self, spec: OptimizerSpec, dim: int):
        self.spec = spec
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        s = self.spec
        if s.kind == "sgd":
            return params - s.lr * grad
        self.t += 1
        self.m = s.beta1 * self.m + (1 - s.beta1) * grad
        self.v = s.beta2 * self.v + (1 - s.beta2) * grad * grad
        mhat = self.m / (1 - s.beta1**self.t)
        vhat = self.v / (1 - s.beta2**self.t)
        return params - s.lr * mhat / (np.sqrt(vhat) + s.eps)


def _shards(dataset, flcfg):
    n = dataset.inputs.shape[0]
    sizes = flcfg.shard_sizes
    if sizes is None:
        size = n // flcfg.num_clients
        sizes = tuple(size for _ in range(flcfg.num_clients))
    if sum(sizes) > n:
        raise ConfigError(f"shard sizes {sizes} exceed dataset size {n}")
    shards = []
    start = 0
    for s in sizes:
        shards.append(np.arange(start, start + s))
        start += s
    return shards


def _client_batch(dataset, shard, size, rng):
    idx = rng.choice(shard, size=size, replace=False)
    return Batch(dataset.inputs[idx], labels=dataset.labels[idx])


def _per_layer_sigma(model, sigma):
    out = {}
    for slot in model.slots:
        key = f"layer{slot.layer}.{slot.name}"
        out[key] = float(np.mean(sigma[slot.start : slot.start + slot.length]))
    return out


def train(
    model: ModelSpec,
    init_params: ParamVector,
    dataset,
    flcfg: FLConfig,
    eval_batch: Batch | None = None,
) -> tuple[TrainLog, ParamVector]:
    """Run federated rounds; any numeric failure aborts with the round index."""
    shards = _shards(dataset, flcfg)
    params = ParamVector(init_params.values.copy(), model)
    opt = _ServerOptimizer(flcfg.server_optimizer, model.param_count)
    log = TrainLog()
    cached_norms = [None] * flcfg.num_clients
    for r in range(flcfg.rounds):
        try:
            params = _train_round(
                model, params, dataset, flcfg, shards, cached_norms, r, opt, log, eval_batch
            )
        except NumericError as exc:
            raise NumericError(f"{exc} (aborted at round {r})") from exc
    return log, params


def _train_round(model, params, dataset, flcfg, shards, cached_norms, r, opt, log, eval_batch):
    defended = []
    weights = []
    losses = []
    u1_parts, u2_parts, frob_parts, sigma_vecs = [], [], [], []
    for c in range(flcfg.num_clients):
        spec = flcfg.defense_for(c)
        batch = _client_batch(dataset, shards[c], flcfg.samples_for(c), _rng(flcfg.seed, r, c, 0))
        g = param_gradient(model, params, batch)
        row_norms = None
        if spec.needs_row_norms:
            if r % flcfg.refresh_every == 0 or cached_norms[c] is None:
                cached_norms[c] = _row_norms(
                    model, params, batch, spec, flcfg.row_norms_mode, _rng(flcfg.seed, r, c, 2)
                )
            row_norms = cached_norms[c]
        out = defend(g, spec, row_norms=row_norms, rng=_rng(flcfg.seed, r, c, 1))
        defended.append(out)
        weights.append(flcfg.samples_for(c))
        losses.append(forward_loss(model, params, batch))
        u1_parts.append(utility_first_order([g], spec, out.audit))
        sigma = out.audit.sigma_used
        if sigma is not None:
            u2_parts.append(utility_second_order([g], sigma))
            frob_parts.append(float(np.linalg.norm(sigma)))
            sigma_vecs.append(sigma)
        else:
            u2_parts.append(0.0)
            frob_parts.append(0.0)
    weights = np.asarray(weights, dtype=np.float64)
    train_loss = float(np.sum(weights * np.asarray(losses)) / weights.sum())
    if not np.isfinite(train_loss):
        raise NumericError("non-finite training loss")
    grad = aggregate(defended, weights)
    params = ParamVector(opt.step(params.values, grad), model)
    eval_loss = forward_loss(model, params, eval_batch) if eval_batch is not None else None
    mean_sigma = np.mean(sigma_vecs, axis=0) if sigma_vecs else np.zeros(model.param_count)
    log.rounds.append(
        TrainRound(
            round=r,
            train_loss=train_loss,
            eval_loss=eval_loss,
            u1=float(np.mean(u1_parts)),
            u2=float(np.mean(u2_parts)),
            noise_frobenius=float(np.mean(frob_parts)),
            per_layer_sigma=_per_layer_sigma(model, mean_sigma),
        )
    )
    return params


def mse_psnr(recon, truth, peak: float = 1.0) -> tuple[float, float]:
    """Assignment-matched mean squared error and PSNR."""
    _, per_image = match_assignment(recon, truth)
    mse = float(np.mean(per_image))
    return mse, psnr_from_mse(mse, peak)


def _defense_trace(spec, audit, row_norms):
    """Fisher trace of one client's defended observation."""
    rn = np.asarray(getattr(row_norms, "values", row_norms), dtype=np.float64)
    if spec.kind == "none":
        return float("inf") if rn.sum() > 0 else 0.0
    if spec.kind in ("noise", "optimal_noise"):
        return fisher_trace_noise(rn, audit.sigma_used)
    if spec.kind in ("dpsgd", "optimal_dpsgd"):
        rn_eff = rn * (~audit.clip_mask)
        return fisher_trace_noise(rn_eff, audit.sigma_used)
    if spec.kind in ("prune", "optimal_prune"):
        return fisher_trace_prune(rn, audit.pruned_set, spec.noise_eps)
    raise ConfigError(f"no trace rule for defense kind {spec.kind!r}")


@dataclass(frozen=True, eq=False)
class SweepSettings:
    """How each sweep point is evaluated."""

    attack: AttackConfig
    prior: PriorSpec = field(default_factory=PriorSpec)
    seeds: tuple = (0,)
    updates: int = 5
    attack_observation: str = "averaged"
    peak: float = 1.0
    experiment_id: str = "sweep"

    def __post_init__(self):
        if self.attack_observation not in ("averaged", "per-client"):
            raise ConfigError("attack_observation must be 'averaged' or 'per-client'")
        if self.updates < 1:
            raise ConfigError("updates must be >= 1")


def _sweep_point(args):
    model, init_values, dataset, spec, flcfg, settings, seed = args
    params = ParamVector(init_values, model)
    flc = replace(flcfg, defense=spec, seed=seed, rounds=settings.updates)
    shards = _shards(dataset, flc)

    # round-1 observation: per-client batches, gradients, defenses
    batches, defended, norms = [], [], []
    weights = np.asarray([flc.samples_for(c) for c in range(flc.num_clients)], dtype=np.float64)
    for c in range(flc.num_clients):
        batch = _client_batch(dataset, shards[c], flc.samples_for(c), _rng(seed, 0, c, 0))
        g = param_gradient(model, params, batch)
        rn = _row_norms(model, params, batch, spec, flc.row_norms_mode, _rng(seed, 0, c, 2))
        out = defend(g, spec, row_norms=rn, rng=_rng(seed, 0, c, 1))
        batches.append(batch)
        defended.append(out)
        norms.append(rn)

    truth = np.concatenate([b.inputs for b in batches])
    labels = np.concatenate([b.labels for b in batches])
    attack_rng = _rng(seed, 0, 0, 3)
    if settings.attack_observation == "averaged":
        observed = aggregate(defended, weights)
        result = invert(
            model, params, observed, truth.shape, settings.attack, attack_rng,
            labels=labels, truth=truth, peak=settings.peak,
        )
        mse, psnr = result.mse, result.psnr
    else:
        per_mse = []
        for c in range(flc.num_clients):
            res = invert(
                model, params, defended[c], batches[c].inputs.shape, settings.attack,
                _rng(seed, 0, c, 3), labels=batches[c].labels,
                truth=batches[c].inputs, peak=settings.peak,
            )
            per_mse.append(res.mse)
        mse = float(np.mean(per_mse))
        psnr = psnr_from_mse(mse, settings.peak)

    # bound: client observations are independent and cover disjoint inputs
    total_trace = 0.0
    for c in range(flc.num_clients):
        total_trace += _defense_trace(spec, defended[c].audit, norms[c])
    m_total = int(truth.size)
    report = reconstruction_bound(total_trace, m_total, settings.prior)

    # utility: short training on the fixed round-1 union batch
    union = Batch(truth, labels=labels)
    opt = _ServerOptimizer(flc.server_optimizer, model.param_count)
    values = params.values.copy()
    for step in range(settings.updates):
        step_defended = []
        for c in range(flc.num_clients):
            p = ParamVector(values, model)
            g = param_gradient(model, p, batches[c])
            rn = None
            if spec.needs_row_norms:
                rn = _row_norms(model, p, batches[c], spec, flc.row_norms_mode, _rng(seed, step, c, 12))
            step_defended.append(defend(g, spec, row_norms=rn, rng=_rng(seed, step, c, 11)))
        values = opt.step(values, aggregate(step_defended, weights))
    train_loss = forward_loss(model, ParamVector(values, model), union)

    sigma_norms = [
        float(np.linalg.norm(d.audit.sigma_used)) if d.audit.sigma_used is not None else 0.0
        for d in defended
    ]
    if spec.ratio is not None:
        prune_ratio = spec.ratio
    elif spec.kind in ("prune", "optimal_prune"):
        prune_ratio = float(np.mean([len(d.audit.pruned_set) / model.param_count for d in defended]))
    else:
        prune_ratio = None
    return MetricRow(
        experiment_id=settings.experiment_id,
        defense=spec.describe(),
        seed=seed,
        round=settings.updates,
        mse=mse,
        psnr=psnr,
        train_loss=train_loss,
        fisher_trace=total_trace,
        bound_value=report.bound_value,
        noise_frobenius=float(np.mean(sigma_norms)),
        prune_ratio=prune_ratio,
    )


def sweep(
    model: ModelSpec,
    init_params: ParamVector,
    dataset,
    grid,
    flcfg: FLConfig,
    settings: SweepSettings,
    jobs: int = 1,
) -> list[MetricRow]:
    """Evaluate every defense in the grid at every seed.

    Each point yields one MetricRow: attack MSE/PSNR on the round-1
    observation, the fisher trace and reconstruction bound, and the training
    loss after the short update run.  Points are independent, so workers may
    run in parallel; rows come back in grid-major order either way.
    """
    grid = list(grid)
    if not grid:
        raise ConfigError("sweep needs a non-empty defense grid")
    tasks = [
        (model, init_params.values, dataset, spec, flcfg, settings, seed)
        for spec in grid
        for seed in settings.seeds
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_point, tasks))
    return [_sweep_point(t) for t in tasks]
