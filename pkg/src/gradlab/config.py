"""Versioned experiment configuration: YAML in, validated objects out.

Unknown keys are hard errors everywhere; a silently ignored typo in a sweep
grid would invalidate every row downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from .attack import AttackConfig
from .bounds import PriorSpec
from .data import Dataset, load_idx, synth_blobs
from .defenses import DefenseSpec
from .errors import ConfigError
from .flsim import FLConfig, OptimizerSpec, SweepSettings
from .models import Batch, ModelSpec, ParamVector, init_params

CONFIG_VERSION = 1

_TOP_KEYS = {
    "config_version",
    "experiment",
    "seed",
    "output_dir",
    "model",
    "params",
    "dataset",
    "defense",
    "grid",
    "attack",
    "fl",
    "prior",
    "bound",
    "sweep",
    "train",
}


def _require(cfg, key, ctx):
    if key not in cfg:
        raise ConfigError(f"{ctx}: missing required key {key!r}")
    return cfg[key]


def _check_keys(cfg, allowed, ctx):
    if not isinstance(cfg, dict):
        raise ConfigError(f"{ctx}: expected a mapping, got {type(cfg).__name__}")
    extra = set(cfg) - set(allowed)
    if extra:
        raise ConfigError(f"{ctx}: unknown keys {sorted(extra)}")


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    output_dir: str
    raw: dict = field(repr=False)

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        _check_keys(raw, _TOP_KEYS, str(path))
        version = _require(raw, "config_version", str(path))
        if version != CONFIG_VERSION:
            raise ConfigError(f"{path}: config_version {version} unsupported (expected {CONFIG_VERSION})")
        return cls(
            experiment=str(_require(raw, "experiment", str(path))),
            seed=int(raw.get("seed", 0)),
            output_dir=str(raw.get("output_dir", "out")),
            raw=raw,
        )

    # section builders ------------------------------------------------------

    def model(self) -> ModelSpec:
        return ModelSpec.from_config(_require(self.raw, "model", "config"))

    def params(self, model: ModelSpec) -> ParamVector:
        cfg = self.raw.get("params")
        if cfg is None:
            return init_params(model, np.random.default_rng([self.seed, 100]))
        _check_keys(cfg, {"values", "init_seed"}, "params")
        if "values" in cfg:
            return ParamVector(np.asarray(cfg["values"], dtype=np.float64), model)
        return init_params(model, np.random.default_rng([int(cfg["init_seed"]), 100]))

    def data(self):
        """Returns ("batch", Batch) for inline data or ("dataset", Dataset)."""
        cfg = _require(self.raw, "dataset", "config")
        kind = _require(cfg, "kind", "dataset")
        if kind == "inline":
            _check_keys(cfg, {"kind", "inputs", "labels", "targets"}, "dataset")
            return "batch", Batch(
                np.asarray(cfg["inputs"], dtype=np.float64),
                labels=cfg.get("labels"),
                targets=cfg.get("targets"),
            )
        if kind == "idx":
            _check_keys(cfg, {"kind", "images", "labels", "limit"}, "dataset")
            ds = load_idx(_require(cfg, "images", "dataset"), cfg.get("labels"), name="idx")
            if cfg.get("limit"):
                ds = ds.subset(np.arange(int(cfg["limit"])))
            return "dataset", ds
        if kind == "synth":
            _check_keys(cfg, {"kind", "m", "classes", "n", "spread", "seed"}, "dataset")
            rng = np.random.default_rng([int(cfg.get("seed", self.seed)), 200])
            return "dataset", synth_blobs(
                int(_require(cfg, "m", "dataset")),
                int(_require(cfg, "classes", "dataset")),
                int(_require(cfg, "n", "dataset")),
                float(cfg.get("spread", 0.05)),
                rng,
            )
        raise ConfigError(f"dataset: unknown kind {kind!r}")

    def batch(self, model: ModelSpec, size: int | None = None) -> Batch:
        """A deterministic batch for attack/bound: inline data as-is, else the
        first `size` dataset samples reshaped to the model input."""
        kind, data = self.data()
        if kind == "batch":
            return data
        size = size or min(4, data.inputs.shape[0])
        inputs = data.inputs[:size].reshape((size,) + model.input_shape)
        return Batch(inputs, labels=data.labels[:size])

    def defense(self) -> DefenseSpec:
        return DefenseSpec.from_config(_require(self.raw, "defense", "config"))

    def grid(self):
        entries = _require(self.raw, "grid", "config")
        if not isinstance(entries, list) or not entries:
            raise ConfigError("grid: expected a non-empty list of defenses")
        return [DefenseSpec.from_config(e) for e in entries]

    def attack(self) -> AttackConfig:
        return AttackConfig.from_config(self.raw.get("attack", {}))

    def prior(self) -> PriorSpec:
        return PriorSpec.from_config(self.raw.get("prior", {"kind": "flat"}))

    def fl(self) -> FLConfig:
        cfg = dict(self.raw.get("fl", {}))
        _check_keys(
            cfg,
            {
                "num_clients",
                "per_round_samples",
                "rounds",
                "shard_sizes",
                "refresh_every",
                "row_norms_mode",
                "optimizer",
            },
            "fl",
        )
        opt = OptimizerSpec.from_config(cfg.pop("optimizer", {}))
        if "shard_sizes" in cfg and cfg["shard_sizes"] is not None:
            cfg["shard_sizes"] = tuple(cfg["shard_sizes"])
        if "per_round_samples" in cfg and isinstance(cfg["per_round_samples"], list):
            cfg["per_round_samples"] = tuple(cfg["per_round_samples"])
        return FLConfig(seed=self.seed, server_optimizer=opt, **cfg)

    def bound_options(self):
        cfg = dict(self.raw.get("bound", {}))
        _check_keys(cfg, {"row_norms", "batch_size"}, "bound")
        mode = cfg.get("row_norms", "exact")
        if mode not in ("exact", "sketch"):
            raise ConfigError("bound.row_norms must be 'exact' or 'sketch'")
        return mode, cfg.get("batch_size")

    def sweep_settings(self) -> SweepSettings:
        cfg = dict(self.raw.get("sweep", {}))
        _check_keys(
            cfg, {"seeds", "updates", "attack_observation", "peak", "batch_size"}, "sweep"
        )
        seeds = tuple(int(s) for s in cfg.get("seeds", [self.seed]))
        return SweepSettings(
            attack=self.attack(),
            prior=self.prior(),
            seeds=seeds,
            updates=int(cfg.get("updates", 5)),
            attack_observation=cfg.get("attack_observation", "averaged"),
            peak=float(cfg.get("peak", 1.0)),
            experiment_id=self.experiment,
        )

    def train_options(self):
        cfg = dict(self.raw.get("train", {}))
        _check_keys(cfg, {"eval_size", "smooth_window"}, "train")
        return int(cfg.get("eval_size", 0)), int(cfg.get("smooth_window", 8))
