"""Fisher traces, the reconstruction-error lower bound, and utility measures.

The bound applies to the total squared reconstruction error over the full
input vector (dimension m = batch size times per-sample dimension):

    bound = m^2 / (E_x[trace] + m * lambda_min(prior information))

Larger traces mean more leakage and a smaller guaranteed error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .defenses import DefenseAudit, DefenseSpec, clip_gradient
from .errors import ConfigError, NumericError


@dataclass(frozen=True)
class PriorSpec:
    """Analytic prior information: flat, or isotropic Gaussian with a given
    variance."""

    kind: str = "flat"
    variance: float | None = None

    def __post_init__(self):
        if self.kind not in ("flat", "isotropic_gaussian"):
            raise ConfigError(f"unknown prior kind {self.kind!r}")
        if self.kind == "isotropic_gaussian" and (self.variance is None or self.variance <= 0):
            raise ConfigError("isotropic_gaussian prior needs variance > 0")
        if self.kind == "flat" and self.variance is not None:
            raise ConfigError("flat prior takes no variance")

    @property
    def min_eigenvalue(self) -> float:
        """Smallest eigenvalue of the prior information matrix."""
        return 0.0 if self.kind == "flat" else 1.0 / self.variance

    def to_config(self):
        out = {"kind": self.kind}
        if self.variance is not None:
            out["variance"] = self.variance
        return out

    @classmethod
    def from_config(cls, cfg):
        cfg = dict(cfg)
        extra = set(cfg) - {"kind", "variance"}
        if extra:
            raise ConfigError(f"unknown prior keys: {sorted(extra)}")
        return cls(**cfg)


@dataclass
class BoundReport:
    fisher_trace: float
    data_dim: int
    prior_min_eigenvalue: float
    bound_value: float
    per_defense_traces: list | None = None


def _as_vec(x, what):
    v = np.asarray(getattr(x, "values", x), dtype=np.float64).reshape(-1)
    if (v < 0).any():
        raise ConfigError(f"{what} must be >= 0")
    return v


def fisher_trace_noise(row_norms, sigma) -> float:
    """Trace of the Fisher information for additive Gaussian noise:
    sum_i row_norm_i / sigma_i over coordinates that leak at all."""
    rn = _as_vec(row_norms, "row norms")
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), rn.shape)
    leaky = rn > 0
    if np.any(sigma[leaky] == 0):
        raise NumericError(
            "zero noise variance on a coordinate with positive row norm: "
            "information is infinite there"
        )
    return float(np.sum(rn[leaky] / sigma[leaky]))


def fisher_trace_prune(row_norms, pruned_set, eps: float) -> float:
    """Trace for noisy pruning: (1/eps) * sum of unpruned row norms.

    Pure pruning (eps = 0) reveals the survivors exactly, so the trace is
    reported as +inf whenever anything informative survives.
    """
    rn = _as_vec(row_norms, "row norms")
    if eps < 0:
        raise ConfigError(f"noise_eps must be >= 0, got {eps}")
    keep = np.ones(rn.shape[0], dtype=bool)
    if pruned_set is not None and len(pruned_set) > 0:
        keep[np.asarray(pruned_set, dtype=np.int64)] = False
    retained = float(np.sum(rn[keep]))
    if eps == 0.0:
        return math.inf if retained > 0 else 0.0
    return retained / eps


def reconstruction_bound(fisher_trace: float, m: int, prior: PriorSpec) -> BoundReport:
    """Lower bound on the total squared reconstruction error of any attacker."""
    if m < 1:
        raise ConfigError(f"data dimension must be >= 1, got {m}")
    if fisher_trace < 0:
        raise ConfigError(f"fisher trace must be >= 0, got {fisher_trace}")
    lam = prior.min_eigenvalue
    denom = fisher_trace + m * lam
    bound = math.inf if denom == 0.0 else m * m / denom
    return BoundReport(fisher_trace, m, lam, bound)


def mixed_bound(traces, m: int, prior: PriorSpec) -> BoundReport:
    """Bound for a mixture of defenses: weights average the traces."""
    traces = [(float(w), float(t)) for w, t in traces]
    if not traces:
        raise ConfigError("mixture needs at least one component")
    if any(w < 0 for w, _ in traces):
        raise ConfigError("mixture weights must be >= 0")
    total_w = sum(w for w, _ in traces)
    if abs(total_w - 1.0) > 1e-9:
        raise ConfigError(f"mixture weights must sum to 1, got {total_w}")
    mean_trace = sum(w * t for w, t in traces)
    report = reconstruction_bound(mean_trace, m, prior)
    report.per_defense_traces = traces
    return report


def _mean_sq(g_batches):
    gs = [np.asarray(g, dtype=np.float64).reshape(-1) for g in g_batches]
    if not gs:
        raise ConfigError("need at least one gradient batch")
    return gs, np.mean([g * g for g in gs], axis=0)


def utility_first_order(
    g_batches, spec: DefenseSpec, audit: DefenseAudit | None = None
) -> float:
    """Expected first-order loss decrease after one defended update.

    Unclipped noise leaves it at E||g||^2; pruning drops the pruned
    coordinates; clipping pairs each gradient with its clipped copy.
    """
    gs, mean_sq = _mean_sq(g_batches)
    if spec.kind in ("none", "noise", "optimal_noise"):
        return float(np.sum(mean_sq))
    if spec.kind in ("dpsgd", "optimal_dpsgd"):
        return float(np.mean([np.sum(g * clip_gradient(g, spec.clip)) for g in gs]))
    if spec.kind in ("prune", "optimal_prune"):
        if audit is None or audit.pruned_set is None:
            raise ConfigError("pruning utility needs the defense audit")
        keep = np.ones(mean_sq.shape[0], dtype=bool)
        keep[audit.pruned_set] = False
        return float(np.sum(mean_sq[keep]))
    raise ConfigError(f"no first-order utility rule for kind {spec.kind!r}")


def utility_second_order(g_batches, sigma) -> float:
    """Negative variance of the post-update loss: -sum_i E[g_i^2] sigma_i."""
    _, mean_sq = _mean_sq(g_batches)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), mean_sq.shape)
    if (sigma < 0).any():
        raise ConfigError("sigma must be >= 0")
    return float(-np.sum(mean_sq * sigma))
