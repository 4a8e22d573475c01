"""Gradient defenses: noise, DP-SGD, pruning, and their per-parameter
optimal variants.

The optimal allocations follow the locally optimal forms: noise variance
proportional to sqrt(row_norm_i) / |g_i|, and pruning ordered by
k'_i = sqrt(row_norm_i) / |g_i| (leak per unit of retained utility).
Coordinates with the largest k' are pruned first; that is the ordering the
optimality proof derives and the one exhaustive subset search confirms,
so the magnitude rule "prune the smallest scores" applies to retention
priorities like |g_i|, not to k' itself.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError, InfeasibleBudgetError

DEFENSE_KINDS = (
    "none",
    "noise",
    "dpsgd",
    "prune",
    "optimal_noise",
    "optimal_dpsgd",
    "optimal_prune",
)


@dataclass(frozen=True, eq=False)
class DefenseSpec:
    kind: str = "none"
    sigma: float | np.ndarray | None = None
    clip: float | None = None
    ratio: float | None = None
    utility_budget: float | None = None
    noise_eps: float = 0.0
    noise_multiplier: float | None = None
    frobenius: float | None = None
    sketch_samples: int = 10
    grad_floor: float = 1e-6
    cap: float | str | None = None
    literal_alg1: bool = False

    def __post_init__(self):
        if self.kind not in DEFENSE_KINDS:
            raise ConfigError(f"unknown defense kind {self.kind!r}")
        if self.kind in ("noise", "dpsgd"):
            if self.sigma is None:
                raise ConfigError(f"{self.kind} needs per-parameter variances (sigma)")
            if np.any(np.asarray(self.sigma) < 0):
                raise ConfigError("noise variances must be >= 0")
        if self.kind in ("dpsgd", "optimal_dpsgd"):
            if self.clip is None or self.clip <= 0:
                raise ConfigError(f"{self.kind} needs a positive clip threshold")
        if self.kind in ("prune", "optimal_prune"):
            if (self.ratio is None) == (self.utility_budget is None):
                raise ConfigError(f"{self.kind} needs exactly one of ratio / utility_budget")
            if self.ratio is not None and not 0.0 <= self.ratio <= 1.0:
                raise ConfigError(f"prune ratio must lie in [0, 1], got {self.ratio}")
            if self.noise_eps < 0:
                raise ConfigError("noise_eps must be >= 0")
        if self.kind in ("optimal_noise", "optimal_dpsgd"):
            if (self.noise_multiplier is None) == (self.frobenius is None):
                raise ConfigError(
                    f"{self.kind} needs exactly one of noise_multiplier / frobenius"
                )
        if self.kind.startswith("optimal"):
            if self.grad_floor <= 0:
                raise ConfigError("grad_floor must be > 0")
            if self.sketch_samples < 1:
                raise ConfigError("sketch_samples must be >= 1")
            if self.cap is not None and self.cap != "auto" and self.cap <= 0:
                raise ConfigError("cap must be positive, 'auto', or absent")

    @property
    def needs_row_norms(self):
        return self.kind.startswith("optimal")

    def describe(self) -> str:
        """Stable one-token descriptor for CSV rows."""
        parts = []
        for f in fields(self):
            if f.name == "kind":
                continue
            v = getattr(self, f.name)
            if v is None or (f.name == "sketch_samples" and v == 10):
                continue
            if f.name == "grad_floor" and v == 1e-6:
                continue
            if f.name in ("noise_eps",) and v == 0.0:
                continue
            if f.name == "literal_alg1" and not v:
                continue
            if isinstance(v, np.ndarray):
                v = f"vec{v.shape[0]}" if v.ndim else f"{float(v):.6g}"
            elif isinstance(v, float):
                v = f"{v:.6g}"
            parts.append(f"{f.name}={v}")
        return self.kind if not parts else f"{self.kind}({';'.join(parts)})"

    def to_config(self):
        out = {"kind": self.kind}
        for f in fields(self):
            if f.name == "kind":
                continue
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, np.ndarray):
                v = v.tolist()
            out[f.name] = v
        return out

    @classmethod
    def from_config(cls, cfg):
        cfg = dict(cfg)
        known = {f.name for f in fields(cls)}
        extra = set(cfg) - known
        if extra:
            raise ConfigError(f"unknown defense keys: {sorted(extra)}")
        if "sigma" in cfg and isinstance(cfg["sigma"], list):
            cfg["sigma"] = np.asarray(cfg["sigma"], dtype=np.float64)
        return cls(**cfg)


@dataclass
class DefenseAudit:
    """What the defense actually did, for bounds and logging; never shown
    to the attacker."""

    kind: str
    sigma_used: np.ndarray | None = None
    pruned_set: np.ndarray | None = None
    clip_mask: np.ndarray | None = None
    k_index: np.ndarray | None = None
    noise_multiplier: float | None = None


@dataclass
class DefendedGradient:
    values: np.ndarray
    audit: DefenseAudit


def _as_grad(g):
    g = np.asarray(g, dtype=np.float64).reshape(-1)
    if not np.isfinite(g).all():
        raise ConfigError("gradient vector contains non-finite entries")
    return g


def _as_row_norms(row_norms):
    values = getattr(row_norms, "values", row_norms)
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if (values < 0).any():
        raise ConfigError("row norms must be >= 0")
    return values


def clip_gradient(g, clip: float) -> np.ndarray:
    """Per-coordinate clamp to [-clip, clip]."""
    if clip <= 0:
        raise ConfigError(f"clip threshold must be positive, got {clip}")
    return np.clip(_as_grad(g), -clip, clip)


def apply_noise(g, sigma, rng: np.random.Generator) -> DefendedGradient:
    """Add independent Gaussian noise with per-parameter variances."""
    g = _as_grad(g)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), g.shape).copy()
    if (sigma < 0).any():
        raise ConfigError("noise variances must be >= 0")
    y = g + np.sqrt(sigma) * rng.standard_normal(g.shape)
    return DefendedGradient(y, DefenseAudit(kind="noise", sigma_used=sigma))


def prune_by_index(
    g,
    scores,
    *,
    ratio: float | None = None,
    utility_budget: float | None = None,
    prune_smallest: bool = True,
) -> DefendedGradient:
    """Zero out coordinates chosen by score order.

    Ratio mode prunes floor(ratio * d) coordinates; utility mode keeps
    pruning while the retained sum of squared gradients stays >= budget and
    stops at the first coordinate that would break it.  Ties go to the
    lower index.
    """
    g = _as_grad(g)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.shape != g.shape:
        raise ConfigError(f"scores length {scores.shape[0]} != gradient length {g.shape[0]}")
    if (ratio is None) == (utility_budget is None):
        raise ConfigError("need exactly one of ratio / utility_budget")
    order = np.argsort(scores if prune_smallest else -scores, kind="stable")
    if ratio is not None:
        if not 0.0 <= ratio <= 1.0:
            raise ConfigError(f"ratio must lie in [0, 1], got {ratio}")
        pruned = order[: int(np.floor(ratio * g.shape[0]))]
    else:
        total = float(np.sum(g * g))
        if utility_budget > total:
            raise InfeasibleBudgetError(
                f"utility budget {utility_budget} exceeds total squared gradient {total}"
            )
        retained = total
        taken = []
        for idx in order:
            if retained - g[idx] ** 2 >= utility_budget:
                taken.append(idx)
                retained -= g[idx] ** 2
            else:
                break
        pruned = np.asarray(taken, dtype=np.int64)
    y = g.copy()
    y[pruned] = 0.0
    return DefendedGradient(y, DefenseAudit(kind="prune", pruned_set=np.sort(pruned)))


def _sigma_base(row_norms, literal_alg1):
    return row_norms if literal_alg1 else np.sqrt(row_norms)


def _apply_cap(sigma, cap):
    if cap is None:
        return sigma
    if cap == "auto":
        med = float(np.median(sigma))
        if med <= 0:
            return sigma
        cap = 1e3 * med
    return np.minimum(sigma, cap)


def optimal_noise_sigma(
    g,
    row_norms,
    noise_multiplier: float,
    grad_floor: float = 1e-6,
    cap=None,
    literal_alg1: bool = False,
) -> np.ndarray:
    """Per-parameter variances sqrt(row_norm_i) / max(|g_i|, floor), scaled.

    The cap implements the zero-gradient rule for piecewise-constant
    activations: coordinates whose gradient vanishes while the row norm
    does not would otherwise request unbounded noise.
    """
    g = _as_grad(g)
    row_norms = _as_row_norms(row_norms)
    if grad_floor <= 0:
        raise ConfigError("grad_floor must be > 0")
    sigma = noise_multiplier * _sigma_base(row_norms, literal_alg1) / np.maximum(np.abs(g), grad_floor)
    return _apply_cap(sigma, cap)


def optimal_dpsgd_sigma(
    g,
    row_norms,
    noise_multiplier: float,
    clip: float,
    grad_floor: float = 1e-6,
    cap=None,
    literal_alg1: bool = False,
) -> np.ndarray:
    """Optimal-noise variances with zeros where the pre-clip |g_i| >= clip.

    Clipped coordinates sit on the clamp plateau, leak nothing locally, and
    therefore receive no noise.
    """
    if clip is None or clip <= 0:
        raise ConfigError("clip threshold must be positive")
    g = _as_grad(g)
    sigma = optimal_noise_sigma(g, row_norms, noise_multiplier, grad_floor, cap, literal_alg1)
    sigma = sigma.copy()
    sigma[np.abs(g) >= clip] = 0.0
    return sigma


def optimal_prune_scores(g, row_norms, grad_floor: float = 1e-6) -> np.ndarray:
    """Leak-per-utility index k'_i = sqrt(row_norm_i) / max(|g_i|, floor).

    Larger k' means worse leak for the utility the coordinate carries, so
    the optimal defense prunes the largest values first.  A coordinate with
    zero gradient and zero row norm scores 0: retaining or pruning it is
    equally harmless.
    """
    g = _as_grad(g)
    row_norms = _as_row_norms(row_norms)
    if grad_floor <= 0:
        raise ConfigError("grad_floor must be > 0")
    return np.sqrt(row_norms) / np.maximum(np.abs(g), grad_floor)


def lambda_for_utility_budget(g, row_norms, budget: float, grad_floor: float = 1e-6) -> float:
    """Noise multiplier making the second-order utility equal exactly -budget."""
    g = _as_grad(g)
    unit = optimal_noise_sigma(g, row_norms, 1.0, grad_floor)
    denom = float(np.sum(g * g * unit))
    if denom == 0.0:
        raise ConfigError("zero gradient/row norms: utility budget cannot pin lambda")
    return budget / denom


def lambda_for_frobenius(
    g, row_norms, target: float, grad_floor: float = 1e-6, clip=None, literal_alg1=False
) -> float:
    """Noise multiplier making ||Sigma||_F (diagonal) equal the target."""
    g = _as_grad(g)
    if clip is not None:
        unit = optimal_dpsgd_sigma(g, row_norms, 1.0, clip, grad_floor, None, literal_alg1)
    else:
        unit = optimal_noise_sigma(g, row_norms, 1.0, grad_floor, None, literal_alg1)
    norm = float(np.linalg.norm(unit))
    if norm == 0.0:
        return 0.0
    return target / norm


def _resolve_multiplier(spec, g, row_norms):
    if spec.noise_multiplier is not None:
        return spec.noise_multiplier
    clip = spec.clip if spec.kind == "optimal_dpsgd" else None
    return lambda_for_frobenius(
        g, row_norms, spec.frobenius, spec.grad_floor, clip, spec.literal_alg1
    )


def defend(
    g,
    spec: DefenseSpec,
    row_norms=None,
    rng: np.random.Generator | None = None,
) -> DefendedGradient:
    """Apply a defense spec: clip, then prune or allocate noise, then sample.

    Optimal variants require row norms computed upstream on the same batch.
    """
    g = _as_grad(g)
    if spec.needs_row_norms and row_norms is None:
        raise ConfigError(f"{spec.kind} requires row norms")
    if spec.kind != "none" and rng is None and not (
        spec.kind in ("prune", "optimal_prune") and spec.noise_eps == 0.0
    ):
        raise ConfigError(f"{spec.kind} requires a random generator")

    if spec.kind == "none":
        return DefendedGradient(g.copy(), DefenseAudit(kind="none"))

    if spec.kind == "noise":
        return apply_noise(g, spec.sigma, rng)

    if spec.kind == "dpsgd":
        clipped = clip_gradient(g, spec.clip)
        out = apply_noise(clipped, spec.sigma, rng)
        out.audit.kind = "dpsgd"
        out.audit.clip_mask = np.abs(g) >= spec.clip
        return out

    if spec.kind == "optimal_noise":
        rn = _as_row_norms(row_norms)
        lam = _resolve_multiplier(spec, g, rn)
        sigma = optimal_noise_sigma(g, rn, lam, spec.grad_floor, spec.cap, spec.literal_alg1)
        out = apply_noise(g, sigma, rng)
        out.audit.kind = "optimal_noise"
        out.audit.noise_multiplier = lam
        return out

    if spec.kind == "optimal_dpsgd":
        rn = _as_row_norms(row_norms)
        lam = _resolve_multiplier(spec, g, rn)
        sigma = optimal_dpsgd_sigma(
            g, rn, lam, spec.clip, spec.grad_floor, spec.cap, spec.literal_alg1
        )
        out = apply_noise(clip_gradient(g, spec.clip), sigma, rng)
        out.audit.kind = "optimal_dpsgd"
        out.audit.clip_mask = np.abs(g) >= spec.clip
        out.audit.noise_multiplier = lam
        return out

    # pruning family
    if spec.kind == "prune":
        scores = np.abs(g)
        defended = prune_by_index(
            g, scores, ratio=spec.ratio, utility_budget=spec.utility_budget, prune_smallest=True
        )
    else:
        scores = optimal_prune_scores(g, row_norms, spec.grad_floor)
        defended = prune_by_index(
            g, scores, ratio=spec.ratio, utility_budget=spec.utility_budget, prune_smallest=False
        )
        defended.audit.k_index = scores
    defended.audit.kind = spec.kind
    if spec.noise_eps > 0.0:
        keep = np.ones(g.shape[0], dtype=bool)
        keep[defended.audit.pruned_set] = False
        noise = np.sqrt(spec.noise_eps) * rng.standard_normal(g.shape)
        defended.values = defended.values + noise * keep
        defended.audit.sigma_used = spec.noise_eps * keep.astype(np.float64)
    return defended
