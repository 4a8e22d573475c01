"""gradlab: gradient reconstruction attacks, optimal defenses, and the
reconstruction-error lower bound, at desk scale."""

from .attack import AttackConfig, AttackResult, invert, match_assignment
from .bounds import (
    BoundReport,
    PriorSpec,
    fisher_trace_noise,
    fisher_trace_prune,
    mixed_bound,
    reconstruction_bound,
    utility_first_order,
    utility_second_order,
)
from .data import Dataset, load_idx, synth_blobs
from .defenses import (
    DefendedGradient,
    DefenseAudit,
    DefenseSpec,
    apply_noise,
    clip_gradient,
    defend,
    optimal_dpsgd_sigma,
    optimal_noise_sigma,
    optimal_prune_scores,
    prune_by_index,
)
from .errors import ConfigError, DataError, GradlabError, InfeasibleBudgetError, NumericError
from .flsim import FLConfig, OptimizerSpec, SweepSettings, aggregate, client_round, mse_psnr, sweep, train
from .layers import Conv2d, Dense, Flatten, LeakyRelu, MaxPool
from .metrics import MetricRow, read_metrics, write_metrics
from .models import (
    Batch,
    ModelSpec,
    ParamVector,
    forward_loss,
    init_params,
    input_gradient,
    param_gradient,
)
from .probe import RowNormEstimate, exact_row_norms, grad_directional_derivative, sketch_row_norms

__version__ = "0.1.0"
