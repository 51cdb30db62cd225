"""Chaotic dynamics as discrete autoregressive sequence modeling.

Trajectories are quantized on a per-dimension grid, embedded through a
factorized tensor-train coding layer, modeled by a small causal transformer
with one classification head per dimension, and trained coarse to fine by
grid refinement with linear prolongation of the learned cores.
"""

from .dynamics import (
    DivergenceCurve,
    IntegrationError,
    InitSpec,
    SystemSpec,
    TrajectorySet,
    default_init,
    divergence_curve,
    generate_dataset,
    integrate,
    load_trajectories,
    lorenz96,
    lorenz96_rhs,
    rossler,
    rossler_rhs,
    save_trajectories,
)
from .grid import GridSpec, fit_bounds
from .ttcoding import TTCores, embed, init_cores, materialize, plan_factors, prolong, restrict
from .seqmodel import ModelConfig, SeqModel, generate, generate_batch, per_head_loss, sequence_loss
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .train import (
    AdamW,
    StageReport,
    TrainConfig,
    TrainingDiverged,
    eval_loss,
    multigrid_train,
    prolong_model,
    train_stage,
)
from .evaluation import (
    RmseCurve,
    compare_to_divergence,
    containment_fraction,
    fraction_in_box,
    one_step_accuracy,
    rmse_curve,
    saturation_level,
)
from .config import PRESETS, ConfigError, RunConfig, resolve_config

__version__ = "0.1.0"
