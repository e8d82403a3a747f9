"""Toy-scale first-frame propagation: adaptive rotary geometry, head taxonomy and self-distillation."""

from .data import DataParams, FfpSample, ToyCodec, gen_dataset, gen_sample
from .dit import ConditioningPack, DitConfig, ToyDiT, assemble_conditioning, load_model, save_model
from .errors import ConfigurationError, FFPError, InvalidArgument, NonFiniteLoss, NumericInputError
from .heads import HeadPartition, classify_head, classify_model, compute_density_grid, vote_partition
from .losses import LossWeights, flow_match_loss, mmd2, mmd_loss, motion_loss, total_loss
from .rope import HeadKind, RopeCoefficients, RopeFrequencyConfig, ast_rotate, build_position_grid, rotate

__all__ = [
    "DataParams",
    "FfpSample",
    "ToyCodec",
    "gen_dataset",
    "gen_sample",
    "ConditioningPack",
    "DitConfig",
    "ToyDiT",
    "assemble_conditioning",
    "load_model",
    "save_model",
    "ConfigurationError",
    "FFPError",
    "InvalidArgument",
    "NonFiniteLoss",
    "NumericInputError",
    "HeadPartition",
    "classify_head",
    "classify_model",
    "compute_density_grid",
    "vote_partition",
    "LossWeights",
    "flow_match_loss",
    "mmd2",
    "mmd_loss",
    "motion_loss",
    "total_loss",
    "HeadKind",
    "RopeCoefficients",
    "RopeFrequencyConfig",
    "ast_rotate",
    "build_position_grid",
    "rotate",
]

__version__ = "0.1.0"
