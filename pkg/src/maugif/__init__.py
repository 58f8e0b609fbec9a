"""Mechanism-aware unsupervised general image fusion with dual cross-image autoencoders.

Two encoders map a source pair onto shared content, two decoders inject each
source's modality-specific features back, and fusion reuses a trained
decoder on the other source.  Additive tasks (infrared-visible, multi-focus,
medical) inject a gated residual; multiplicative tasks (hyperspectral with
multispectral) treat the sources as degraded views of a common latent.
"""

from .degradation import (
    DegradationSpec,
    FocusSpec,
    SimPair,
    simulate_hmf_pair,
    simulate_mff_pair,
    simulate_vif_pair,
)
from .estimator import FusionEstimator
from .exceptions import (
    ConfigError,
    DimensionError,
    FormatError,
    GraphError,
    MaugifError,
    NumericError,
    StateError,
    UsageError,
)
from .imageio import load_image, load_mbf, load_png, save_image, save_mbf, save_png
from .metrics import full_reference, fusion_metrics
from .model import (
    ADDITIVE,
    MULTIPLICATIVE,
    EncoderConfig,
    ModelPair,
    PsiSpec,
    build_model,
    decode,
    encode,
    extract_common,
    fuse,
    load_checkpoint,
    modality_feature,
    psi,
    residual_branch,
    save_checkpoint,
)
from .pipeline import TaskSpec, count_cost, run_task
from .training import TrainConfig, TrainReport, compute_losses, sample_patches, train

__version__ = "0.1.0"

__all__ = [
    "ADDITIVE", "MULTIPLICATIVE", "ConfigError", "DegradationSpec", "DimensionError",
    "EncoderConfig", "FocusSpec", "FormatError", "FusionEstimator", "GraphError", "MaugifError",
    "ModelPair", "NumericError", "PsiSpec", "SimPair", "StateError", "TaskSpec", "TrainConfig",
    "TrainReport", "UsageError", "build_model", "compute_losses", "count_cost", "decode",
    "encode", "extract_common", "full_reference", "fuse", "fusion_metrics", "load_checkpoint",
    "load_image", "load_mbf", "load_png", "modality_feature", "psi", "residual_branch",
    "run_task", "sample_patches", "save_checkpoint", "save_image", "save_mbf", "save_png",
    "simulate_hmf_pair", "simulate_mff_pair", "simulate_vif_pair", "train",
]
