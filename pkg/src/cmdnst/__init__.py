"""Neural style transfer by aligning deep-feature distributions.

The output image is optimized so the empirical measures of its encoder
feature maps match those of a style image, under one of four interchangeable
distribution losses (central moment discrepancy, Gram/MMD, mean-and-std
matching, Gaussian 2-Wasserstein), mixed with a content term.
"""

from .encoder import (
    Architecture,
    Encoder,
    EncoderSpec,
    Preprocessing,
    WEIGHTS_ENV_VAR,
    extract_features,
    layer_channels,
    load_encoder,
)
from .errors import (
    CmdnstError,
    ConfigError,
    ContractViolationError,
    InvalidInputError,
    NumericError,
    OptimizationDivergedError,
    WeightLoadError,
)
from .experiments import (
    AblationCell,
    BenchmarkReport,
    LrStudyEntry,
    ToyFamilyResult,
    ToyFamilySpec,
    ablation_grid,
    array_content_hash,
    beta_sample_pair,
    content_hash,
    parse_toy_family,
    run_benchmark,
    run_lr_study,
    run_moment_ablation,
    run_toy_experiment,
    write_manifest,
)
from .images import load_image, save_image
from .losses import (
    LossFamily,
    LossParts,
    StyleLossConfig,
    StyleTargetStats,
    cmd_loss,
    content_loss,
    equal_layer_weights,
    gaussian_w2_loss,
    gram_matrix,
    mmd_gram_loss,
    moment_match_loss,
    parse_family,
    prepare_style_state,
    style_layer_loss,
    total_loss,
)
from .measures import (
    EmpiricalMeasure,
    FeatureMap,
    MomentSummary,
    feature_map_to_measure,
    marginal_central_moments,
    moment_gaps,
    sigmoid_transform,
)
from .optimizer import (
    AlignmentResult,
    InitMode,
    OptimizationConfig,
    OptimizationRun,
    StopReason,
    StyleTargets,
    align_samples,
    alpha_sweep,
    optimize_from_targets,
    prepare_targets,
    stylize,
)
from .weights import (
    convert_torch_state_dict,
    read_weight_archive,
    write_weight_archive,
)

__version__ = "0.1.0"

__all__ = [
    "AblationCell",
    "AlignmentResult",
    "Architecture",
    "BenchmarkReport",
    "CmdnstError",
    "ConfigError",
    "ContractViolationError",
    "EmpiricalMeasure",
    "Encoder",
    "EncoderSpec",
    "FeatureMap",
    "InitMode",
    "InvalidInputError",
    "LossFamily",
    "LossParts",
    "LrStudyEntry",
    "MomentSummary",
    "NumericError",
    "OptimizationConfig",
    "OptimizationDivergedError",
    "OptimizationRun",
    "Preprocessing",
    "StopReason",
    "StyleLossConfig",
    "StyleTargetStats",
    "StyleTargets",
    "ToyFamilyResult",
    "ToyFamilySpec",
    "WEIGHTS_ENV_VAR",
    "WeightLoadError",
    "ablation_grid",
    "align_samples",
    "alpha_sweep",
    "array_content_hash",
    "beta_sample_pair",
    "cmd_loss",
    "content_hash",
    "content_loss",
    "convert_torch_state_dict",
    "equal_layer_weights",
    "extract_features",
    "feature_map_to_measure",
    "gaussian_w2_loss",
    "gram_matrix",
    "layer_channels",
    "load_encoder",
    "load_image",
    "marginal_central_moments",
    "mmd_gram_loss",
    "moment_gaps",
    "moment_match_loss",
    "optimize_from_targets",
    "parse_family",
    "parse_toy_family",
    "prepare_style_state",
    "prepare_targets",
    "read_weight_archive",
    "run_benchmark",
    "run_lr_study",
    "run_moment_ablation",
    "run_toy_experiment",
    "save_image",
    "sigmoid_transform",
    "style_layer_loss",
    "stylize",
    "total_loss",
    "write_manifest",
    "write_weight_archive",
]
