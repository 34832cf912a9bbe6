"""Kernel-smoothed bin-embedding additive models with gated feature selection.

Tabular features are quantile-binned (index 0 reserved for missing
values), each bin gets a learned embedding smoothed across neighboring
bins by a Gaussian kernel, and a small per-feature network turns the
embedding into an additive contribution. Smooth-step gates saturate at
exactly 0 and 1, so feature selection prunes exactly. Supported tasks:
regression, binary classification, and right-censored survival with an
inverse-censoring-weighted loss.
"""

from .core import (
    KernelConfig,
    ModelCore,
    kernel_weights,
    smooth_step,
    smooth_step_grad,
    smoothing_operator,
)
from .data import (
    BinMap,
    BinnedMatrix,
    FeatureSchema,
    apply_schema_override,
    fit_bins,
    infer_schema,
    read_csv,
    split_folds,
    transform,
)
from .errors import ConfigError, DataError, NamliteError, TrainingError
from .explain import (
    CalibrationExport,
    ImportanceReport,
    PairShapeExport,
    ShapeFunctionExport,
    calibration,
    calibration_to_csv,
    export_to_json,
    feature_importance,
    importance_to_csv,
    pair_shape_function,
    pair_shape_to_csv,
    render_svg,
    shape_function,
    shape_to_csv,
)
from .persist import (
    dumps_model,
    load_model,
    loads_model,
    model_hash,
    save_model,
)
from .select import (
    PathRecord,
    PathResult,
    SelectionConfig,
    SelectionResult,
    default_gamma,
    lookup_feats,
    regularization_path,
    select_features,
)
from .survival import (
    CoxModel,
    StepSurvivalCurve,
    calibration_table,
    censoring_curve,
    cox_fit,
    eval_time_grid,
    kaplan_meier,
)
from .train import (
    EnsembleModel,
    SingleSplitModel,
    TrainConfig,
    fit,
    loss_bce,
    loss_ipcw,
    loss_mse,
    predict,
)

__version__ = "0.1.0"

__all__ = [
    "BinMap",
    "BinnedMatrix",
    "CalibrationExport",
    "ConfigError",
    "CoxModel",
    "DataError",
    "EnsembleModel",
    "FeatureSchema",
    "ImportanceReport",
    "KernelConfig",
    "ModelCore",
    "NamliteError",
    "PairShapeExport",
    "PathRecord",
    "PathResult",
    "SelectionConfig",
    "SelectionResult",
    "ShapeFunctionExport",
    "SingleSplitModel",
    "StepSurvivalCurve",
    "TrainConfig",
    "TrainingError",
    "apply_schema_override",
    "calibration",
    "calibration_table",
    "calibration_to_csv",
    "censoring_curve",
    "cox_fit",
    "default_gamma",
    "dumps_model",
    "eval_time_grid",
    "export_to_json",
    "feature_importance",
    "fit",
    "fit_bins",
    "importance_to_csv",
    "infer_schema",
    "kaplan_meier",
    "kernel_weights",
    "load_model",
    "loads_model",
    "lookup_feats",
    "loss_bce",
    "loss_ipcw",
    "loss_mse",
    "model_hash",
    "pair_shape_function",
    "pair_shape_to_csv",
    "predict",
    "read_csv",
    "regularization_path",
    "render_svg",
    "save_model",
    "select_features",
    "shape_function",
    "shape_to_csv",
    "smooth_step",
    "smooth_step_grad",
    "smoothing_operator",
    "split_folds",
    "transform",
    "__version__",
]
