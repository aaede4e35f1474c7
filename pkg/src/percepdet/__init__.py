"""Detecting AI-generated images with perceptual-quality feature spaces.

The package pairs frozen perceptual feature extractors (a self-contained
bandpass-statistics backend, or externally exported deep features) with a
small trainable detector head, plus the evaluation harness for per-generator
accuracy, threshold calibration, robustness sweeps and separability
diagnostics.
"""
from .classifier import (
    ClassifierModel,
    LossBatch,
    TrainConfig,
    backward,
    bce_loss,
    contrastive_loss,
    forward,
    forward_batch,
    init_model,
    load_model,
    model_digest,
    predict_proba,
    save_model,
    total_loss,
    train,
    with_threshold,
)
from .errors import (
    FileFormatError,
    ImageError,
    NumericalError,
    PercepdetError,
    ValidationError,
)
from .evaluation import (
    EvalReport,
    RobustnessPoint,
    Separability,
    SubsetAccuracy,
    calibrate_threshold,
    emit_report,
    evaluate,
    fisher_ratio,
    mean_accuracy,
    pca_project2d,
    read_report,
    report_from_dict,
    report_to_dict,
    robustness_sweep,
    write_pca2d,
)
from .features import (
    FeatureRecord,
    FeatureSet,
    FileBackend,
    NssBackend,
    extract_features,
    featureset_digest,
    read_feature_file,
    resolve_backend,
    write_feature_file,
)
from .imaging import AugmentPolicy, Degradation, ImagePlane, apply_policy, decode_image
from .manifest import (
    Manifest,
    SampleRecord,
    group_by_generator,
    load_manifest,
    resolve_path,
    save_manifest,
    split_view,
    subset_groups,
    validate_manifest,
)
from .nss import AggdFit, GgdFit, extract_nss, fit_aggd, fit_ggd, mscn

__version__ = "0.1.0"

__all__ = [
    "AggdFit",
    "AugmentPolicy",
    "ClassifierModel",
    "Degradation",
    "EvalReport",
    "FeatureRecord",
    "FeatureSet",
    "FileBackend",
    "FileFormatError",
    "GgdFit",
    "ImageError",
    "ImagePlane",
    "LossBatch",
    "Manifest",
    "NssBackend",
    "NumericalError",
    "PercepdetError",
    "RobustnessPoint",
    "SampleRecord",
    "Separability",
    "SubsetAccuracy",
    "TrainConfig",
    "ValidationError",
    "apply_policy",
    "backward",
    "bce_loss",
    "calibrate_threshold",
    "contrastive_loss",
    "decode_image",
    "emit_report",
    "evaluate",
    "extract_features",
    "extract_nss",
    "featureset_digest",
    "fisher_ratio",
    "fit_aggd",
    "fit_ggd",
    "forward",
    "forward_batch",
    "group_by_generator",
    "init_model",
    "load_manifest",
    "load_model",
    "mean_accuracy",
    "model_digest",
    "mscn",
    "pca_project2d",
    "predict_proba",
    "read_feature_file",
    "read_report",
    "report_from_dict",
    "report_to_dict",
    "resolve_backend",
    "resolve_path",
    "robustness_sweep",
    "save_manifest",
    "save_model",
    "split_view",
    "subset_groups",
    "total_loss",
    "train",
    "validate_manifest",
    "with_threshold",
    "write_feature_file",
    "write_pca2d",
]
