"""Training-free full-reference IQA via causal channel screening and
optimal-transport feature distances."""

from .backbone import (
    BackboneHandle,
    BackboneSpec,
    FeatureStack,
    ImageTensor,
    extract_features,
    extract_features_for_bytes,
    load_backbone,
    preprocess,
)
from .confounder import (
    ConfounderDictionary,
    ScreeningConfig,
    complement,
    load_dictionary,
    save_dictionary,
    screen_channels,
)
from .estimator import CausalQualityScorer, PairScorer
from .intervention import (
    InterventionOutcome,
    InterventionSpec,
    apply_intervention,
    calibrate_stage_scales,
    channel_delta,
    realize_perturbation,
    sweep,
)
from .metrics import MetricsReport, evaluate, logistic4_fit, plcc, srcc
from .scoring import (
    QualityScore,
    ScoringConfig,
    predict_quality,
    regression_invariance_check,
)
from .transport import (
    DistanceConfig,
    EmpiricalDistribution,
    TransportResult,
    channel_wasserstein,
    cot_distance,
    ot_oracle,
)

__version__ = "0.1.0"

__all__ = [
    "BackboneHandle", "BackboneSpec", "FeatureStack", "ImageTensor",
    "extract_features", "extract_features_for_bytes", "load_backbone",
    "preprocess",
    "ConfounderDictionary", "ScreeningConfig", "complement",
    "load_dictionary", "save_dictionary", "screen_channels",
    "CausalQualityScorer", "PairScorer",
    "InterventionOutcome", "InterventionSpec", "apply_intervention",
    "calibrate_stage_scales", "channel_delta", "realize_perturbation", "sweep",
    "MetricsReport", "evaluate", "logistic4_fit", "plcc", "srcc",
    "QualityScore", "ScoringConfig", "predict_quality",
    "regression_invariance_check",
    "DistanceConfig", "EmpiricalDistribution", "TransportResult",
    "channel_wasserstein", "cot_distance", "ot_oracle",
    "__version__",
]
