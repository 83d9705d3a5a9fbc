"""Token-level speaker change detection with integrate-and-fire alignment."""

from .cif import (
    CifConfig,
    CifState,
    FiredTokens,
    Mode,
    TailPolicy,
    WeightedFrames,
    cif_backward,
    cif_forward,
    contributions_matrix,
    quantity_loss,
    scale_weights,
)
from .metrics import (
    CurvePoint,
    EcpResult,
    ScoredChangePoints,
    Segment,
    Segmentation,
    SweepConfig,
    corpus_sweep_curve,
    coverage,
    cut_segments,
    ecp,
    purity,
    sweep_curve,
)
from .model import (
    ModelConfig,
    ScdModel,
    TrainingExample,
    joint_loss,
    scd_forward,
    speaker_path_forward,
    tokens_to_change_times,
)

__version__ = "0.1.0"

__all__ = [
    "CifConfig",
    "CifState",
    "CurvePoint",
    "EcpResult",
    "FiredTokens",
    "Mode",
    "ModelConfig",
    "ScdModel",
    "ScoredChangePoints",
    "Segment",
    "Segmentation",
    "SweepConfig",
    "TailPolicy",
    "TrainingExample",
    "WeightedFrames",
    "cif_backward",
    "cif_forward",
    "contributions_matrix",
    "corpus_sweep_curve",
    "coverage",
    "cut_segments",
    "ecp",
    "joint_loss",
    "purity",
    "quantity_loss",
    "scale_weights",
    "scd_forward",
    "speaker_path_forward",
    "sweep_curve",
    "tokens_to_change_times",
]
