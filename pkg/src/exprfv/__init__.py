"""Fisher Vector symptom-severity estimation from facial expression sequences."""

from .core import (ExpressionSequence, LabeledDataset, SymptomRecord, SymptomScaleSpec,
                   normalize_sequence, scale_preset, validate_dataset)
from .fisher import FisherVector, SufficientStats, accumulate_stats, encode, fv_unnormalized
from .gmm import EMConfig, GaussianMixture, fit_em, init_gmm, log_likelihood, posteriors
from .pipeline import PipelineConfig, loocv, run_training_stages
from .regression import DenseLayer, RefinableStack, TrainConfig, refine_end_to_end

__all__ = [
    "DenseLayer", "EMConfig", "ExpressionSequence", "FisherVector", "GaussianMixture",
    "LabeledDataset", "PipelineConfig", "RefinableStack", "SufficientStats", "SymptomRecord",
    "SymptomScaleSpec", "TrainConfig", "accumulate_stats", "encode", "fit_em", "fv_unnormalized",
    "init_gmm", "log_likelihood", "loocv", "normalize_sequence", "posteriors",
    "refine_end_to_end", "run_training_stages", "scale_preset", "validate_dataset",
]

__version__ = "0.1.0"
