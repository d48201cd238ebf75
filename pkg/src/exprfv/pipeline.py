"""Training stages, leave-one-subject-out evaluation and frequency analysis."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .core import (DataError, ExpressionSequence, LabeledDataset, SymptomRecord,
                   SymptomScaleSpec, normalize_sequence)
from .fisher import DEFAULT_POSTERIOR_THRESHOLD, fv_length
from .gmm import DEFAULT_VARIANCE_FLOOR, EMConfig, GaussianMixture, fit_em
from .regression import (FC1_LR, FC2_LR, DenseLayer, Prediction, RefinableStack, TrainConfig,
                         forward, init_dense, predict, refine_end_to_end, stack_outputs,
                         train_fc2)
from .stats import UndefinedCorrelationError, mae, pearson, rmse

logger = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        super().__init__(f"{stage} failed: {cause}")


@dataclass
class PipelineConfig:
    K: int = 16
    variance_floor: float = DEFAULT_VARIANCE_FLOOR
    posterior_threshold: float = DEFAULT_POSTERIOR_THRESHOLD
    binarize_threshold: float = 0.5
    scale: str = "CAINS-EXP"
    seed: int = 0
    em_max_iters: int = 300
    em_tol: float = 1e-6
    frame_subsample: float = 1.0
    refine: Optional[TrainConfig] = None
    fc2: Optional[TrainConfig] = None
    cains_scaling: Optional[bool] = None  # None: on for CAINS scales only

    def __post_init__(self):
        if isinstance(self.refine, dict):
            self.refine = TrainConfig(**self.refine)
        if isinstance(self.fc2, dict):
            self.fc2 = TrainConfig(**self.fc2)
        if self.refine is None:
            self.refine = TrainConfig(learning_rate=FC1_LR.get(self.scale, 0.005), momentum=0.9,
                                      epochs=200, seed=self.seed)
        if self.fc2 is None:
            self.fc2 = TrainConfig(learning_rate=FC2_LR, momentum=0.9, epochs=2000, seed=self.seed)
        if self.cains_scaling is None:
            self.cains_scaling = self.scale.startswith("CAINS")
        if self.K < 1:
            raise ValueError("K must be at least 1")
        for name in ("variance_floor", "posterior_threshold", "binarize_threshold"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.binarize_threshold < 1:
            raise ValueError("binarize_threshold must lie in (0, 1)")

    def em_config(self) -> EMConfig:
        return EMConfig(max_iters=self.em_max_iters, tol=self.em_tol,
                        variance_floor=self.variance_floor, seed=self.seed,
                        subsample=self.frame_subsample)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)


@dataclass(frozen=True)
class OutputScaling:
    """Affine map sending [in_lo, in_hi] onto [out_lo, out_hi]."""

    in_lo: float
    in_hi: float
    out_lo: float
    out_hi: float

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.in_hi == self.in_lo:
            return np.full_like(x, 0.5 * (self.out_lo + self.out_hi))
        return self.out_lo + (x - self.in_lo) * (self.out_hi - self.out_lo) / (self.in_hi - self.in_lo)


@dataclass(frozen=True)
class ColumnScaling:
    """One OutputScaling per output column."""

    columns: tuple

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.array([c.apply(v) for c, v in zip(self.columns, x.reshape(-1, len(self.columns)).T)]
                        ).T.reshape(x.shape)


def learn_output_scaling(training_predictions, scale: SymptomScaleSpec,
                         total: bool = False) -> OutputScaling:
    p = np.asarray(training_predictions, dtype=np.float64).reshape(-1)
    if p.size == 0:
        raise ValueError("no predictions to learn scaling from")
    lo, hi = (scale.total_min, scale.total_max) if total else (scale.min_score, scale.max_score)
    return OutputScaling(float(p.min()), float(p.max()), float(lo), float(hi))


@dataclass
class ModelBundle:
    stack: RefinableStack
    fc2: DenseLayer
    config: PipelineConfig
    expression_names: tuple
    symptom_scaling: Optional[ColumnScaling] = None
    total_scaling: Optional[OutputScaling] = None
    stage_log: List[dict] = field(default_factory=list)
    train_ids: List[str] = field(default_factory=list)

    @property
    def gmm(self) -> GaussianMixture:
        return self.stack.gmm

    @property
    def scale(self) -> SymptomScaleSpec:
        return self.stack.scale


def _run_stage(name, fn):
    try:
        return fn()
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
        raise StageError(name, exc) from exc


def run_training_stages(dataset: LabeledDataset, config: PipelineConfig) -> ModelBundle:
    """Stage 2 (EM), stage 3 (end-to-end refinement), stage 4 (total-score head)."""
    scale = dataset.scale
    seqs = [normalize_sequence(s) for s in dataset.sequences]
    targets = dataset.symptom_matrix()
    totals = dataset.totals()
    log: List[dict] = []

    pooled = np.concatenate([s.frames for s in seqs], axis=0)
    em = _run_stage("stage2-em", lambda: fit_em(pooled, config.K, config.em_config()))
    log.append({"stage": "stage2-em", "frames": int(pooled.shape[0]), "iterations": em.n_iter,
                "converged": em.converged, "log_likelihood": em.log_likelihoods[-1],
                "reseeded": len(em.reseeded)})

    def stage3():
        D = fv_length(config.K, pooled.shape[1])
        # biases start at the mean target so ReLU units are live from the first epoch
        fc1 = init_dense(D, scale.W, seed=config.refine.seed, biases=targets.mean(axis=0))
        stack = RefinableStack.from_gmm(em.gmm, fc1, scale, config.variance_floor,
                                        config.posterior_threshold)
        return refine_end_to_end(stack, seqs, targets, config.refine)

    refined = _run_stage("stage3-refine", stage3)
    log.append({"stage": "stage3-refine", "epochs": config.refine.epochs,
                "initial_loss": refined.losses[0], "final_loss": refined.losses[-1],
                "losses": list(refined.losses)})
    stack = refined.stack

    def stage4():
        raw = stack_outputs(stack, seqs)
        return raw, train_fc2(raw, totals, config.fc2)

    raw, fc2 = _run_stage("stage4-fc2", stage4)
    raw_total = forward(fc2, raw)[:, 0]
    log.append({"stage": "stage4-fc2", "epochs": config.fc2.epochs,
                "final_loss": float(np.mean((raw_total - totals) ** 2))})

    sym_scaling = tot_scaling = None
    if config.cains_scaling:
        sym_scaling = ColumnScaling(tuple(learn_output_scaling(raw[:, j], scale)
                                          for j in range(scale.W)))
        tot_scaling = learn_output_scaling(raw_total, scale, total=True)
    return ModelBundle(stack, fc2, config, dataset.sequences[0].expression_names,
                       sym_scaling, tot_scaling, log, dataset.video_ids)


def predict_video(bundle: ModelBundle, seq: ExpressionSequence) -> Prediction:
    return predict(bundle.stack, bundle.fc2, seq, bundle.symptom_scaling, bundle.total_scaling)


@dataclass(frozen=True)
class FoldResult:
    held_out_id: str
    train_ids: tuple
    predicted: SymptomRecord
    truth: SymptomRecord


@dataclass
class LoocvResult:
    folds: List[FoldResult]
    metrics: Dict[str, Dict[str, float]]  # target name -> {pcc, mae, rmse}


def prediction_metrics(pred, truth) -> Dict[str, float]:
    try:
        pcc = pearson(pred, truth)
    except UndefinedCorrelationError:
        pcc = float("nan")
    return {"pcc": pcc, "mae": mae(pred, truth), "rmse": rmse(pred, truth)}


def aggregate_folds(folds: List[FoldResult], scale: SymptomScaleSpec) -> Dict[str, Dict[str, float]]:
    P = np.array([f.predicted.symptom_scores for f in folds], dtype=np.float64)
    Tr = np.array([f.truth.symptom_scores for f in folds], dtype=np.float64)
    out = {name: prediction_metrics(P[:, j], Tr[:, j]) for j, name in enumerate(scale.symptom_names)}
    out["total"] = prediction_metrics([f.predicted.total_score for f in folds],
                                      [f.truth.total_score for f in folds])
    return out


def _fold(args):
    dataset, held_out, config, train_fn, predict_fn = args
    train_ids = [v for v in dataset.video_ids if v != held_out]
    bundle = train_fn(dataset.subset(train_ids), config)
    seq = next(s for s in dataset.sequences if s.video_id == held_out)
    pred = predict_fn(bundle, seq)
    logger.info("fold %s done", held_out)
    return FoldResult(held_out, tuple(train_ids),
                      SymptomRecord(held_out, pred.symptom_scores, pred.total),
                      dataset.record_for(held_out))


def loocv(dataset: LabeledDataset, config: PipelineConfig,
          train_fn: Callable = run_training_stages,
          predict_fn: Callable = predict_video, n_jobs: int = 1) -> LoocvResult:
    """Hold out each video in id order, train on the rest, predict it."""
    if dataset.V < 2:
        raise DataError(f"LOOCV needs at least 2 videos, got {dataset.V}")
    jobs = [(dataset, vid, config, train_fn, predict_fn) for vid in dataset.video_ids]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            folds = list(ex.map(_fold, jobs))
    else:
        folds = [_fold(j) for j in jobs]
    return LoocvResult(folds, aggregate_folds(folds, dataset.scale))


def activation_frequency(seq, binarize_threshold: float = 0.5) -> np.ndarray:
    """Fraction of frames in which each expression is present (p >= threshold)."""
    X = seq.frames if isinstance(seq, ExpressionSequence) else np.atleast_2d(seq)
    if X.shape[0] == 0:
        raise DataError("activation frequency of an empty sequence")
    return np.mean(X >= binarize_threshold, axis=0)


def outlier_band_filter(frequencies, width: float = 1.5) -> np.ndarray:
    """Boolean mask of videos whose frequency lies within width*sigma of the cohort mean."""
    f = np.asarray(frequencies, dtype=np.float64).reshape(-1)
    if f.size < 2:
        raise DataError("outlier band needs at least 2 videos")
    dev = np.abs(f - f.mean())
    sigma = f.std()
    # slack absorbs rounding in the mean for constant cohorts
    return dev <= width * sigma + 1e-12


def frequency_matrix(dataset: LabeledDataset, binarize_threshold: float = 0.5) -> np.ndarray:
    return np.array([activation_frequency(s, binarize_threshold) for s in dataset.sequences])


def band_masks(F, width: float = 1.5) -> np.ndarray:
    """(N, V) retained-video masks, one per expression column of F."""
    F = np.asarray(F, dtype=np.float64)
    return np.array([outlier_band_filter(F[:, i], width) for i in range(F.shape[1])])
