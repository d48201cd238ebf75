"""Shared data model: expression sequences, symptom scales and labeled datasets."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

DEFAULT_EXPRESSIONS = (
    "inner_brow_raiser",
    "outer_brow_raiser",
    "brow_lowerer",
    "upper_lid_raiser",
    "cheek_raiser",
    "lid_tightener",
    "lip_corner_puller",
    "lips_part",
    "eyes_closed",
    "neutral_expression",
    "smiling",
)


class DataError(ValueError):
    """Raised when input data violates a structural contract."""


@dataclass(frozen=True)
class ExpressionSequence:
    """Per-frame expression probabilities for one video, shape (T, N)."""

    video_id: str
    frames: np.ndarray
    expression_names: tuple
    frame_rate_hz: float = 25.0

    def __post_init__(self):
        frames = np.array(self.frames, dtype=np.float64)
        if frames.ndim != 2:
            raise DataError(f"{self.video_id}: frames must be 2-D, got shape {frames.shape}")
        if frames.shape[0] < 1 or frames.shape[1] < 1:
            raise DataError(f"{self.video_id}: empty sequence {frames.shape}")
        names = tuple(self.expression_names)
        if len(names) != frames.shape[1]:
            raise DataError(
                f"{self.video_id}: {len(names)} expression names for {frames.shape[1]} columns"
            )
        if not self.frame_rate_hz > 0:
            raise DataError(f"{self.video_id}: frame rate must be positive")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "expression_names", names)

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def N(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class SymptomScaleSpec:
    scale_name: str
    symptom_names: tuple
    min_score: int
    max_score: int
    total_min: int
    total_max: int

    def __post_init__(self):
        object.__setattr__(self, "symptom_names", tuple(self.symptom_names))
        if not self.min_score < self.max_score:
            raise DataError(f"{self.scale_name}: min_score must be below max_score")
        if not self.total_min < self.total_max:
            raise DataError(f"{self.scale_name}: total_min must be below total_max")
        if len(self.symptom_names) < 1:
            raise DataError(f"{self.scale_name}: at least one symptom required")

    @property
    def W(self) -> int:
        return len(self.symptom_names)


PANSS_NEG_SYMPTOMS = ("flat_affect", "poor_rapport", "lack_of_spontaneity")
CAINS_EXP_SYMPTOMS = (
    "facial_expression",
    "vocal_expression",
    "expressive_gestures",
    "quantity_of_speech",
)

# Totals cover the whole subscale: 7 NEG items rated 1-7, 4 EXP items rated 0-4.
_PRESETS = {
    "PANSS-NEG": dict(symptom_names=PANSS_NEG_SYMPTOMS, min_score=1, max_score=7,
                      total_min=7, total_max=49),
    "CAINS-EXP": dict(symptom_names=CAINS_EXP_SYMPTOMS, min_score=0, max_score=4,
                      total_min=0, total_max=16),
}

PRESET_NAMES = tuple(_PRESETS)


def scale_preset(name: str, symptom_names: Optional[Sequence[str]] = None) -> SymptomScaleSpec:
    """Return the named scale; ``symptom_names`` overrides the preset's item list."""
    try:
        params = dict(_PRESETS[name])
    except KeyError:
        raise DataError(f"unknown scale preset {name!r}; known: {', '.join(PRESET_NAMES)}") from None
    if symptom_names is not None:
        params["symptom_names"] = tuple(symptom_names)
    return SymptomScaleSpec(scale_name=name, **params)


@dataclass(frozen=True)
class SymptomRecord:
    video_id: str
    symptom_scores: tuple
    total_score: int

    def __post_init__(self):
        object.__setattr__(self, "symptom_scores", tuple(int(s) for s in self.symptom_scores))
        object.__setattr__(self, "total_score", int(self.total_score))


@dataclass(frozen=True)
class LabeledDataset:
    """Sequences and records paired by video id, both sorted by id."""

    sequences: tuple
    records: tuple
    scale: SymptomScaleSpec

    def __post_init__(self):
        object.__setattr__(self, "sequences",
                           tuple(sorted(self.sequences, key=lambda s: s.video_id)))
        object.__setattr__(self, "records",
                           tuple(sorted(self.records, key=lambda r: r.video_id)))

    @property
    def V(self) -> int:
        return len(self.sequences)

    @property
    def video_ids(self) -> List[str]:
        return [s.video_id for s in self.sequences]

    def record_for(self, video_id: str) -> SymptomRecord:
        for rec in self.records:
            if rec.video_id == video_id:
                return rec
        raise KeyError(video_id)

    def subset(self, video_ids) -> "LabeledDataset":
        keep = set(video_ids)
        return LabeledDataset(
            sequences=tuple(s for s in self.sequences if s.video_id in keep),
            records=tuple(r for r in self.records if r.video_id in keep),
            scale=self.scale,
        )

    def symptom_matrix(self) -> np.ndarray:
        """(V, W) scores in sequence order."""
        return np.array([self.record_for(s.video_id).symptom_scores for s in self.sequences],
                        dtype=np.float64).reshape(self.V, self.scale.W)

    def totals(self) -> np.ndarray:
        return np.array([self.record_for(s.video_id).total_score for s in self.sequences],
                        dtype=np.float64)


@dataclass(frozen=True)
class Violation:
    kind: str
    video_id: Optional[str]
    message: str

    def __str__(self):
        where = f"[{self.video_id}] " if self.video_id is not None else ""
        return f"{self.kind}: {where}{self.message}"


def validate_dataset(dataset: LabeledDataset, min_detected_fraction: Optional[float] = None,
                     detected: Optional[dict] = None) -> List[Violation]:
    """Collect every invariant violation; an empty list means the dataset is valid.

    ``detected`` optionally maps video id to the fraction of frames with a
    detected face; videos under ``min_detected_fraction`` are reported.
    """
    out: List[Violation] = []
    scale = dataset.scale
    seq_ids = [s.video_id for s in dataset.sequences]
    rec_ids = [r.video_id for r in dataset.records]

    for ids, what in ((seq_ids, "sequence"), (rec_ids, "record")):
        seen = set()
        for vid in ids:
            if vid in seen:
                out.append(Violation("duplicate", vid, f"{what} id appears more than once"))
            seen.add(vid)
    for vid in sorted(set(seq_ids) - set(rec_ids)):
        out.append(Violation("correspondence", vid, "sequence has no symptom record"))
    for vid in sorted(set(rec_ids) - set(seq_ids)):
        out.append(Violation("correspondence", vid, "record has no sequence"))

    if dataset.sequences:
        ref = dataset.sequences[0].expression_names
        for seq in dataset.sequences:
            if seq.expression_names != ref:
                out.append(Violation("schema", seq.video_id,
                                     f"expression names {list(seq.expression_names)} differ from {list(ref)}"))
            f = seq.frames
            n_nan = int(np.count_nonzero(~np.isfinite(f)))
            if n_nan:
                out.append(Violation("nan", seq.video_id, f"{n_nan} non-finite frame entries"))
            finite = f[np.isfinite(f)]
            n_out = int(np.count_nonzero((finite < 0.0) | (finite > 1.0)))
            if n_out:
                out.append(Violation("range", seq.video_id,
                                     f"{n_out} probabilities outside [0, 1]"))

    for rec in dataset.records:
        if len(rec.symptom_scores) != scale.W:
            out.append(Violation("schema", rec.video_id,
                                 f"{len(rec.symptom_scores)} scores for {scale.W} symptoms"))
            continue
        for name, score in zip(scale.symptom_names, rec.symptom_scores):
            if not scale.min_score <= score <= scale.max_score:
                out.append(Violation(
                    "range", rec.video_id,
                    f"{name}={score} outside [{scale.min_score}, {scale.max_score}] of {scale.scale_name}"))
        if not scale.total_min <= rec.total_score <= scale.total_max:
            out.append(Violation(
                "range", rec.video_id,
                f"total={rec.total_score} outside [{scale.total_min}, {scale.total_max}]"))

    if min_detected_fraction is not None and detected:
        for vid, frac in sorted(detected.items()):
            if frac < min_detected_fraction:
                out.append(Violation("coverage", vid,
                                     f"face detected in {frac:.1%} of frames, need {min_detected_fraction:.0%}"))
    return out


def normalize_sequence(seq: ExpressionSequence) -> ExpressionSequence:
    """Subtract each expression's per-video mean activation."""
    frames = seq.frames
    centered = frames - frames.mean(axis=0, keepdims=True)
    return ExpressionSequence(seq.video_id, centered, seq.expression_names, seq.frame_rate_hz)
