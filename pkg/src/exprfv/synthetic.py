"""Synthetic labeled cohorts with known ground truth, and a frame-level classifier."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit

from .core import (DEFAULT_EXPRESSIONS, DataError, ExpressionSequence, LabeledDataset,
                   SymptomRecord, scale_preset)
from .pipeline import activation_frequency
from .regression import bce_cost, round_half_away, sgd_momentum_step

MAX_RETRIES = 10


@dataclass
class SyntheticSpec:
    V: int = 40
    T_range: Tuple[int, int] = (500, 2000)
    N: int = 11
    K_true: int = 4
    noise_sd: float = 0.1
    scale: str = "CAINS-EXP"
    score_map: Optional[list] = None  # (W, N) weights on expression frequencies
    seed: int = 0
    component_sd: float = 0.6  # logit-space spread of each component
    concentration: float = 1.0  # Dirichlet parameter of per-video occupancies
    binarize_threshold: float = 0.5

    def __post_init__(self):
        self.T_range = tuple(int(t) for t in self.T_range)
        if self.V < 1 or self.N < 1 or self.K_true < 1:
            raise ValueError("V, N and K_true must be positive")
        if not 1 <= self.T_range[0] <= self.T_range[1]:
            raise ValueError(f"bad T_range {self.T_range}")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")


def _expression_names(N):
    if N <= len(DEFAULT_EXPRESSIONS):
        return DEFAULT_EXPRESSIONS[:N]
    return tuple(f"expr{i:02d}" for i in range(N))


def _component_means(rng, K, N):
    means = np.full((K, N), -2.5)
    for k in range(1, K):
        active = rng.choice(N, size=max(1, N // 3), replace=False)
        means[k, active] = 2.0
    return means


def _scores_from_frequencies(F, A, gain, offset, noise, lo, hi):
    raw = (F @ A.T) * gain + offset + noise
    return raw, np.clip(round_half_away(raw), lo, hi).astype(int)


def _attempt(spec: SyntheticSpec, rng):
    scale = scale_preset(spec.scale)
    W = scale.W
    names = _expression_names(spec.N)
    comp_means = _component_means(rng, spec.K_true, spec.N)
    occupancy = rng.dirichlet(np.full(spec.K_true, spec.concentration), size=spec.V)
    lengths = rng.integers(spec.T_range[0], spec.T_range[1] + 1, size=spec.V)
    seqs = []
    for v in range(spec.V):
        z = rng.choice(spec.K_true, size=lengths[v], p=occupancy[v])
        logits = comp_means[z] + spec.component_sd * rng.standard_normal((lengths[v], spec.N))
        seqs.append(ExpressionSequence(f"vid{v:03d}", expit(logits), names))
    F = np.array([activation_frequency(s, spec.binarize_threshold) for s in seqs])

    if spec.score_map is not None:
        A = np.asarray(spec.score_map, dtype=np.float64).reshape(W, spec.N)
    else:
        A = rng.standard_normal((W, spec.N))
    u = F @ A.T
    span = np.ptp(u, axis=0)
    lo, hi = float(scale.min_score), float(scale.max_score)
    gain = np.where(span > 0, (hi - lo) / np.where(span > 0, span, 1.0), 0.0)
    offset = lo - gain * u.min(axis=0) if spec.V else np.zeros(W)
    noise = spec.noise_sd * rng.standard_normal((spec.V, W))
    raw, scores = _scores_from_frequencies(F, A, gain, offset, noise, lo, hi)

    hidden = max(0, scale.total_max // scale.max_score - W)
    sums = scores.sum(axis=1)
    totals = np.clip(sums + round_half_away(hidden / W * sums), scale.total_min,
                     scale.total_max).astype(int)
    records = [SymptomRecord(s.video_id, tuple(int(x) for x in scores[v]), int(totals[v]))
               for v, s in enumerate(seqs)]
    manifest = {
        "spec": asdict(spec),
        "expression_names": list(names),
        "video_ids": [s.video_id for s in seqs],
        "frames_per_video": lengths.tolist(),
        "component_logit_means": comp_means.tolist(),
        "occupancy": occupancy.tolist(),
        "true_frequencies": F.tolist(),
        "score_map": A.tolist(),
        "gain": gain.tolist(),
        "offset": offset.tolist(),
        "noise": noise.tolist(),
        "raw_scores": raw.tolist(),
        "hidden_items": hidden,
    }
    return LabeledDataset(tuple(seqs), tuple(records), scale), manifest, scores


def generate_synthetic(spec: SyntheticSpec):
    """Return (dataset, manifest); the manifest alone recomputes every score.

    Scores follow ``round(gain * (score_map @ f) + offset + noise)`` clamped
    to the scale, with f the realized activation frequencies of the frames.
    """
    rng = np.random.default_rng(spec.seed)
    for attempt in range(MAX_RETRIES):
        dataset, manifest, scores = _attempt(spec, rng)
        distinct = [len(np.unique(scores[:, j])) for j in range(scores.shape[1])]
        if min(distinct) >= 3 or spec.V < 3:
            manifest["attempt"] = attempt
            return dataset, manifest
    raise DataError(f"could not generate >= 3 distinct scores per symptom in {MAX_RETRIES} tries "
                    f"(got {distinct}); increase V or change score_map")


def recompute_scores(manifest) -> np.ndarray:
    """Scores implied by a manifest, independent of the generated frames."""
    scale = scale_preset(manifest["spec"]["scale"])
    F = np.array(manifest["true_frequencies"])
    _, scores = _scores_from_frequencies(F, np.array(manifest["score_map"]), np.array(manifest["gain"]),
                                         np.array(manifest["offset"]), np.array(manifest["noise"]),
                                         scale.min_score, scale.max_score)
    return scores


# -- frame-level classifier --------------------------------------------------

@dataclass
class FrameClassifier:
    weights: np.ndarray
    bias: float

    def predict_proba(self, X) -> np.ndarray:
        return expit(np.asarray(X, dtype=np.float64) @ self.weights + self.bias)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(int)


@dataclass
class ClassifierConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    epochs: int = 500
    batch_size: int = 64
    seed: int = 0
    undersample: bool = False


def classification_report(labels, predicted) -> dict:
    """Accuracy and F1 with the present class (label 1) as positive."""
    t = np.asarray(labels).astype(int)
    p = np.asarray(predicted).astype(int)
    tp = int(np.sum((p == 1) & (t == 1)))
    fp = int(np.sum((p == 1) & (t == 0)))
    fn = int(np.sum((p == 0) & (t == 1)))
    f1 = 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0
    return {"accuracy": float(np.mean(p == t)), "f1": float(f1)}


def undersample(X, y, seed=0):
    """Drop random majority-class rows until both classes are equally frequent."""
    y = np.asarray(y).astype(int)
    rng = np.random.default_rng(seed)
    pos, neg = np.flatnonzero(y == 1), np.flatnonzero(y == 0)
    n = min(pos.size, neg.size)
    keep = np.sort(np.concatenate([rng.choice(pos, n, replace=False), rng.choice(neg, n, replace=False)]))
    return np.asarray(X)[keep], y[keep]


def train_frame_classifier(features, labels, config: Optional[ClassifierConfig] = None):
    """Logistic model fit by minibatch SGD on binary cross-entropy.

    Returns (classifier, report) where report carries the training accuracy,
    F1, final cost and class counts actually used.
    """
    config = config or ClassifierConfig()
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels).astype(int).reshape(-1)
    if X.shape[0] != y.size:
        raise ValueError("features and labels differ in length")
    if np.unique(y).size < 2:
        raise DataError("frame classifier needs both classes in the training labels")
    if config.undersample:
        X, y = undersample(X, y, config.seed)
    rng = np.random.default_rng(config.seed)
    p = {"w": np.zeros(X.shape[1]), "b": np.zeros(1)}
    vel = {"w": np.zeros(X.shape[1]), "b": np.zeros(1)}
    for _ in range(config.epochs):
        order = rng.permutation(X.shape[0])
        for start in range(0, X.shape[0], config.batch_size):
            idx = order[start:start + config.batch_size]
            q = expit(X[idx] @ p["w"] + p["b"][0])
            err = (q - y[idx]) / idx.size
            g = {"w": X[idx].T @ err, "b": np.array([err.sum()])}
            p, vel = sgd_momentum_step(p, g, vel, config.learning_rate, config.momentum)
    clf = FrameClassifier(p["w"], float(p["b"][0]))
    report = classification_report(y, clf.predict(X))
    report["cost"] = bce_cost(y, clf.predict_proba(X))
    report["class_counts"] = {"0": int(np.sum(y == 0)), "1": int(np.sum(y == 1))}
    return clf, report
