"""Regression heads, costs, SGD with momentum and end-to-end refinement.

The refinement backpropagates the mean square error through the dense
layer, the L2 and power normalizations, the Fisher Vector blocks, the
sufficient statistics and the posteriors down to the mixture parameters.
Mixture weights are held as logits and variances as log-variances so that
plain gradient steps keep them on the simplex and positive.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.special import softmax

from .core import ExpressionSequence, SymptomScaleSpec, normalize_sequence
from .fisher import DEFAULT_POSTERIOR_THRESHOLD, fv_length
from .gmm import DEFAULT_VARIANCE_FLOOR, LOG_2PI, GaussianMixture

logger = logging.getLogger(__name__)

BCE_EPS = 1e-12
# derivative of sign(z)sqrt|z| is capped where |z| < POWER_EPS**2
POWER_EPS = 1e-6

STACK_PARAMS = ("logits", "means", "log_vars", "fc1_weights", "fc1_biases")


class NonFiniteError(FloatingPointError):
    """Training produced NaN or inf; ``tensor`` names the first offender."""

    def __init__(self, tensor: str, where: str = ""):
        self.tensor = tensor
        super().__init__(f"non-finite values in {tensor}" + (f" ({where})" if where else ""))


def _check_finite(name, arr, where=""):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(name, where)


@dataclass(frozen=True)
class DenseLayer:
    weights: np.ndarray  # (out_dim, in_dim)
    biases: np.ndarray  # (out_dim,)
    activation: str = "relu"

    def __post_init__(self):
        W = np.array(self.weights, dtype=np.float64)
        b = np.array(self.biases, dtype=np.float64).reshape(-1)
        if W.ndim != 2 or b.shape != (W.shape[0],):
            raise ValueError(f"inconsistent dense layer shapes {W.shape}, {b.shape}")
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ValueError("dense layer parameters must be finite")
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "biases", b)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


def init_dense(in_dim: int, out_dim: int, seed: int = 0, activation: str = "relu",
               biases=None) -> DenseLayer:
    """Fan-scaled uniform weights; zero biases unless given."""
    rng = np.random.default_rng(seed)
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    W = rng.uniform(-limit, limit, size=(out_dim, in_dim))
    b = np.zeros(out_dim) if biases is None else np.broadcast_to(
        np.asarray(biases, dtype=np.float64), (out_dim,)).copy()
    return DenseLayer(W, b, activation)


def _activate(h, activation):
    return np.maximum(h, 0.0) if activation == "relu" else h


def forward(layer: DenseLayer, x) -> np.ndarray:
    """activation(W x + b) for a vector or a (B, in_dim) batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.in_dim:
        raise ValueError(f"layer expects {layer.in_dim} inputs, got {x.shape[-1]}")
    return _activate(x @ layer.weights.T + layer.biases, layer.activation)


def bce_cost(targets, predictions) -> float:
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    q = np.asarray(predictions, dtype=np.float64).reshape(-1)
    if t.size == 0:
        raise ValueError("empty batch")
    if t.shape != q.shape:
        raise ValueError(f"shape mismatch {t.shape} vs {q.shape}")
    q = np.clip(q, BCE_EPS, 1.0 - BCE_EPS)
    return float(-np.mean(t * np.log(q) + (1.0 - t) * np.log1p(-q)))


def mse_cost(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    p = p.reshape(p.shape[0], -1) if p.ndim else p.reshape(1, 1)
    t = t.reshape(p.shape)
    return float(np.mean(np.mean((p - t) ** 2, axis=1)))


def sgd_momentum_step(params, grads, velocity, lr: float, m: float):
    """velocity <- m*velocity - lr*grad; params <- params + velocity.

    Accepts arrays or dicts of arrays; returns (params, velocity) of the same kind.
    """
    if isinstance(params, dict):
        new_p, new_v = {}, {}
        for key in params:
            new_p[key], new_v[key] = sgd_momentum_step(params[key], grads[key], velocity[key], lr, m)
        return new_p, new_v
    v = m * np.asarray(velocity, dtype=np.float64) - lr * np.asarray(grads, dtype=np.float64)
    return np.asarray(params, dtype=np.float64) + v, v


@dataclass
class TrainConfig:
    learning_rate: float = 0.005
    momentum: float = 0.9
    epochs: int = 100
    seed: int = 0
    cains_scaling: bool = False

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")


# lr from the reference training settings
FC1_LR = {"CAINS-EXP": 0.005, "PANSS-NEG": 0.001}
FC2_LR = 0.01


@dataclass(frozen=True)
class RefinableStack:
    """Mixture (in unconstrained coordinates) plus the symptom head."""

    logits: np.ndarray
    means: np.ndarray
    log_vars: np.ndarray
    fc1: DenseLayer
    scale: SymptomScaleSpec
    variance_floor: float = DEFAULT_VARIANCE_FLOOR
    posterior_threshold: float = DEFAULT_POSTERIOR_THRESHOLD

    def __post_init__(self):
        K, N = np.shape(self.means)
        if self.fc1.in_dim != fv_length(K, N):
            raise ValueError(f"fc1 expects {self.fc1.in_dim} inputs, FV has {fv_length(K, N)}")
        if self.fc1.out_dim != self.scale.W:
            raise ValueError(f"fc1 has {self.fc1.out_dim} outputs for {self.scale.W} symptoms")

    @classmethod
    def from_gmm(cls, gmm: GaussianMixture, fc1: DenseLayer, scale: SymptomScaleSpec,
                 variance_floor: float = DEFAULT_VARIANCE_FLOOR,
                 posterior_threshold: float = DEFAULT_POSTERIOR_THRESHOLD) -> "RefinableStack":
        log_vars = np.maximum(np.log(gmm.variances), np.log(variance_floor))
        return cls(np.log(gmm.weights), gmm.means.copy(), log_vars, fc1, scale,
                   variance_floor, posterior_threshold)

    @property
    def K(self) -> int:
        return self.means.shape[0]

    @property
    def N(self) -> int:
        return self.means.shape[1]

    @property
    def gmm(self) -> GaussianMixture:
        w, var, _ = _constrained(self.logits, self.log_vars, self.variance_floor)
        return GaussianMixture(w, self.means, var)

    def params(self) -> Dict[str, np.ndarray]:
        return {
            "logits": np.array(self.logits, dtype=np.float64),
            "means": np.array(self.means, dtype=np.float64),
            "log_vars": np.array(self.log_vars, dtype=np.float64),
            "fc1_weights": self.fc1.weights.copy(),
            "fc1_biases": self.fc1.biases.copy(),
        }

    def with_params(self, p: Dict[str, np.ndarray]) -> "RefinableStack":
        fc1 = DenseLayer(p["fc1_weights"], p["fc1_biases"], self.fc1.activation)
        return replace(self, logits=p["logits"], means=p["means"], log_vars=p["log_vars"], fc1=fc1)


def _constrained(logits, log_vars, floor):
    w = softmax(logits)
    active = log_vars < np.log(floor)
    var = np.where(active, floor, np.exp(log_vars))
    return w, var, active


def _fv_forward(X, w, mu, var, threshold):
    T, N = X.shape
    diff = X[:, None, :] - mu[None, :, :]
    ld = -0.5 * (N * LOG_2PI + np.sum(np.log(var), axis=1) + np.sum(diff * diff / var, axis=2))
    lw = ld + np.log(w)
    lw -= lw.max(axis=1, keepdims=True)
    g = np.exp(lw)
    g /= g.sum(axis=1, keepdims=True)
    mask = g >= threshold if threshold > 0 else np.ones_like(g, dtype=bool)
    gs = np.where(mask, g, 0.0)
    S0 = gs.sum(axis=0)
    S1 = gs.T @ X
    S2 = gs.T @ (X * X)
    sw = np.sqrt(w)
    sd = np.sqrt(var)
    c = 1.0 / (np.sqrt(2.0 * w)[:, None] * var)
    Gw = (S0 - T * w) / sw
    Gmu = (S1 - mu * S0[:, None]) / (sw[:, None] * sd)
    Gs = (S2 - 2.0 * mu * S1 + (mu * mu - var) * S0[:, None]) * c
    z = np.concatenate([Gw, Gmu.ravel(), Gs.ravel()])
    p = np.sign(z) * np.sqrt(np.abs(z))
    nrm = np.sqrt(np.dot(p, p))
    y = p / nrm if nrm > 0 else p.copy()
    cache = dict(X=X, diff=diff, g=g, mask=mask, S0=S0, S1=S1, sw=sw, sd=sd, c=c,
                 Gw=Gw, Gmu=Gmu, Gs=Gs, z=z, nrm=nrm, y=y)
    return y, cache


def _fv_backward(dy, cache, w, mu, var):
    """Gradients of a scalar with respect to (w, mu, var) given dL/dy."""
    X, diff, g, mask = cache["X"], cache["diff"], cache["g"], cache["mask"]
    S0, S1, sw, sd, c = cache["S0"], cache["S1"], cache["sw"], cache["sd"], cache["c"]
    Gw, Gmu, Gs, z, nrm, y = (cache[k] for k in ("Gw", "Gmu", "Gs", "z", "nrm", "y"))
    T = X.shape[0]
    K, N = mu.shape

    if nrm == 0:
        return np.zeros(K), np.zeros((K, N)), np.zeros((K, N))
    dp = (dy - y * np.dot(y, dy)) / nrm
    rz = np.sqrt(np.abs(z))
    dz = np.where(z != 0, dp * 0.5 / np.maximum(rz, POWER_EPS), 0.0)
    dGw = dz[:K]
    dGmu = dz[K:K + K * N].reshape(K, N)
    dGs = dz[K + K * N:].reshape(K, N)

    inv_swsd = 1.0 / (sw[:, None] * sd)
    dS0 = dGw / sw + np.sum(-dGmu * mu * inv_swsd, axis=1) + np.sum(dGs * (mu * mu - var) * c, axis=1)
    dS1 = dGmu * inv_swsd - 2.0 * mu * dGs * c
    dS2 = dGs * c

    dw = dGw * (-T / sw - 0.5 * Gw / w) - 0.5 * np.sum((dGmu * Gmu + dGs * Gs), axis=1) / w
    dmu = -dGmu * S0[:, None] * inv_swsd + dGs * (2.0 * mu * S0[:, None] - 2.0 * S1) * c
    dvar = -0.5 * dGmu * Gmu / var - dGs * (S0[:, None] * c + Gs / var)

    dgs = dS0[None, :] + X @ dS1.T + (X * X) @ dS2.T
    dg = np.where(mask, dgs, 0.0)
    dl = g * (dg - np.sum(g * dg, axis=1, keepdims=True))
    dl_sum = dl.sum(axis=0)
    dmu += np.einsum("tk,tkn->kn", dl, diff) / var
    dvar += -0.5 * dl_sum[:, None] / var + 0.5 * np.einsum("tk,tkn->kn", dl, diff * diff) / (var * var)
    # dl also reaches log w directly
    return dw + dl_sum / w, dmu, dvar


def stack_loss_and_grad(params: Dict[str, np.ndarray], frames: Sequence[np.ndarray], targets,
                        variance_floor: float = DEFAULT_VARIANCE_FLOOR,
                        posterior_threshold: float = DEFAULT_POSTERIOR_THRESHOLD,
                        activation: str = "relu", with_grad: bool = True):
    """Full-batch mean square error of the stack and its parameter gradients."""
    targets = np.asarray(targets, dtype=np.float64)
    V = len(frames)
    W1, b1 = params["fc1_weights"], params["fc1_biases"]
    Wout = W1.shape[0]
    targets = targets.reshape(V, Wout)
    w, var, active = _constrained(params["logits"], params["log_vars"], variance_floor)
    mu = params["means"]

    grads = {k: np.zeros_like(params[k]) for k in STACK_PARAMS} if with_grad else None
    dw = np.zeros_like(w)
    dvar = np.zeros_like(var)
    loss = 0.0
    outputs = np.empty((V, Wout))
    for v, X in enumerate(frames):
        y, cache = _fv_forward(X, w, mu, var, posterior_threshold)
        _check_finite("fisher_vector", y, f"video {v}")
        h = W1 @ y + b1
        out = _activate(h, activation)
        outputs[v] = out
        r = out - targets[v]
        loss += np.dot(r, r) / (V * Wout)
        if not with_grad:
            continue
        dh = 2.0 * r / (V * Wout)
        if activation == "relu":
            dh = dh * (h > 0)
        grads["fc1_weights"] += np.outer(dh, y)
        grads["fc1_biases"] += dh
        gw, gmu, gvar = _fv_backward(W1.T @ dh, cache, w, mu, var)
        dw += gw
        grads["means"] += gmu
        dvar += gvar
    if not np.isfinite(loss):
        raise NonFiniteError("loss")
    if with_grad:
        grads["logits"] = w * (dw - np.dot(w, dw))
        grads["log_vars"] = np.where(active, 0.0, dvar * var)
        for k in STACK_PARAMS:
            _check_finite("grad:" + k, grads[k])
    return float(loss), grads, outputs


@dataclass
class RefineResult:
    stack: RefinableStack
    losses: List[float]  # losses[i] is the cost after i epochs


def refine_end_to_end(stack: RefinableStack, sequences, targets,
                      config: TrainConfig) -> RefineResult:
    """Jointly fit the mixture and FC1 to symptom targets by full-batch SGD."""
    frames = [s.frames if isinstance(s, ExpressionSequence) else np.asarray(s, dtype=np.float64)
              for s in sequences]
    kw = dict(variance_floor=stack.variance_floor, posterior_threshold=stack.posterior_threshold,
              activation=stack.fc1.activation)
    params = stack.params()
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    log_floor = np.log(stack.variance_floor)
    losses = []
    for epoch in range(config.epochs):
        loss, grads, _ = stack_loss_and_grad(params, frames, targets, **kw)
        losses.append(loss)
        params, velocity = sgd_momentum_step(params, grads, velocity,
                                             config.learning_rate, config.momentum)
        params["log_vars"] = np.maximum(params["log_vars"], log_floor)
        for k in STACK_PARAMS:
            _check_finite(k, params[k], f"after epoch {epoch}")
        if epoch % 50 == 0:
            logger.debug("refine epoch %d loss %.6g", epoch, loss)
    loss, _, _ = stack_loss_and_grad(params, frames, targets, with_grad=False, **kw)
    losses.append(loss)
    return RefineResult(stack.with_params(params), losses)


def stack_outputs(stack: RefinableStack, sequences) -> np.ndarray:
    """Raw FC1 outputs (V, W) for already-normalized sequences."""
    frames = [s.frames if isinstance(s, ExpressionSequence) else np.asarray(s, dtype=np.float64)
              for s in sequences]
    w, var, _ = _constrained(stack.logits, stack.log_vars, stack.variance_floor)
    out = np.empty((len(frames), stack.fc1.out_dim))
    for v, X in enumerate(frames):
        y, _ = _fv_forward(X, w, stack.means, var, stack.posterior_threshold)
        out[v] = forward(stack.fc1, y)
    return out


def fit_dense(layer: DenseLayer, inputs, targets, config: TrainConfig):
    """Full-batch SGD on mse_cost; returns (layer, losses after each epoch)."""
    X = np.asarray(inputs, dtype=np.float64)
    Y = np.asarray(targets, dtype=np.float64).reshape(X.shape[0], layer.out_dim)
    V, Wout = Y.shape
    p = {"w": layer.weights.copy(), "b": layer.biases.copy()}
    vel = {"w": np.zeros_like(p["w"]), "b": np.zeros_like(p["b"])}

    def evaluate(p):
        h = X @ p["w"].T + p["b"]
        return h, _activate(h, layer.activation)

    losses = [mse_cost(evaluate(p)[1], Y)]
    for epoch in range(config.epochs):
        h, out = evaluate(p)
        dh = 2.0 * (out - Y) / (V * Wout)
        if layer.activation == "relu":
            dh = dh * (h > 0)
        g = {"w": dh.T @ X, "b": dh.sum(axis=0)}
        p, vel = sgd_momentum_step(p, g, vel, config.learning_rate, config.momentum)
        loss = mse_cost(evaluate(p)[1], Y)
        if not np.isfinite(loss):
            raise NonFiniteError("fc2 loss", f"epoch {epoch}")
        losses.append(loss)
    return DenseLayer(p["w"], p["b"], layer.activation), losses


def train_fc2(symptom_predictions, totals, config: TrainConfig,
              init: Optional[DenseLayer] = None) -> DenseLayer:
    """Total-score head on top of frozen symptom predictions."""
    X = np.asarray(symptom_predictions, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    t = np.asarray(totals, dtype=np.float64).reshape(-1)
    if init is None:
        # bias starts at the mean total so the ReLU unit is live from epoch 0
        init = init_dense(X.shape[1], 1, seed=config.seed, biases=t.mean())
    layer, _ = fit_dense(init, X, t, config)
    return layer


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class Prediction:
    symptom_scores: tuple
    total: int
    raw_symptoms: np.ndarray
    raw_total: float


def finalize_scores(raw, lo, hi, scaling=None) -> np.ndarray:
    """Optional affine rescale, nearest-integer rounding, clamp into [lo, hi]."""
    raw = np.asarray(raw, dtype=np.float64)
    if scaling is not None:
        raw = scaling.apply(raw)
    return np.clip(round_half_away(raw), lo, hi).astype(int)


def predict(stack: RefinableStack, fc2: DenseLayer, seq: ExpressionSequence,
            symptom_scaling=None, total_scaling=None, normalize: bool = True) -> Prediction:
    """Integer symptom and total scores for one raw sequence."""
    if normalize:
        seq = normalize_sequence(seq)
    raw = stack_outputs(stack, [seq])[0]
    raw_total = float(forward(fc2, raw)[0])
    scale = stack.scale
    sym = finalize_scores(raw, scale.min_score, scale.max_score, symptom_scaling)
    tot = finalize_scores(raw_total, scale.total_min, scale.total_max, total_scaling)
    return Prediction(tuple(int(s) for s in sym), int(tot), raw, raw_total)
