"""Prescriptive policy network: a softmax-output MLP trained to minimize
expected estimated reward.

The network assigns each input a probability distribution over the treatment
catalog; training minimizes the probability-weighted reward (plus optional
L2 weight decay) with Adam, mini-batches, dropout on the last hidden layers,
and patience-based early stopping on a held-out validation set. Everything
is plain float64 numpy with manual backpropagation, so runs are bit-for-bit
reproducible given a seed. Maximization is handled by negating the reward
matrix internally, which makes maximize runs exactly equal to minimize runs
on the negated matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .data_pipeline import SplitPlan
from .errors import ConfigError, DataError, NumericalError


@dataclass
class PnnConfig:
    hidden: tuple[int, ...] = (32, 32)
    activation: str = "relu"
    dropout: float = 0.2
    dropout_layers: int = 1  # how many of the last hidden layers get dropout
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    batch_size: int = 64
    max_epochs: int = 500
    patience: int = 10
    seed: int = 0
    direction: str = "minimize"

    def __post_init__(self):
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"dropout rate {self.dropout} outside [0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch size must be positive")
        if self.activation != "relu":
            raise ConfigError(f"unsupported activation {self.activation!r}")
        if self.direction not in ("minimize", "maximize"):
            raise ConfigError(f"unknown direction {self.direction!r}")


def default_config(n_features: int, **overrides) -> PnnConfig:
    """Two hidden layers of width max(32, 2p); everything else stock."""
    width = max(32, 2 * n_features)
    cfg = {"hidden": (width, width)}
    cfg.update(overrides)
    return PnnConfig(**cfg)


@dataclass
class PnnModel:
    """Layer weights/biases plus the config snapshot that produced them."""

    weights: list[np.ndarray]  # weights[l] has shape (fan_in, fan_out)
    biases: list[np.ndarray]
    config: PnnConfig

    @property
    def n_outputs(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[0]


@dataclass
class TrainTrace:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0  # 1-indexed epoch whose parameters are returned
    stopped_epoch: int = 0  # last epoch actually run
    best_val_loss: float = float("inf")


# ---------------------------------------------------------------------------
# Forward / loss
# ---------------------------------------------------------------------------

def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for overflow safety."""
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _init_params(widths: list[int], rng: np.random.Generator):
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def _forward_pass(model: PnnModel, X: np.ndarray, dropout_masks: list | None = None):
    """Return (logits, layer activations). Masks, when given, are applied to
    the matching hidden layers (training mode)."""
    acts = [X]
    h = X
    n_layers = len(model.weights)
    for l, (W, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ W + b
        if l < n_layers - 1:
            h = np.maximum(h, 0.0)
            if dropout_masks is not None and dropout_masks[l] is not None:
                h = h * dropout_masks[l]
            acts.append(h)
    return h, acts


def forward(model: PnnModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Evaluation-mode forward pass: (logits, softmax probabilities)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.n_inputs:
        raise DataError(f"input width {X.shape[1]} does not match model width {model.n_inputs}")
    if not all(np.isfinite(W).all() for W in model.weights):
        raise NumericalError("model contains non-finite parameters")
    if not np.isfinite(X).all():
        raise DataError("non-finite input row")
    z, _ = _forward_pass(model, X)
    return z, softmax(z)


def _signed_rewards(gamma: np.ndarray, direction: str) -> np.ndarray:
    return gamma if direction == "minimize" else -gamma


def policy_loss(model: PnnModel, X: np.ndarray, gamma: np.ndarray, direction: str = "minimize") -> float:
    """Mean probability-weighted reward plus the L2 weight-decay term."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    if gamma.shape[0] != X.shape[0] or gamma.shape[1] != model.n_outputs:
        raise DataError(f"reward batch shape {gamma.shape} does not match ({X.shape[0]}, {model.n_outputs})")
    z, _ = _forward_pass(model, X)
    probs = softmax(z)
    loss = float(np.mean(np.sum(probs * _signed_rewards(gamma, direction), axis=1)))
    lam = model.config.weight_decay
    if lam > 0:
        loss += lam * sum(float(np.sum(W * W)) for W in model.weights)
    return loss


def _backward(model: PnnModel, X, gamma_signed, dropout_masks=None):
    """Analytic gradients of the policy loss for one batch.

    d(loss)/dz = softmax * (g - sum(softmax * g)) / n per row; the rest is a
    standard MLP backward pass through ReLU (and the dropout masks when
    training). Weight decay contributes 2*lambda*W.
    """
    n = X.shape[0]
    z, acts = _forward_pass(model, X, dropout_masks)
    probs = softmax(z)
    expected = np.sum(probs * gamma_signed, axis=1, keepdims=True)
    delta = probs * (gamma_signed - expected) / n
    grads_W = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    lam = model.config.weight_decay
    for l in range(len(model.weights) - 1, -1, -1):
        grads_W[l] = acts[l].T @ delta
        grads_b[l] = delta.sum(axis=0)
        if lam > 0:
            grads_W[l] = grads_W[l] + 2.0 * lam * model.weights[l]
        if l > 0:
            delta = delta @ model.weights[l].T
            delta = delta * (acts[l] > 0)
            if dropout_masks is not None and dropout_masks[l - 1] is not None:
                delta = delta * dropout_masks[l - 1]
    loss = float(np.mean(np.sum(probs * gamma_signed, axis=1)))
    if lam > 0:
        loss += lam * sum(float(np.sum(W * W)) for W in model.weights)
    return loss, grads_W, grads_b


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def train(
    X: np.ndarray,
    gamma: np.ndarray,
    split: SplitPlan,
    config: PnnConfig,
) -> tuple[PnnModel, TrainTrace]:
    """Train on the split's train rows with Adam, validating each epoch.

    Stops when the validation loss has not improved for ``patience``
    consecutive epochs and returns the parameters from the best epoch.
    """
    X = np.asarray(X, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape[0] != X.shape[0]:
        raise DataError("reward matrix must cover every row of X")
    for name, idx in (("train", split.train), ("validation", split.validation)):
        if idx.size and (idx.min() < 0 or idx.max() >= X.shape[0]):
            raise DataError(f"{name} indices fall outside the data")

    n_out = gamma.shape[1]
    widths = [X.shape[1], *config.hidden, n_out]
    rng = np.random.default_rng(config.seed)
    weights, biases = _init_params(widths, rng)
    model = PnnModel(weights, biases, config)

    g_signed = _signed_rewards(gamma, config.direction)
    X_train, g_train = X[split.train], g_signed[split.train]
    if split.validation.size:
        X_val, g_val = X[split.validation], g_signed[split.validation]
    else:
        X_val, g_val = X_train, g_train  # degenerate split: validate on train

    n_hidden = len(config.hidden)
    dropped = [n_hidden - 1 - i for i in range(min(config.dropout_layers, n_hidden))]
    keep = 1.0 - config.dropout

    # Adam state
    mW = [np.zeros_like(W) for W in weights]
    vW = [np.zeros_like(W) for W in weights]
    mB = [np.zeros_like(b) for b in biases]
    vB = [np.zeros_like(b) for b in biases]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0

    trace = TrainTrace()
    best_weights = [W.copy() for W in weights]
    best_biases = [b.copy() for b in biases]
    bad_epochs = 0
    n_train = X_train.shape[0]

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n_train)
        batch_losses = []
        for start in range(0, n_train, config.batch_size):
            rows = order[start : start + config.batch_size]
            masks = None
            if config.dropout > 0 and dropped:
                masks = [None] * n_hidden
                for l in dropped:
                    bern = (rng.random((rows.size, config.hidden[l])) >= config.dropout).astype(float)
                    masks[l] = bern / keep
            loss, gW, gB = _backward(model, X_train[rows], g_train[rows], masks)
            if not np.isfinite(loss):
                raise NumericalError(f"training diverged at epoch {epoch} (non-finite loss)")
            batch_losses.append(loss)
            step += 1
            bc1 = 1.0 - beta1**step
            bc2 = 1.0 - beta2**step
            for l in range(len(weights)):
                mW[l] = beta1 * mW[l] + (1 - beta1) * gW[l]
                vW[l] = beta2 * vW[l] + (1 - beta2) * (gW[l] * gW[l])
                weights[l] -= config.learning_rate * (mW[l] / bc1) / (np.sqrt(vW[l] / bc2) + eps)
                mB[l] = beta1 * mB[l] + (1 - beta1) * gB[l]
                vB[l] = beta2 * vB[l] + (1 - beta2) * (gB[l] * gB[l])
                biases[l] -= config.learning_rate * (mB[l] / bc1) / (np.sqrt(vB[l] / bc2) + eps)

        val_loss = policy_loss(model, X_val, g_val, "minimize")
        if not np.isfinite(val_loss):
            raise NumericalError(f"training diverged at epoch {epoch} (non-finite validation loss)")
        trace.train_loss.append(float(np.mean(batch_losses)))
        trace.val_loss.append(val_loss)
        trace.stopped_epoch = epoch
        if val_loss < trace.best_val_loss:
            trace.best_val_loss = val_loss
            trace.best_epoch = epoch
            best_weights = [W.copy() for W in weights]
            best_biases = [b.copy() for b in biases]
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > config.patience:
                break

    model.weights = best_weights
    model.biases = best_biases
    return model, trace


# ---------------------------------------------------------------------------
# Prescription
# ---------------------------------------------------------------------------

def prescribe(model: PnnModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Argmax treatment per row (ties to the lowest catalog index)."""
    _, probs = forward(model, X)
    return np.argmax(probs, axis=1), probs


def prescribe_thresholded(model: PnnModel, X: np.ndarray, thresholds) -> np.ndarray:
    """Pick the most probable treatment among those clearing their
    per-treatment probability threshold; fall back to plain argmax when
    none qualifies."""
    thresholds = np.asarray(thresholds, dtype=float)
    if ((thresholds < 0) | (thresholds > 1)).any():
        raise ConfigError("thresholds must lie in [0, 1]")
    _, probs = forward(model, X)
    if thresholds.shape != (probs.shape[1],):
        raise ConfigError(f"need one threshold per treatment ({probs.shape[1]})")
    qualified = probs >= thresholds[None, :]
    masked = np.where(qualified, probs, -np.inf)
    out = np.argmax(masked, axis=1)
    fallback = ~qualified.any(axis=1)
    if fallback.any():
        out[fallback] = np.argmax(probs[fallback], axis=1)
    return out


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------

def grad_check(model: PnnModel, X: np.ndarray, gamma: np.ndarray, direction: str = "minimize", step: float = 1e-5) -> float:
    """Max relative error between analytic and central finite-difference
    gradients of the policy loss over every parameter."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    g_signed = _signed_rewards(gamma, direction)
    _, grads_W, grads_b = _backward(model, X, g_signed)

    worst = 0.0

    def probe(param: np.ndarray, analytic: np.ndarray):
        nonlocal worst
        flat = param.ravel()
        a_flat = analytic.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = policy_loss(model, X, gamma, direction)
            flat[i] = orig - step
            down = policy_loss(model, X, gamma, direction)
            flat[i] = orig
            numeric = (up - down) / (2 * step)
            denom = max(abs(a_flat[i]), abs(numeric), 1e-3)
            worst = max(worst, abs(a_flat[i] - numeric) / denom)

    for W, gW in zip(model.weights, grads_W):
        probe(W, gW)
    for b, gB in zip(model.biases, grads_b):
        probe(b, gB)
    return worst


def reward_gradients(model: PnnModel, X: np.ndarray, gamma: np.ndarray, direction: str = "minimize"):
    """Analytic gradients (per weight matrix and bias) for inspection."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    _, gW, gB = _backward(model, X, _signed_rewards(gamma, direction))
    return gW, gB


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def model_to_json(model: PnnModel) -> str:
    cfg = asdict(model.config)
    cfg["hidden"] = list(model.config.hidden)
    return json.dumps(
        {
            "layer_widths": [model.n_inputs] + [W.shape[1] for W in model.weights],
            "weights": [W.ravel().tolist() for W in model.weights],
            "biases": [b.tolist() for b in model.biases],
            "activation": model.config.activation,
            "config": cfg,
        },
        sort_keys=True,
    )


def model_from_json(text: str) -> PnnModel:
    obj = json.loads(text)
    cfg = dict(obj["config"])
    cfg["hidden"] = tuple(cfg["hidden"])
    config = PnnConfig(**cfg)
    widths = obj["layer_widths"]
    weights = [
        np.array(flat, dtype=float).reshape(widths[l], widths[l + 1])
        for l, flat in enumerate(obj["weights"])
    ]
    biases = [np.array(b, dtype=float) for b in obj["biases"]]
    return PnnModel(weights, biases, config)


def trace_to_csv(trace: TrainTrace) -> str:
    lines = ["epoch,train_loss,val_loss"]
    for e, (tl, vl) in enumerate(zip(trace.train_loss, trace.val_loss), start=1):
        lines.append(f"{e},{tl!r},{vl!r}")
    return "\n".join(lines) + "\n"
