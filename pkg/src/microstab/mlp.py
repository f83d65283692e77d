"""From-scratch MLP mapping predicted trajectories to a control value.

Three hidden ReLU layers of 64 units by default; scalar linear output,
saturated to the admissible control box at inference. Training is plain
minibatch Adam on mean-squared error with seeded shuffling, so identical
seeds and data reproduce identical weights bit for bit.
"""

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InvariantViolation, ParseError, VersionMismatch
from .predictor import prediction_features

MODEL_FORMAT_VERSION = 1
DEFAULT_HIDDEN = (64, 64, 64)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 200
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    validation_fraction: float = 0.1
    patience: int = 10

    def __post_init__(self):
        if min(self.learning_rate, self.batch_size, self.max_epochs, self.eps, self.patience) <= 0:
            raise ValueError("training parameters must be positive")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in (0, 1)")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("Adam betas must be in [0, 1)")


@dataclass
class MlpModel:
    """Weights, biases, and input-normalization statistics of the controller."""

    layer_dims: list
    weights: list  # per layer, shape (fan_in, fan_out)
    biases: list  # per layer, shape (fan_out,)
    input_mean: np.ndarray
    input_std: np.ndarray
    u_max: float
    decimation: int = 1

    @property
    def input_dim(self):
        return self.layer_dims[0]

    def copy_parameters(self):
        return [w.copy() for w in self.weights], [b.copy() for b in self.biases]


def init_model(layer_dims, seed, u_max=0.2, decimation=1):
    """He-style initialized model: W ~ N(0, 2/fan_in), zero biases.

    Normalization statistics start at identity and are fitted by train().
    """
    layer_dims = [int(d) for d in layer_dims]
    if len(layer_dims) < 2 or min(layer_dims) < 1:
        raise ValueError("layer_dims needs at least input and output sizes")
    if layer_dims[-1] != 1:
        raise ValueError("output layer must be scalar")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        scale = np.sqrt(2.0 / fan_in)
        weights.append(rng.standard_normal((fan_in, fan_out)) * scale)
        biases.append(np.zeros(fan_out))
    return MlpModel(
        layer_dims=layer_dims,
        weights=weights,
        biases=biases,
        input_mean=np.zeros(layer_dims[0]),
        input_std=np.ones(layer_dims[0]),
        u_max=float(u_max),
        decimation=int(decimation),
    )


def _forward_cached(model, x):
    """Activations of every layer; input arrives already shaped (n, d)."""
    z = (x - model.input_mean) / model.input_std
    activations = [z]
    n_layers = len(model.weights)
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = z @ w + b
        if i < n_layers - 1:
            z = np.maximum(z, 0.0)
        activations.append(z)
    return activations


def forward(model, features):
    """Network output (pre-saturation) for one feature vector or a batch."""
    x = np.asarray(features, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.input_dim:
        raise DimensionMismatch(f"expected {model.input_dim} features, got {x.shape[1]}")
    out = _forward_cached(model, x)[-1][:, 0]
    return float(out[0]) if single else out


def loss_and_grad(model, features, labels):
    """Mean-squared error over a batch and exact backpropagation gradients.

    The ReLU subgradient at exactly zero is taken as zero. Returns
    (mse, weight_grads, bias_grads) with gradient shapes matching the layers.
    """
    x = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.atleast_1d(np.asarray(labels, dtype=float))
    if len(x) != len(y) or len(y) == 0:
        raise ValueError("batch features and labels must be nonempty and aligned")
    acts = _forward_cached(model, x)
    preds = acts[-1][:, 0]
    err = preds - y
    mse = float(np.mean(err * err))
    n = len(y)
    delta = (2.0 / n) * err[:, None]  # d mse / d output
    w_grads = [None] * len(model.weights)
    b_grads = [None] * len(model.biases)
    for i in reversed(range(len(model.weights))):
        w_grads[i] = acts[i].T @ delta
        b_grads[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ model.weights[i].T
            delta = delta * (acts[i] > 0.0)
    return mse, w_grads, b_grads


@dataclass
class AdamState:
    m_w: list
    v_w: list
    m_b: list
    v_b: list
    step: int = 0


def init_adam_state(model):
    return AdamState(
        m_w=[np.zeros_like(w) for w in model.weights],
        v_w=[np.zeros_like(w) for w in model.weights],
        m_b=[np.zeros_like(b) for b in model.biases],
        v_b=[np.zeros_like(b) for b in model.biases],
    )


def adam_step(model, w_grads, b_grads, state, config):
    """One bias-corrected Adam update; mutates the model and state in place."""
    state.step += 1
    t = state.step
    lr = config.learning_rate
    b1, b2, eps = config.beta1, config.beta2, config.eps
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for i in range(len(model.weights)):
        for params, grads, m, v in (
            (model.weights[i], w_grads[i], state.m_w[i], state.v_w[i]),
            (model.biases[i], b_grads[i], state.m_b[i], state.v_b[i]),
        ):
            m *= b1
            m += (1.0 - b1) * grads
            v *= b2
            v += (1.0 - b2) * grads * grads
            params -= lr * (m / corr1) / (np.sqrt(v / corr2) + eps)
    return model, state


def train(model, features, labels, config):
    """Fit the model by minibatch Adam with early stopping on validation MSE.

    Normalization statistics are computed on the training split only;
    zero-variance features get their std clamped to 1 and are recorded in the
    report. The best-validation parameters are restored before returning.
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    if x.ndim != 2 or len(x) != len(y) or len(y) == 0:
        raise ValueError("training data must be a nonempty (n, d) matrix with n labels")
    if x.shape[1] != model.input_dim:
        raise DimensionMismatch(f"expected {model.input_dim} features, got {x.shape[1]}")
    start = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    n = len(y)
    perm = rng.permutation(n)
    n_val = min(max(1, round(config.validation_fraction * n)), n - 1)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    x_train, y_train = x[train_idx], y[train_idx]
    x_val, y_val = x[val_idx], y[val_idx]

    mean = x_train.mean(axis=0)
    std = x_train.std(axis=0)
    degenerate = np.flatnonzero(std == 0.0)
    std[degenerate] = 1.0
    model.input_mean = mean
    model.input_std = std

    state = init_adam_state(model)
    train_losses, val_losses = [], []
    best_val = np.inf
    best_epoch = 0
    best_params = model.copy_parameters()
    stall = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(y_train))
        batch_losses = []
        for lo in range(0, len(order), config.batch_size):
            sel = order[lo : lo + config.batch_size]
            mse, w_grads, b_grads = loss_and_grad(model, x_train[sel], y_train[sel])
            adam_step(model, w_grads, b_grads, state, config)
            batch_losses.append(mse)
        train_losses.append(float(np.mean(batch_losses)))
        val_pred = forward(model, x_val)
        val_mse = float(np.mean((val_pred - y_val) ** 2))
        val_losses.append(val_mse)
        if val_mse < best_val:
            best_val = val_mse
            best_epoch = epoch
            best_params = model.copy_parameters()
            stall = 0
        else:
            stall += 1
            if stall > config.patience:
                break
    model.weights, model.biases = best_params
    report = {
        "train_loss": train_losses,
        "val_loss": val_losses,
        "best_epoch": best_epoch,
        "best_val_mse": float(best_val),
        "epochs_run": len(train_losses),
        "degenerate_features": [int(i) for i in degenerate],
        "wall_time_s": time.perf_counter() - start,
    }
    return model, report


def saturate(model, u):
    return min(max(float(u), -model.u_max), model.u_max)


def infer(model, predicted):
    """Control value for a predicted trajectory, saturated to the box."""
    features = prediction_features(predicted, model.decimation)
    if len(features) != model.input_dim:
        raise DimensionMismatch(
            f"prediction flattens to {len(features)} features, model expects {model.input_dim}"
        )
    return saturate(model, forward(model, features))


def infer_features(model, features_matrix):
    """Saturated outputs for a precomputed feature matrix (n, d)."""
    out = forward(model, np.atleast_2d(features_matrix))
    return np.clip(out, -model.u_max, model.u_max)


def save_model(model, path):
    """Persist the model as canonical JSON (round-trips bit-faithfully)."""
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "layer_dims": list(model.layer_dims),
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "input_mean": model.input_mean.tolist(),
        "input_std": model.input_std.tolist(),
        "u_max": model.u_max,
        "decimation": model.decimation,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_model(path):
    """Load a persisted model, validating format version and invariants."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"cannot parse model file {path}: {exc}") from exc
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise ParseError(f"model file {path} is missing the format_version field")
    if doc["format_version"] != MODEL_FORMAT_VERSION:
        raise VersionMismatch(
            f"model format {doc['format_version']} unsupported (expected {MODEL_FORMAT_VERSION})"
        )
    try:
        dims = [int(d) for d in doc["layer_dims"]]
        weights = [np.asarray(w, dtype=float) for w in doc["weights"]]
        biases = [np.asarray(b, dtype=float) for b in doc["biases"]]
        mean = np.asarray(doc["input_mean"], dtype=float)
        std = np.asarray(doc["input_std"], dtype=float)
        model = MlpModel(
            layer_dims=dims,
            weights=weights,
            biases=biases,
            input_mean=mean,
            input_std=std,
            u_max=float(doc["u_max"]),
            decimation=int(doc.get("decimation", 1)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"model file {path} has malformed fields: {exc}") from exc
    expected = list(zip(dims[:-1], dims[1:]))
    if len(weights) != len(expected) or len(biases) != len(expected):
        raise InvariantViolation("layer count does not match layer_dims")
    for (fan_in, fan_out), w, b in zip(expected, weights, biases):
        if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
            raise InvariantViolation(
                f"layer shape mismatch: expected {(fan_in, fan_out)}, got {w.shape}"
            )
    if mean.shape != (dims[0],) or std.shape != (dims[0],) or np.any(std <= 0):
        raise InvariantViolation("normalization statistics are inconsistent")
    if model.u_max <= 0 or model.decimation < 1:
        raise InvariantViolation("u_max must be positive and decimation >= 1")
    return model
