"""Minimal dense neural-network core.

Plain numpy implementation of forward/backward passes, mse and
cross-entropy losses, mini-batch SGD with early stopping, and k-fold
cross validation.  Single-threaded and deterministic for a fixed seed.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DivergenceError,
    FormatError,
    ParameterError,
    ShapeError,
    StateError,
    ValidationError,
)

ACTIVATIONS = ("linear", "relu", "sigmoid", "tanh", "softmax")
LOSS_KINDS = ("mse", "cross_entropy")

MODEL_MAGIC = b"RSNN"
MODEL_VERSION = 1
_ACT_TAGS = {name: i for i, name in enumerate(ACTIVATIONS)}
_TAG_ACTS = {i: name for name, i in _ACT_TAGS.items()}


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    ez = np.exp(shifted)
    return ez / ez.sum(axis=1, keepdims=True)


def _apply_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "linear":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return _sigmoid(z)
    if name == "tanh":
        return np.tanh(z)
    if name == "softmax":
        return _softmax(z)
    raise ParameterError(f"unknown activation {name!r}")


def _activation_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """d activation / d z, given pre-activation z and post-activation a."""
    if name == "linear":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "tanh":
        return 1.0 - a**2
    raise ParameterError(f"no elementwise gradient for activation {name!r}")


@dataclass
class DenseLayer:
    """Fully connected layer: ``weights`` is out x in, ``biases`` length out."""

    weights: np.ndarray
    biases: np.ndarray
    activation: str

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ShapeError(f"weights must be 2-D, got shape {self.weights.shape}")
        if self.biases.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"biases shape {self.biases.shape} does not match {self.weights.shape[0]} outputs"
            )
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.biases))):
            raise ValidationError("layer parameters contain non-finite values")
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def clone(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.biases.copy(), self.activation)


@dataclass
class NeuralModel:
    """Ordered stack of dense layers with one dropout rate for hidden units."""

    layers: list[DenseLayer]
    dropout_rate: float = 0.0

    def __post_init__(self) -> None:
        if not self.layers:
            raise ValidationError("a model needs at least one layer")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ParameterError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeError(
                    f"layer sizes do not chain: {prev.out_dim} outputs feed {nxt.in_dim} inputs"
                )
        for layer in self.layers[:-1]:
            if layer.activation == "softmax":
                raise ValidationError("softmax is only allowed as the final layer")

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def clone(self) -> "NeuralModel":
        return NeuralModel([l.clone() for l in self.layers], self.dropout_rate)


def init_layer(in_dim: int, out_dim: int, activation: str, rng: np.random.Generator) -> DenseLayer:
    """Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    limit = math.sqrt(6.0 / (in_dim + out_dim))
    weights = rng.uniform(-limit, limit, size=(out_dim, in_dim))
    return DenseLayer(weights=weights, biases=np.zeros(out_dim), activation=activation)


@dataclass
class ForwardPass:
    """Everything a backward pass needs from one forward evaluation."""

    model: NeuralModel
    mode: str
    layer_inputs: list[np.ndarray]      # [batch, then post-dropout activations]
    pre_activations: list[np.ndarray]
    activations: list[np.ndarray]       # pre-dropout post-activations
    masks: list[np.ndarray | None]

    @property
    def outputs(self) -> np.ndarray:
        return self.activations[-1]


def forward(
    model: NeuralModel,
    batch: np.ndarray,
    mode: str = "infer",
    rng: np.random.Generator | None = None,
) -> ForwardPass:
    """Run a batch through the model, recording per-layer activations.

    In ``train`` mode, inverted-scaling dropout masks (keep probability
    ``1 - dropout_rate``) are drawn for every hidden activation and
    recorded; ``infer`` mode applies no dropout.

    Raises:
        ShapeError: batch is not 2-D or its width mismatches the model.
        ParameterError: unknown mode.
    """
    if mode not in ("train", "infer"):
        raise ParameterError(f"mode must be 'train' or 'infer', got {mode!r}")
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2:
        raise ShapeError(f"batch must be 2-D (samples x features), got shape {batch.shape}")
    if batch.shape[1] != model.input_dim:
        raise ShapeError(
            f"batch width {batch.shape[1]} does not match model input {model.input_dim}"
        )
    dropping = mode == "train" and model.dropout_rate > 0.0
    if dropping and rng is None:
        rng = np.random.default_rng()

    layer_inputs = [batch]
    pre_activations: list[np.ndarray] = []
    activations: list[np.ndarray] = []
    masks: list[np.ndarray | None] = []
    current = batch
    last = len(model.layers) - 1
    for i, layer in enumerate(model.layers):
        z = current @ layer.weights.T + layer.biases
        a = _apply_activation(layer.activation, z)
        pre_activations.append(z)
        activations.append(a)
        if dropping and i < last:
            keep = 1.0 - model.dropout_rate
            mask = (rng.random(a.shape) < keep).astype(np.float64) / keep
            masks.append(mask)
            current = a * mask
        else:
            masks.append(None)
            current = a
        if i < last:
            layer_inputs.append(current)
    return ForwardPass(
        model=model,
        mode=mode,
        layer_inputs=layer_inputs,
        pre_activations=pre_activations,
        activations=activations,
        masks=masks,
    )


def loss(kind: str, predictions: np.ndarray, targets: np.ndarray) -> float:
    """Scalar loss: ``mse`` over all entries, or mean ``cross_entropy``.

    Cross-entropy expects softmax outputs and one-hot targets; the true
    class probability is clamped below at 1e-12 before the log.

    Raises:
        ShapeError: predictions and targets differ in shape.
        ParameterError: unknown loss kind.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ShapeError(
            f"predictions shape {predictions.shape} != targets shape {targets.shape}"
        )
    if kind == "mse":
        return float(np.mean((predictions - targets) ** 2))
    if kind == "cross_entropy":
        true_prob = np.maximum((predictions * targets).sum(axis=1), 1e-12)
        return float(np.mean(-np.log(true_prob)))
    raise ParameterError(f"loss kind must be one of {LOSS_KINDS}, got {kind!r}")


def backward(
    model: NeuralModel,
    pass_data: ForwardPass,
    targets: np.ndarray,
    loss_kind: str,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Exact gradients of the loss w.r.t. every weight and bias.

    Respects the dropout masks recorded by the matching forward call.

    Returns:
        One ``(d_weights, d_biases)`` pair per layer, same shapes as the
        parameters.

    Raises:
        StateError: the pass belongs to another model, or masks are missing.
        ShapeError: target shape mismatch.
        ValidationError: unsupported loss/output-activation pairing.
    """
    if pass_data.model is not model:
        raise StateError("forward pass was recorded for a different model")
    if model.dropout_rate > 0.0 and pass_data.mode != "train":
        raise StateError("backward needs a train-mode forward pass when dropout is active")
    targets = np.asarray(targets, dtype=np.float64)
    outputs = pass_data.outputs
    if targets.shape != outputs.shape:
        raise ShapeError(f"targets shape {targets.shape} != outputs shape {outputs.shape}")
    n = outputs.shape[0]
    final = model.layers[-1]
    if loss_kind == "cross_entropy":
        if final.activation != "softmax":
            raise ValidationError("cross_entropy requires a softmax output layer")
        delta = (outputs - targets) / n
    elif loss_kind == "mse":
        if final.activation == "softmax":
            raise ValidationError("mse with a softmax output layer is not supported")
        d_out = 2.0 * (outputs - targets) / outputs.size
        delta = d_out * _activation_grad(
            final.activation, pass_data.pre_activations[-1], outputs
        )
    else:
        raise ParameterError(f"loss kind must be one of {LOSS_KINDS}, got {loss_kind!r}")

    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(model.layers)  # type: ignore
    for i in range(len(model.layers) - 1, -1, -1):
        grads[i] = (delta.T @ pass_data.layer_inputs[i], delta.sum(axis=0))
        if i == 0:
            break
        d_hidden = delta @ model.layers[i].weights
        mask = pass_data.masks[i - 1]
        if mask is not None:
            d_hidden = d_hidden * mask
        delta = d_hidden * _activation_grad(
            model.layers[i - 1].activation,
            pass_data.pre_activations[i - 1],
            pass_data.activations[i - 1],
        )
    return grads


@dataclass(frozen=True)
class TrainConfig:
    """Mini-batch SGD settings with early stopping and CV fold count."""

    batch_size: int = 32
    learning_rate: float = 0.01
    max_epochs: int = 200
    patience: int = 10
    min_delta: float = 1e-4
    seed: int = 0
    folds: int = 10

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0.0:
            raise ParameterError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.max_epochs < 0:
            raise ParameterError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.patience < 1:
            raise ParameterError(f"patience must be >= 1, got {self.patience}")
        if self.min_delta < 0.0:
            raise ParameterError(f"min_delta must be >= 0, got {self.min_delta}")
        if self.folds < 2:
            raise ParameterError(f"folds must be >= 2, got {self.folds}")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float


def _sgd_step(model: NeuralModel, grads, learning_rate: float) -> None:
    for layer, (dw, db) in zip(model.layers, grads):
        layer.weights -= learning_rate * dw
        layer.biases -= learning_rate * db


def _snapshot(model: NeuralModel) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(l.weights.copy(), l.biases.copy()) for l in model.layers]


def _restore(model: NeuralModel, snapshot) -> None:
    for layer, (w, b) in zip(model.layers, snapshot):
        layer.weights = w.copy()
        layer.biases = b.copy()


def train(
    model: NeuralModel,
    inputs: np.ndarray,
    targets: np.ndarray,
    cfg: TrainConfig,
    loss_kind: str,
    validation: tuple[np.ndarray, np.ndarray] | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[NeuralModel, list[EpochStats]]:
    """Mini-batch SGD with per-epoch shuffling and early stopping.

    The input model is left untouched; a trained copy is returned.  The
    monitored quantity is the validation loss when ``validation`` is given,
    otherwise the training loss.  When no improvement beyond
    ``cfg.min_delta`` occurs for ``cfg.patience`` epochs, training stops
    and the best-monitored parameters are restored.

    Raises:
        DivergenceError: a non-finite loss shows up (reports the epoch).
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if inputs.ndim != 2 or targets.ndim != 2 or inputs.shape[0] != targets.shape[0]:
        raise ShapeError(
            f"inputs {inputs.shape} and targets {targets.shape} must be 2-D with equal row counts"
        )
    if inputs.shape[0] == 0:
        raise ValidationError("training needs at least one sample")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)

    model = model.clone()
    history: list[EpochStats] = []
    best_monitor = math.inf
    best_params = None
    stale_epochs = 0
    n = inputs.shape[0]

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch_idx = order[start : start + cfg.batch_size]
            fp = forward(model, inputs[batch_idx], mode="train", rng=rng)
            grads = backward(model, fp, targets[batch_idx], loss_kind)
            _sgd_step(model, grads, cfg.learning_rate)

        train_loss = loss(loss_kind, forward(model, inputs).outputs, targets)
        if validation is not None:
            val_loss = loss(loss_kind, forward(model, validation[0]).outputs, validation[1])
        else:
            val_loss = train_loss
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise DivergenceError(f"non-finite loss at epoch {epoch}")
        history.append(EpochStats(epoch=epoch, train_loss=train_loss, val_loss=val_loss))

        if val_loss < best_monitor - cfg.min_delta:
            best_monitor = val_loss
            best_params = _snapshot(model)
            stale_epochs = 0
        else:
            stale_epochs += 1
            if stale_epochs >= cfg.patience:
                break

    if best_params is not None:
        _restore(model, best_params)
    return model, history


@dataclass
class CVReport:
    """Per-fold validation metrics from k-fold cross validation."""

    fold_val_losses: list[float]
    fold_val_accuracies: list[float] | None
    mean_val_loss: float
    mean_val_accuracy: float | None
    best_fold: int

    def to_dict(self) -> dict:
        return {
            "fold_val_losses": self.fold_val_losses,
            "fold_val_accuracies": self.fold_val_accuracies,
            "mean_val_loss": self.mean_val_loss,
            "mean_val_accuracy": self.mean_val_accuracy,
            "best_fold": self.best_fold,
        }


def cross_validate(
    model_template: NeuralModel,
    inputs: np.ndarray,
    targets: np.ndarray,
    cfg: TrainConfig,
    loss_kind: str,
) -> tuple[CVReport, NeuralModel]:
    """Seeded k-fold cross validation; returns the best fold's model.

    The fold partition is a seeded shuffle split into ``cfg.folds`` nearly
    equal parts.  Every fold trains a fresh clone of the template; the
    model from the fold with the lowest validation loss is returned.  For
    cross-entropy the report also carries per-fold validation accuracies.

    Raises:
        ValidationError: fewer samples than folds.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n = inputs.shape[0]
    if n < cfg.folds:
        raise ValidationError(f"{n} samples cannot be split into {cfg.folds} folds")

    seed_seq = np.random.SeedSequence(cfg.seed)
    partition_rng = np.random.default_rng(seed_seq.spawn(1)[0])
    fold_rng_seeds = seed_seq.spawn(cfg.folds)
    order = partition_rng.permutation(n)
    fold_chunks = np.array_split(order, cfg.folds)

    fold_losses: list[float] = []
    fold_accuracies: list[float] = []
    fold_models: list[NeuralModel] = []
    for f, val_idx in enumerate(fold_chunks):
        train_idx = np.concatenate([c for j, c in enumerate(fold_chunks) if j != f])
        fold_model, _ = train(
            model_template,
            inputs[train_idx],
            targets[train_idx],
            cfg,
            loss_kind,
            validation=(inputs[val_idx], targets[val_idx]),
            rng=np.random.default_rng(fold_rng_seeds[f]),
        )
        val_out = forward(fold_model, inputs[val_idx]).outputs
        fold_losses.append(loss(loss_kind, val_out, targets[val_idx]))
        if loss_kind == "cross_entropy":
            hits = np.argmax(val_out, axis=1) == np.argmax(targets[val_idx], axis=1)
            fold_accuracies.append(float(np.mean(hits)))
        fold_models.append(fold_model)

    best_fold = int(np.argmin(fold_losses))
    report = CVReport(
        fold_val_losses=fold_losses,
        fold_val_accuracies=fold_accuracies if loss_kind == "cross_entropy" else None,
        mean_val_loss=float(np.mean(fold_losses)),
        mean_val_accuracy=(
            float(np.mean(fold_accuracies)) if loss_kind == "cross_entropy" else None
        ),
        best_fold=best_fold,
    )
    return report, fold_models[best_fold]


def save_model(model: NeuralModel, path: str | Path) -> None:
    """Write the self-describing binary container (little-endian, float32)."""
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<BfI", MODEL_VERSION, model.dropout_rate, len(model.layers)))
        for layer in model.layers:
            fh.write(
                struct.pack("<IIB", layer.out_dim, layer.in_dim, _ACT_TAGS[layer.activation])
            )
            fh.write(layer.weights.astype("<f4").tobytes())
            fh.write(layer.biases.astype("<f4").tobytes())


def load_model(path: str | Path) -> NeuralModel:
    """Read a model container written by :func:`save_model`.

    Raises:
        FormatError: bad magic, version, or activation tag.
        OSError: truncated file.
    """
    data = Path(path).read_bytes()
    if data[:4] != MODEL_MAGIC:
        raise FormatError("not a model container: bad magic")
    if len(data) < 4 + 9:
        raise OSError("truncated model container header")
    version, dropout_rate, layer_count = struct.unpack_from("<BfI", data, 4)
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model container version {version}")
    pos = 13
    layers = []
    for _ in range(layer_count):
        if pos + 9 > len(data):
            raise OSError("truncated model container: incomplete layer header")
        out_dim, in_dim, tag = struct.unpack_from("<IIB", data, pos)
        pos += 9
        if tag not in _TAG_ACTS:
            raise FormatError(f"unknown activation tag {tag}")
        w_bytes = out_dim * in_dim * 4
        b_bytes = out_dim * 4
        if pos + w_bytes + b_bytes > len(data):
            raise OSError("truncated model container: incomplete layer data")
        weights = np.frombuffer(data, dtype="<f4", count=out_dim * in_dim, offset=pos)
        pos += w_bytes
        biases = np.frombuffer(data, dtype="<f4", count=out_dim, offset=pos)
        pos += b_bytes
        layers.append(
            DenseLayer(
                weights=weights.astype(np.float64).reshape(out_dim, in_dim),
                biases=biases.astype(np.float64),
                activation=_TAG_ACTS[tag],
            )
        )
    return NeuralModel(layers=layers, dropout_rate=float(dropout_rate))
