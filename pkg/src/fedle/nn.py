"""Small dense network (MLP) with softmax cross-entropy and plain SGD.

Everything runs in float64. Parameters are stored as ``(weight, bias)`` pairs
where ``weight`` has shape ``(out, in)``; a forward pass computes
``x @ weight.T + bias`` per layer with ReLU between layers and no activation
after the last one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError, InvalidInputError, ShapeError


@dataclass(frozen=True)
class ModelParams:
    layers: tuple[tuple[np.ndarray, np.ndarray], ...]

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("model has no layers")
        for idx, (w, b) in enumerate(self.layers):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ShapeError(f"layer {idx}: weight {w.shape} and bias {b.shape} disagree")
            if idx and w.shape[1] != self.layers[idx - 1][0].shape[0]:
                raise ShapeError(
                    f"layer {idx} expects {w.shape[1]} inputs but layer {idx - 1} "
                    f"produces {self.layers[idx - 1][0].shape[0]}"
                )

    @property
    def layer_dims(self) -> list[int]:
        return [self.layers[0][0].shape[1]] + [w.shape[0] for w, _ in self.layers]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)

    def copy(self) -> "ModelParams":
        return ModelParams(tuple((w.copy(), b.copy()) for w, b in self.layers))

    def map(self, fn) -> "ModelParams":
        return ModelParams(tuple((fn(w), fn(b)) for w, b in self.layers))

    def same_shape(self, other: "ModelParams") -> bool:
        return len(self.layers) == len(other.layers) and all(
            w.shape == ow.shape and b.shape == ob.shape
            for (w, b), (ow, ob) in zip(self.layers, other.layers)
        )


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.inputs.ndim != 2:
            raise ShapeError(f"inputs must be 2-D, got shape {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ShapeError(
                f"{self.inputs.shape[0]} inputs but labels have shape {self.labels.shape}"
            )

    def __len__(self) -> int:
        return self.inputs.shape[0]


def init_model(layer_dims, seed: int) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases."""
    dims = list(layer_dims)
    if len(dims) < 2:
        raise InvalidConfigError(f"need at least input and output dims, got {dims}")
    if any(int(d) != d or d < 1 for d in dims):
        raise InvalidConfigError(f"layer dims must be positive integers, got {dims}")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append((w, np.zeros(fan_out)))
    return ModelParams(tuple(layers))


def _check_width(model: ModelParams, inputs: np.ndarray) -> None:
    width = model.layers[0][0].shape[1]
    if inputs.ndim != 2 or inputs.shape[1] != width:
        raise ShapeError(f"model expects inputs of width {width}, got shape {inputs.shape}")


def forward(model: ModelParams, inputs: np.ndarray) -> np.ndarray:
    _check_width(model, inputs)
    h = np.asarray(inputs, dtype=np.float64)
    last = len(model.layers) - 1
    for idx, (w, b) in enumerate(model.layers):
        h = h @ w.T + b
        if idx < last:
            h = np.maximum(h, 0.0)
    return h


def _softmax_xent(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    n = logits.shape[0]
    loss = -log_probs[np.arange(n), labels].mean()
    dlogits = np.exp(log_probs)
    dlogits[np.arange(n), labels] -= 1.0
    return float(loss), dlogits / n


def loss_and_grad(model: ModelParams, batch: Batch) -> tuple[float, ModelParams]:
    """Mean cross-entropy over the batch and its exact gradient."""
    _check_width(model, batch.inputs)
    n_classes = model.layers[-1][0].shape[0]
    labels = np.asarray(batch.labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ShapeError(f"labels must lie in [0, {n_classes})")

    activations = [np.asarray(batch.inputs, dtype=np.float64)]
    last = len(model.layers) - 1
    for idx, (w, b) in enumerate(model.layers):
        z = activations[-1] @ w.T + b
        activations.append(np.maximum(z, 0.0) if idx < last else z)

    loss, delta = _softmax_xent(activations[-1], labels)
    grads: list[tuple[np.ndarray, np.ndarray]] = []
    for idx in range(last, -1, -1):
        w, _ = model.layers[idx]
        a_in = activations[idx]
        grads.append((delta.T @ a_in, delta.sum(axis=0)))
        if idx:
            # ReLU subgradient at 0 is taken as 0
            delta = (delta @ w) * (a_in > 0.0)
    grads.reverse()
    return loss, ModelParams(tuple(grads))


def sgd_step(model: ModelParams, grads: ModelParams, lr: float) -> ModelParams:
    if lr < 0:
        raise InvalidConfigError(f"learning rate must be non-negative, got {lr}")
    if not model.same_shape(grads):
        raise ShapeError("gradient shapes do not match the model")
    return ModelParams(
        tuple((w - lr * gw, b - lr * gb) for (w, b), (gw, gb) in zip(model.layers, grads.layers))
    )


def flatten(model: ModelParams) -> np.ndarray:
    """All parameters, layer by layer, each layer as weight (row-major) then bias."""
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in model.layers])


def flatten_partial(model: ModelParams) -> np.ndarray:
    """First layer's weight+bias followed by the last layer's weight+bias.

    A single-layer model contributes its only layer once.
    """
    (w0, b0), (wl, bl) = model.layers[0], model.layers[-1]
    if len(model.layers) == 1:
        return np.concatenate([w0.ravel(), b0])
    return np.concatenate([w0.ravel(), b0, wl.ravel(), bl])


def predict(model: ModelParams, inputs: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximal index, i.e. ties go to the lowest class
    return np.argmax(forward(model, inputs), axis=1)


def evaluate(model: ModelParams, test: Batch) -> float:
    if len(test) == 0:
        raise InvalidInputError("cannot evaluate on an empty test set")
    return float(np.mean(predict(model, test.inputs) == test.labels))
