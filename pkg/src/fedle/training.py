"""Client-side local training and server-side FedAvg aggregation."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import nn
from .errors import ContractViolation, InvalidInputError, ShapeError
from .nn import Batch, ModelParams


def local_train(
    data: Batch,
    global_model: ModelParams,
    epochs: int,
    lr: float,
    batch_size: int,
    rng: np.random.Generator,
) -> tuple[ModelParams, int]:
    """Minibatch SGD from a copy of ``global_model``, reshuffling every epoch."""
    n = len(data)
    if n == 0:
        raise ContractViolation("client has no training data")
    model = global_model
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            ix = order[start:start + batch_size]
            _, grads = nn.loss_and_grad(model, Batch(data.inputs[ix], data.labels[ix]))
            model = nn.sgd_step(model, grads, lr)
    return model, n


def aggregate(updates: Sequence[tuple[ModelParams, int]]) -> ModelParams:
    """Sample-count weighted parameter average."""
    if not updates:
        raise InvalidInputError("nothing to aggregate")
    first = updates[0][0]
    for model, _ in updates[1:]:
        if not first.same_shape(model):
            raise ShapeError("client models have different shapes")
    counts = np.array([n for _, n in updates], dtype=np.float64)
    if np.any(counts <= 0):
        raise InvalidInputError("sample counts must be positive")
    weights = counts / counts.sum()
    layers = []
    for li in range(len(first.layers)):
        w = sum(wt * m.layers[li][0] for wt, (m, _) in zip(weights, updates))
        b = sum(wt * m.layers[li][1] for wt, (m, _) in zip(weights, updates))
        layers.append((w, b))
    return ModelParams(tuple(layers))
